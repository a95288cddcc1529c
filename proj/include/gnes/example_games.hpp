#pragma once

// Built-in games: a two-player bilinear game with affine constraints, and a
// gas-lifted oil field where four wells maximize their extraction rate under a
// shared injection budget while four companion players tune the dither
// amplitudes to cancel the rate oscillations pairwise. Includes the helpers the
// oil scenarios need: rate evaluation on dithered inputs, a positive
// semidefiniteness probe for the pseudogradient Jacobian, and an independent
// projected-gradient solver for the constrained rate optimum.

#include "gnes/adaptive.hpp"
#include "gnes/game.hpp"
#include "gnes/hds.hpp"
#include "gnes/zeroth_order.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnes {

/// Two players with costs (u1 - 2)(u2 + 3) and its negative, constraints
/// u2 + 1 <= u1 and u2 <= 3, unit step gains. The pseudogradient is monotone
/// (a rotation plus constant) and the first-order conditions pin down a unique
/// point with both duals at zero.
inline Game two_player_monotone() {
  Game game;
  game.name = "two_player_monotone";
  game.dims = {1, 1};
  game.costs = {
      [](const Vec& u) { return (u[0] - 2.0) * (u[1] + 3.0); },
      [](const Vec& u) { return -(u[0] - 2.0) * (u[1] + 3.0); },
  };
  game.cost_gradients = {
      [](const Vec& u) { return Vec::Constant(1, u[1] + 3.0).eval(); },
      [](const Vec& u) { return Vec::Constant(1, 2.0 - u[0]).eval(); },
  };
  game.constraints = {
      {[](const Vec& u) { return u[1] + 1.0 - u[0]; },
       [](const Vec&) { return (Vec(2) << -1.0, 1.0).finished(); }},
      {[](const Vec& u) { return u[1] - 3.0; },
       [](const Vec&) { return (Vec(2) << 0.0, 1.0).finished(); }},
  };
  game.gamma = Vec::Ones(2);
  return game;
}

/// Gain schedule used by the two-player measurement scenarios.
inline AdaptiveParams two_player_adaptive_defaults() {
  return {/*k_min=*/1.0, /*k_max=*/100.0, /*c=*/10.0, /*epsilon=*/0.1};
}

/// Dither and filter tuning for the two-player measurement scenarios: both
/// players estimated, amplitudes 0.1, integer frequencies 11 and 21.
inline EsParams two_player_es_defaults() {
  EsParams p;
  p.nu = Vec::Constant(2, 0.2);
  p.eps = Vec::Constant(2, 0.2);
  p.nu0 = 0.2;
  p.eps0 = 0.2;
  p.estimated = {true, true};
  p.amplitudes = {{0.1, -1}, {0.1, -1}};
  p.frequencies = (Vec(2) << 11.0, 21.0).finished();
  p.phases = Vec::Zero(2);
  p.signs = Vec::Ones(2);
  p.adaptive = two_player_adaptive_defaults();
  return p;
}

/// Quartic well rate curves and the shared-budget constraint of the oil field,
/// plus the amplitude players' tuning: pair-mismatch weight l and the
/// log-barrier keeping amplitudes in (a_min, a_max) with base p.
struct OilParams {
  // Rate polynomial of well i: c4 x^4 + c3 x^3 + c2 x^2 + c1 x + c0.
  std::array<std::array<double, 5>, 4> wells = {{
      {-3.9e-7, 2.1e-4, -0.043, 3.7, 12.0},
      {-1.3e-7, 1.0e-4, -0.028, 3.1, -17.0},
      {-1.2e-7, 1.0e-4, -0.028, 2.5, -16.0},
      {-4.0e-7, 1.8e-4, -0.036, 3.5, 10.0},
  }};
  std::array<double, 4> b = {1.0, 2.0, 3.0, 4.0};
  double x_max = 200.0;
  double l = 10.0;
  double a_min = 5.0;
  double a_max = 10.0;
  double p = 100.0;
  double gamma = 10.0;
};

inline double well_rate(const OilParams& params, int well, double x) {
  const auto& c = params.wells[static_cast<std::size_t>(well)];
  return (((c[0] * x + c[1]) * x + c[2]) * x + c[3]) * x + c[4];
}

inline double well_rate_slope(const OilParams& params, int well, double x) {
  const auto& c = params.wells[static_cast<std::size_t>(well)];
  return ((4.0 * c[0] * x + 3.0 * c[1]) * x + 2.0 * c[2]) * x + c[3];
}

/// Sum of the four well rates at injection vector x (first four entries).
inline double total_rate(const OilParams& params, const Vec& x) {
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) sum += well_rate(params, i, x[i]);
  return sum;
}

namespace detail {

inline double barrier_value(const OilParams& p, double a) {
  const double arg = (a - p.a_min) * (p.a_max - a);
  if (!(arg > 0.0)) {
    throw AmplitudeOutOfRange("amplitude " + std::to_string(a) +
                              " left the barrier interval");
  }
  return -std::log(arg) / std::log(p.p);
}

inline double barrier_slope(const OilParams& p, double a) {
  return -(1.0 / (a - p.a_min) - 1.0 / (p.a_max - a)) / std::log(p.p);
}

/// Pair mismatch e = slope_j a_j - slope_i a_i for the pair (i, j) of `pair`.
inline double pair_mismatch(const OilParams& p, const Vec& u, int pair) {
  const int i = 2 * pair;
  const int j = 2 * pair + 1;
  return well_rate_slope(p, j, u[j]) * u[4 + j] - well_rate_slope(p, i, u[i]) * u[4 + i];
}

}  // namespace detail

/// Eight players: wells 0..3 each maximize their own rate (cost -f_i(x_i)),
/// amplitude players 4..7 minimize the squared pair mismatch of first-order
/// rate oscillations plus a log barrier on their amplitude. One shared budget
/// constraint b . x <= x_max couples the wells. All step gains equal.
inline Game oil_extraction(const OilParams& params = {}) {
  Game game;
  game.name = "oil_extraction";
  game.dims = std::vector<int>(8, 1);
  for (int i = 0; i < 4; ++i) {
    game.costs.push_back(
        [params, i](const Vec& u) { return -well_rate(params, i, u[i]); });
    game.cost_gradients.push_back([params, i](const Vec& u) {
      return Vec::Constant(1, -well_rate_slope(params, i, u[i])).eval();
    });
  }
  for (int i = 0; i < 4; ++i) {
    const int pair = i / 2;
    game.costs.push_back([params, i, pair](const Vec& u) {
      const double e = detail::pair_mismatch(params, u, pair);
      return 0.5 * params.l * e * e + detail::barrier_value(params, u[4 + i]);
    });
    game.cost_gradients.push_back([params, i, pair](const Vec& u) {
      const double e = detail::pair_mismatch(params, u, pair);
      const double sign = (i % 2 == 0) ? -1.0 : 1.0;
      const double slope = well_rate_slope(params, i, u[i]);
      return Vec::Constant(1, sign * params.l * e * slope +
                                  detail::barrier_slope(params, u[4 + i]))
          .eval();
    });
  }
  game.constraints = {{[params](const Vec& u) {
                         double dot = 0.0;
                         for (int i = 0; i < 4; ++i) dot += params.b[i] * u[i];
                         return dot - params.x_max;
                       },
                       [params](const Vec&) {
                         Vec grad = Vec::Zero(8);
                         for (int i = 0; i < 4; ++i) grad[i] = params.b[i];
                         return grad;
                       }}};
  game.gamma = Vec::Constant(8, params.gamma);
  return game;
}

/// The comparison game without amplitude players: wells only, same budget.
inline Game oil_extraction_wells_only(const OilParams& params = {}) {
  Game game;
  game.name = "oil_extraction_wells_only";
  game.dims = std::vector<int>(4, 1);
  for (int i = 0; i < 4; ++i) {
    game.costs.push_back(
        [params, i](const Vec& u) { return -well_rate(params, i, u[i]); });
    game.cost_gradients.push_back([params, i](const Vec& u) {
      return Vec::Constant(1, -well_rate_slope(params, i, u[i])).eval();
    });
  }
  game.constraints = {{[params](const Vec& u) {
                         double dot = 0.0;
                         for (int i = 0; i < 4; ++i) dot += params.b[i] * u[i];
                         return dot - params.x_max;
                       },
                       [params](const Vec&) {
                         Vec grad = Vec::Zero(4);
                         for (int i = 0; i < 4; ++i) grad[i] = params.b[i];
                         return grad;
                       }}};
  game.gamma = Vec::Constant(4, params.gamma);
  return game;
}

/// Gain schedule of the oil scenarios: gains pinned at 10, wide band.
inline AdaptiveParams oil_adaptive_defaults() {
  return {/*k_min=*/10.0, /*k_max=*/10.0, /*c=*/2.0, /*epsilon=*/10.0};
}

/// Dither tuning of the oil scenarios: wells estimated at a shared frequency
/// of 1 rad per unit time, antiphase signs within each pair, quarter-turn
/// phase offset between the pairs. With `optimized_amplitudes` the well
/// dither amplitudes are read live from the amplitude players' coordinates;
/// otherwise they are fixed at `fixed_amplitude` (wells-only game).
inline EsParams oil_es_defaults(bool optimized_amplitudes,
                                double fixed_amplitude = 5.0) {
  EsParams p;
  const int n_players = optimized_amplitudes ? 8 : 4;
  p.nu = Vec::Constant(n_players, 0.1);
  p.eps = Vec::Constant(n_players, 0.01);
  p.nu0 = 0.1;
  p.eps0 = 0.01;
  p.estimated.assign(static_cast<std::size_t>(n_players), false);
  for (int i = 0; i < 4; ++i) p.estimated[static_cast<std::size_t>(i)] = true;
  p.amplitudes.clear();
  for (int i = 0; i < 4; ++i) {
    if (optimized_amplitudes) {
      p.amplitudes.push_back({0.0, 4 + i});
    } else {
      p.amplitudes.push_back({fixed_amplitude, -1});
    }
  }
  const double cycles = 1.0 / (2.0 * std::numbers::pi);  // 1 rad per unit time
  p.frequencies = Vec::Constant(4, cycles);
  p.phases = (Vec(4) << 0.0, 0.0, 0.5 * std::numbers::pi, 0.5 * std::numbers::pi)
                 .finished();
  p.signs = (Vec(4) << 1.0, -1.0, 1.0, -1.0).finished();
  p.allow_shared_frequencies = true;
  p.adaptive = oil_adaptive_defaults();
  return p;
}

/// Total rate evaluated on the dithered injections along a recorded arc; the
/// oscillator states stored in the arc reconstruct the applied inputs exactly.
struct RateSeries {
  std::vector<double> t;
  std::vector<double> rate;
};

inline RateSeries applied_rate_series(const OilParams& oil, const EsLayout& layout,
                                      const EsParams& es, const HybridArc& arc) {
  RateSeries series;
  series.t.reserve(arc.states.size());
  series.rate.reserve(arc.states.size());
  for (std::size_t i = 0; i < arc.states.size(); ++i) {
    const Vec input = perturbed_input(layout, es, arc.states[i]);
    series.t.push_back(arc.times[i].t);
    series.rate.push_back(total_rate(oil, input));
  }
  return series;
}

/// Finite-difference Jacobian of the pseudogradient at u.
inline Mat pseudogradient_jacobian_fd(const Game& game, const Vec& u,
                                      double step = 1e-5) {
  const int m = game.dim();
  Mat jac(m, m);
  Vec probe = u;
  for (int c = 0; c < m; ++c) {
    const double saved = probe[c];
    const double h = step * std::max(1.0, std::abs(saved));
    probe[c] = saved + h;
    const Vec hi = pseudogradient(game, probe);
    probe[c] = saved - h;
    const Vec lo = pseudogradient(game, probe);
    probe[c] = saved;
    jac.col(c) = (hi - lo) / (2.0 * h);
  }
  return jac;
}

/// Samples the symmetric part of the pseudogradient Jacobian over a box and
/// reports the smallest eigenvalue seen. Nonnegative (up to tolerance) across
/// the box is the numerical monotonicity certificate used by the oil checks.
struct PsdProbeReport {
  long n_samples = 0;
  double min_eigenvalue = 0.0;
  Vec worst_point;
  [[nodiscard]] bool passed(double tol = 1e-7) const { return min_eigenvalue >= -tol; }
};

inline PsdProbeReport psd_probe(const Game& game, const Box& box, long n_samples = 500,
                                std::uint64_t seed = 0) {
  if (box.lo.size() != game.dim() || box.hi.size() != game.dim()) {
    throw std::invalid_argument("psd_probe: box dimension mismatch");
  }
  std::mt19937_64 rng(seed);
  PsdProbeReport report;
  report.n_samples = n_samples;
  report.min_eigenvalue = std::numeric_limits<double>::infinity();
  for (long s = 0; s < n_samples; ++s) {
    const Vec u = sample_in_box(box, rng);
    const Mat jac = pseudogradient_jacobian_fd(game, u);
    const Mat sym = 0.5 * (jac + jac.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> eig(sym, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    if (lo < report.min_eigenvalue) {
      report.min_eigenvalue = lo;
      report.worst_point = u;
    }
  }
  return report;
}

namespace detail {

/// Euclidean projection onto {x >= 0, b . x <= cap}: shift along b until the
/// clipped point meets the budget, via bisection on the shift.
inline Vec project_to_budget(const Vec& x, const std::array<double, 4>& b, double cap) {
  Vec bvec(4);
  for (int i = 0; i < 4; ++i) bvec[i] = b[i];
  auto clipped = [&](double t) { return (x - t * bvec).cwiseMax(0.0).eval(); };
  if (bvec.dot(clipped(0.0)) <= cap) return clipped(0.0);
  double lo = 0.0;
  double hi = 1.0;
  while (bvec.dot(clipped(hi)) > cap) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (bvec.dot(clipped(mid)) > cap ? lo : hi) = mid;
  }
  return clipped(hi);
}

}  // namespace detail

/// Independent solver for the wells' constrained rate optimum: projected
/// gradient ascent on the total rate over {x >= 0, b . x <= x_max}.
struct RateOptimum {
  Vec x;
  double rate = 0.0;
  double multiplier = 0.0;  // common slope / b ratio at the optimum
};

inline RateOptimum projected_rate_optimum(const OilParams& params,
                                          long iterations = 200000,
                                          double step = 0.5) {
  Vec x = Vec::Constant(4, 10.0);
  for (long it = 0; it < iterations; ++it) {
    Vec grad(4);
    for (int i = 0; i < 4; ++i) grad[i] = well_rate_slope(params, i, x[i]);
    x = detail::project_to_budget(x + step * grad, params.b, params.x_max);
  }
  RateOptimum opt;
  opt.x = x;
  opt.rate = total_rate(params, x);
  double ratio = 0.0;
  for (int i = 0; i < 4; ++i) {
    ratio += well_rate_slope(params, i, x[i]) / params.b[i];
  }
  opt.multiplier = ratio / 4.0;
  return opt;
}

}  // namespace gnes
