#pragma once

// Measurement-only variant: players marked as estimated never see their cost
// gradient. Each of their coordinates carries an oscillator pair; the dither is
// added to the input of every cost evaluation and the same signal demodulates
// the measured cost into a pseudogradient estimate, smoothed by a first-order
// filter. Non-estimated players keep their analytic gradient. Gain and mode
// dynamics are those of the adaptive variant, time-scaled by nu0 * eps0; jumps
// leave the filter and oscillator states untouched.

#include "gnes/adaptive.hpp"
#include "gnes/full_info.hpp"
#include "gnes/game.hpp"
#include "gnes/hds.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnes {

class EsParamError : public std::runtime_error {
 public:
  explicit EsParamError(const std::string& what) : std::runtime_error(what) {}
};

class AmplitudeOutOfRange : public std::runtime_error {
 public:
  explicit AmplitudeOutOfRange(const std::string& what) : std::runtime_error(what) {}
};

/// Dither amplitude of one estimated coordinate: either a fixed value or read
/// live from a primal coordinate (state_coordinate >= 0), which lets another
/// player's decision variable act as the amplitude.
struct AmplitudeSource {
  double value = 0.1;
  int state_coordinate = -1;
};

/// Tuning of the measurement-based variant. `nu` and `eps` are per player;
/// `estimated` marks the players working from cost measurements. The remaining
/// arrays have one entry per estimated coordinate, in player order:
/// `frequencies` in cycles per unit time, `phases` as initial oscillator
/// angles, and `signs` (+-1) folded into the dither. Frequencies must be
/// pairwise distinct unless `allow_shared_frequencies` is set (then distinct
/// phases or signs must separate the coordinates).
struct EsParams {
  Vec nu;
  Vec eps;
  double nu0 = 0.2;
  double eps0 = 0.2;
  std::vector<bool> estimated;
  std::vector<AmplitudeSource> amplitudes;
  Vec frequencies;
  Vec phases;
  Vec signs;
  bool allow_shared_frequencies = false;
  AdaptiveParams adaptive;
};

/// Global coordinate indices of the estimated players' blocks, in order.
inline std::vector<int> estimated_coordinates(const Game& game,
                                              const std::vector<bool>& estimated) {
  std::vector<int> coords;
  for (int i = 0, off = 0; i < game.n_players(); off += game.dims[i], ++i) {
    if (estimated[static_cast<std::size_t>(i)]) {
      for (int c = 0; c < game.dims[i]; ++c) coords.push_back(off + c);
    }
  }
  return coords;
}

inline void validate_es_params(const Game& game, const EsParams& p) {
  const int n = game.n_players();
  if (p.nu.size() != n || p.eps.size() != n) {
    throw EsParamError("nu and eps need one entry per player");
  }
  if ((p.nu.array() <= 0.0).any() || (p.eps.array() <= 0.0).any()) {
    throw EsParamError("nu and eps must be positive");
  }
  if (!(p.nu0 > 0.0) || !(p.eps0 > 0.0)) {
    throw EsParamError("nu0 and eps0 must be positive");
  }
  if (static_cast<int>(p.estimated.size()) != n) {
    throw EsParamError("estimated needs one flag per player");
  }
  const std::vector<int> coords = estimated_coordinates(game, p.estimated);
  const int ne = static_cast<int>(coords.size());
  if (static_cast<int>(p.amplitudes.size()) != ne || p.frequencies.size() != ne ||
      p.phases.size() != ne || p.signs.size() != ne) {
    throw EsParamError("amplitudes, frequencies, phases and signs need one entry "
                       "per estimated coordinate");
  }
  for (int c = 0; c < ne; ++c) {
    const AmplitudeSource& a = p.amplitudes[static_cast<std::size_t>(c)];
    if (a.state_coordinate >= 0) {
      if (a.state_coordinate >= game.dim()) {
        throw EsParamError("amplitude state_coordinate out of range");
      }
    } else if (!(a.value > 0.0)) {
      throw EsParamError("fixed dither amplitudes must be positive");
    }
    if (!(p.frequencies[c] > 0.0)) throw EsParamError("frequencies must be positive");
    if (std::abs(p.signs[c]) != 1.0) throw EsParamError("signs must be +1 or -1");
  }
  if (!p.allow_shared_frequencies) {
    for (int a = 0; a < ne; ++a) {
      for (int b = a + 1; b < ne; ++b) {
        if (std::abs(p.frequencies[a] - p.frequencies[b]) < 1e-12) {
          throw EsParamError("dither frequencies must be pairwise distinct "
                             "(set allow_shared_frequencies to override)");
        }
      }
    }
  } else {
    for (int a = 0; a < ne; ++a) {
      for (int b = a + 1; b < ne; ++b) {
        if (std::abs(p.frequencies[a] - p.frequencies[b]) < 1e-12 &&
            std::abs(p.phases[a] - p.phases[b]) < 1e-9 && p.signs[a] == p.signs[b]) {
          throw EsParamError("coordinates sharing a frequency need distinct phases "
                             "or signs");
        }
      }
    }
  }
  validate_adaptive_params(p.adaptive);
}

/// Offsets of (u, z, lambda, w, k, s, zeta, mu) inside the stacked vector;
/// zeta has one entry and mu one (cos, sin) pair per estimated coordinate.
struct EsLayout {
  int m = 0;
  int q = 0;
  std::vector<int> est_coords;
  [[nodiscard]] int n_est() const { return static_cast<int>(est_coords.size()); }
  [[nodiscard]] int dim() const { return 2 * m + 4 * q + 3 * n_est(); }
  [[nodiscard]] int u_off() const { return 0; }
  [[nodiscard]] int z_off() const { return m; }
  [[nodiscard]] int lambda_off() const { return 2 * m; }
  [[nodiscard]] int w_off() const { return 2 * m + q; }
  [[nodiscard]] int k_off() const { return 2 * m + 2 * q; }
  [[nodiscard]] int s_off() const { return 2 * m + 3 * q; }
  [[nodiscard]] int zeta_off() const { return 2 * m + 4 * q; }
  [[nodiscard]] int mu_off() const { return 2 * m + 4 * q + n_est(); }
  [[nodiscard]] AdaptiveLayout adaptive() const { return {m, q}; }
  /// The (u, z, lambda, w, k, s) prefix shared with the adaptive variant.
  [[nodiscard]] Vec adaptive_part(const Vec& x) const { return x.head(2 * m + 4 * q); }
};

/// Current dither amplitude of estimated coordinate c.
inline double amplitude_at(const EsLayout& layout, const EsParams& params, const Vec& x,
                           int c) {
  const AmplitudeSource& src = params.amplitudes[static_cast<std::size_t>(c)];
  const double a =
      src.state_coordinate >= 0 ? x[layout.u_off() + src.state_coordinate] : src.value;
  if (!(a > 0.0)) {
    throw AmplitudeOutOfRange("dither amplitude for estimated coordinate " +
                              std::to_string(c) + " is " + std::to_string(a));
  }
  return a;
}

/// Input actually applied to the costs: u plus the signed dither on every
/// estimated coordinate.
inline Vec perturbed_input(const EsLayout& layout, const EsParams& params, const Vec& x) {
  Vec input = x.segment(layout.u_off(), layout.m);
  for (int c = 0; c < layout.n_est(); ++c) {
    const double dither = params.signs[c] * x[layout.mu_off() + 2 * c];
    input[layout.est_coords[static_cast<std::size_t>(c)]] +=
        amplitude_at(layout, params, x, c) * dither;
  }
  return input;
}

/// Demodulated single-measurement estimate, one entry per estimated
/// coordinate: (2 / a_c) J_i(perturbed input) times the coordinate's dither.
inline Vec estimate_pseudogradient(const Game& game, const EsLayout& layout,
                                   const EsParams& params, const Vec& x) {
  const Vec input = perturbed_input(layout, params, x);
  std::vector<double> measured(static_cast<std::size_t>(game.n_players()));
  std::vector<bool> have(static_cast<std::size_t>(game.n_players()), false);
  Vec est(layout.n_est());
  for (int c = 0; c < layout.n_est(); ++c) {
    const int gc = layout.est_coords[static_cast<std::size_t>(c)];
    int player = 0;
    while (game.offset(player) + game.dims[player] <= gc) ++player;
    if (!have[static_cast<std::size_t>(player)]) {
      measured[static_cast<std::size_t>(player)] = game.costs[player](input);
      have[static_cast<std::size_t>(player)] = true;
    }
    const double dither = params.signs[c] * x[layout.mu_off() + 2 * c];
    est[c] = 2.0 / amplitude_at(layout, params, x, c) *
             measured[static_cast<std::size_t>(player)] * dither;
  }
  if (!est.allFinite()) throw NonFiniteCost("pseudogradient estimate is non-finite");
  return est;
}

/// Flow right-hand side of the measurement-based variant.
inline Vec zeroth_order_rhs(const Game& game, const EsLayout& layout,
                            const EsParams& params, const Vec& x) {
  const Vec u = x.segment(layout.u_off(), layout.m);
  const Vec z = x.segment(layout.z_off(), layout.m);
  const Vec lambda = x.segment(layout.lambda_off(), layout.q);
  const Vec w = x.segment(layout.w_off(), layout.q);
  const Vec k = x.segment(layout.k_off(), layout.q);
  const Vec s = x.segment(layout.s_off(), layout.q);
  const Vec zeta = x.segment(layout.zeta_off(), layout.n_est());

  // Pseudogradient surrogate: filtered estimates on estimated coordinates,
  // analytic blocks elsewhere.
  Vec h(layout.m);
  for (int i = 0, off = 0; i < game.n_players(); off += game.dims[i], ++i) {
    if (!params.estimated[static_cast<std::size_t>(i)]) {
      Vec block;
      if (!game.cost_gradients.empty() && game.cost_gradients[i]) {
        block = game.cost_gradients[i](u);
      } else {
        block = detail::own_block_gradient_fd(game, i, u);
      }
      h.segment(off, game.dims[i]) = block;
    }
  }
  for (int c = 0; c < layout.n_est(); ++c) {
    h[layout.est_coords[static_cast<std::size_t>(c)]] = zeta[c];
  }

  const Vec g = constraint_values(game, u);
  const Mat jac = constraint_jacobian(game, u);
  const Vec gamma = game.gamma_per_coord();
  Vec nueps_coord(layout.m);
  Vec nu_coord(layout.m);
  for (int i = 0, off = 0; i < game.n_players(); off += game.dims[i], ++i) {
    nueps_coord.segment(off, game.dims[i]).setConstant(params.nu[i] * params.eps[i]);
    nu_coord.segment(off, game.dims[i]).setConstant(params.nu[i]);
  }

  Vec dx = Vec::Zero(layout.dim());
  dx.segment(layout.u_off(), layout.m) =
      nueps_coord.cwiseProduct(-u + z - gamma.cwiseProduct(h + jac.transpose() * lambda));
  dx.segment(layout.z_off(), layout.m) = nueps_coord.cwiseProduct(-z + u);
  const double dual_scale = params.nu0 * params.eps0;
  dx.segment(layout.lambda_off(), layout.q) =
      dual_scale * k.cwiseProduct(lambda.cwiseProduct(g - lambda + w));
  dx.segment(layout.w_off(), layout.q) = dual_scale * (-w + lambda);
  for (int j = 0; j < layout.q; ++j) {
    dx[layout.k_off() + j] =
        dual_scale * 0.5 * params.adaptive.c * (1.0 + s[j]) * s[j] * s[j];
  }
  const Vec est = estimate_pseudogradient(game, layout, params, x);
  for (int c = 0; c < layout.n_est(); ++c) {
    const int player_nu_coord = layout.est_coords[static_cast<std::size_t>(c)];
    dx[layout.zeta_off() + c] = nu_coord[player_nu_coord] * (-zeta[c] + est[c]);
    const double omega =
        2.0 * std::numbers::pi * params.frequencies[c];
    const double mu1 = x[layout.mu_off() + 2 * c];
    const double mu2 = x[layout.mu_off() + 2 * c + 1];
    dx[layout.mu_off() + 2 * c] = -omega * mu2;
    dx[layout.mu_off() + 2 * c + 1] = omega * mu1;
  }
  return dx;
}

struct BuiltZerothOrder {
  HybridSystem system;
  EsLayout layout;
  EsParams params;
  /// Largest oscillator norm deviation seen before renormalisation.
  std::shared_ptr<double> oscillator_drift;
};

inline BuiltZerothOrder build_zeroth_order_system(const Game& game,
                                                  const EsParams& params) {
  validate_game(game);
  validate_es_params(game, params);
  EsLayout layout{game.dim(), game.n_constraints(),
                  estimated_coordinates(game, params.estimated)};
  HybridSystem sys;
  sys.state_dim = layout.dim();
  sys.flow_map = [game, layout, params](const Vec& x) {
    return zeroth_order_rhs(game, layout, params, x);
  };
  sys.flow_set = [](const Vec&) { return true; };
  const AdaptiveLayout al = layout.adaptive();
  const AdaptiveParams ap = params.adaptive;
  sys.jump_set = [game, al, ap, layout](const Vec& x) {
    return !jump_candidates(game, al, ap, layout.adaptive_part(x)).empty();
  };
  sys.jump_map = [game, al, ap, layout](const Vec& x) {
    // Jumps act on the (u, z, lambda, w, k, s) prefix; filter and oscillator
    // states ride along unchanged.
    std::vector<JumpOption> options;
    const Vec prefix = layout.adaptive_part(x);
    for (const auto& [index, subcase] : jump_candidates(game, al, ap, prefix)) {
      Vec next = x;
      next.head(prefix.size()) = apply_jump(al, ap, prefix, index, subcase);
      options.push_back({std::move(next), index, subcase});
    }
    return options;
  };
  auto drift = std::make_shared<double>(0.0);
  const GneLayout gl{layout.m, layout.q};
  const double k_max = params.adaptive.k_max;
  sys.post_flow_step = [gl, layout, k_max, drift](Vec& x) {
    clamp_duals(x, gl);
    for (int j = 0; j < layout.q; ++j) {
      double& kj = x[layout.k_off() + j];
      if (kj > k_max) kj = k_max;
    }
    // The rotation flow preserves oscillator norms; undo the RK4 drift so the
    // dither amplitude stays exact over long horizons.
    for (int c = 0; c < layout.n_est(); ++c) {
      double& mu1 = x[layout.mu_off() + 2 * c];
      double& mu2 = x[layout.mu_off() + 2 * c + 1];
      const double norm = std::hypot(mu1, mu2);
      if (norm > 0.0) {
        *drift = std::max(*drift, std::abs(norm - 1.0));
        mu1 /= norm;
        mu2 /= norm;
      }
    }
  };
  return {std::move(sys), layout, params, drift};
}

/// Packs an initial state, placing each oscillator at its configured phase.
inline Vec pack_initial_state(const EsLayout& layout, const EsParams& params,
                              const Vec& u0, const Vec& z0, const Vec& lambda0,
                              const Vec& w0, const Vec& k0, const Vec& s0,
                              const Vec& zeta0) {
  if (u0.size() != layout.m || z0.size() != layout.m || lambda0.size() != layout.q ||
      w0.size() != layout.q || k0.size() != layout.q || s0.size() != layout.q ||
      zeta0.size() != layout.n_est()) {
    throw std::invalid_argument("pack_initial_state: block dimension mismatch");
  }
  Vec x = Vec::Zero(layout.dim());
  x.segment(layout.u_off(), layout.m) = u0;
  x.segment(layout.z_off(), layout.m) = z0;
  x.segment(layout.lambda_off(), layout.q) = lambda0;
  x.segment(layout.w_off(), layout.q) = w0;
  x.segment(layout.k_off(), layout.q) = k0;
  x.segment(layout.s_off(), layout.q) = s0;
  x.segment(layout.zeta_off(), layout.n_est()) = zeta0;
  for (int c = 0; c < layout.n_est(); ++c) {
    x[layout.mu_off() + 2 * c] = std::cos(params.phases[c]);
    x[layout.mu_off() + 2 * c + 1] = std::sin(params.phases[c]);
  }
  return x;
}

/// Time-averaged estimator error with the primal state frozen at u.
struct EstimatorBiasReport {
  Vec bias;          // |mean estimate - true partial gradient| per estimated coord
  Vec estimate_mean;
  Vec truth;
  double window = 0.0;
};

class TailTooShort : public std::runtime_error {
 public:
  explicit TailTooShort(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

/// Window snapping: returns the smallest T = N / kappa_min with N >=
/// n_periods such that every frequency completes a whole number of cycles, as
/// long as each ratio kappa_c / kappa_min is rational with a small
/// denominator. Irrational ratios keep T = n_periods / kappa_min and the
/// averaging inherits the leakage.
inline double commensurate_window(const Vec& frequencies, long n_periods) {
  const double kmin = frequencies.minCoeff();
  long multiple = 1;
  for (int c = 0; c < frequencies.size(); ++c) {
    const double ratio = frequencies[c] / kmin;
    // Continued-fraction search for a denominator <= 64.
    long best_den = 0;
    for (long den = 1; den <= 64; ++den) {
      const double num = std::round(ratio * static_cast<double>(den));
      if (std::abs(ratio * static_cast<double>(den) - num) < 1e-9) {
        best_den = den;
        break;
      }
    }
    if (best_den == 0) return static_cast<double>(n_periods) / kmin;
    multiple = std::lcm(multiple, best_den);
  }
  const long n = ((n_periods + multiple - 1) / multiple) * multiple;
  return static_cast<double>(n) / kmin;
}

}  // namespace detail

/// Averages the demodulated estimate over a whole number of dither periods at
/// frozen u (oscillators advanced analytically) and compares against the true
/// partial gradients. The window is snapped so every oscillator completes an
/// integer number of cycles, making the average free of spectral leakage; the
/// uniform-grid sum is then spectrally accurate.
inline EstimatorBiasReport estimator_bias_probe(const Game& game, const EsParams& params,
                                                const Vec& u, long n_periods = 33,
                                                long samples_per_period = 512) {
  validate_game(game);
  validate_es_params(game, params);
  EsLayout layout{game.dim(), game.n_constraints(),
                  estimated_coordinates(game, params.estimated)};
  if (u.size() != layout.m) {
    throw std::invalid_argument("estimator_bias_probe: u dimension mismatch");
  }
  if (n_periods < 1 || samples_per_period < 8) {
    throw std::invalid_argument("estimator_bias_probe: window too small");
  }
  const double window = detail::commensurate_window(params.frequencies, n_periods);
  const double kmax = params.frequencies.maxCoeff();
  const long n_samples =
      static_cast<long>(std::ceil(static_cast<double>(samples_per_period) * kmax * window));
  const double dt = window / static_cast<double>(n_samples);

  Vec x = Vec::Zero(layout.dim());
  x.segment(layout.u_off(), layout.m) = u;
  Vec mean = Vec::Zero(layout.n_est());
  for (long step = 0; step < n_samples; ++step) {
    const double t = dt * static_cast<double>(step);
    for (int c = 0; c < layout.n_est(); ++c) {
      const double angle =
          2.0 * std::numbers::pi * params.frequencies[c] * t + params.phases[c];
      x[layout.mu_off() + 2 * c] = std::cos(angle);
      x[layout.mu_off() + 2 * c + 1] = std::sin(angle);
    }
    mean += estimate_pseudogradient(game, layout, params, x);
  }
  mean /= static_cast<double>(n_samples);

  const Vec truth_full = pseudogradient(game, u);
  EstimatorBiasReport report;
  report.estimate_mean = mean;
  report.truth = Vec(layout.n_est());
  report.bias = Vec(layout.n_est());
  for (int c = 0; c < layout.n_est(); ++c) {
    report.truth[c] = truth_full[layout.est_coords[static_cast<std::size_t>(c)]];
    report.bias[c] = std::abs(mean[c] - report.truth[c]);
  }
  report.window = window;
  return report;
}

/// Mean peak-to-peak height of a sampled scalar signal over the last
/// `n_periods` whole dither periods. Throws TailTooShort when the sampled span
/// covers fewer than `min_periods` periods.
inline double oscillation_amplitude(const std::vector<double>& t,
                                    const std::vector<double>& values, double period,
                                    long n_periods = 5, long min_periods = 3) {
  if (t.size() != values.size() || t.empty()) {
    throw std::invalid_argument("oscillation_amplitude: bad series");
  }
  if (!(period > 0.0)) throw std::invalid_argument("oscillation_amplitude: bad period");
  const double t_end = t.back();
  const double span = t_end - t.front();
  if (span < static_cast<double>(min_periods) * period) {
    throw TailTooShort("series covers " + std::to_string(span / period) +
                       " dither periods, need at least " + std::to_string(min_periods));
  }
  const long usable = std::min(n_periods, static_cast<long>(span / period));
  double total = 0.0;
  long counted = 0;
  for (long p = 0; p < usable; ++p) {
    const double lo_t = t_end - static_cast<double>(p + 1) * period;
    const double hi_t = t_end - static_cast<double>(p) * period;
    double vmin = std::numeric_limits<double>::infinity();
    double vmax = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] >= lo_t && t[i] <= hi_t) {
        vmin = std::min(vmin, values[i]);
        vmax = std::max(vmax, values[i]);
      }
    }
    if (vmin <= vmax) {
      total += vmax - vmin;
      ++counted;
    }
  }
  if (counted == 0) throw TailTooShort("no samples inside the trailing periods");
  return total / static_cast<double>(counted);
}

}  // namespace gnes
