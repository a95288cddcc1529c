#pragma once

// Game model: per-player costs over a shared decision vector, shared affine or
// smooth inequality constraints, pseudogradient assembly, first-order
// optimality residuals, a randomized monotonicity probe and a derivative-free
// solver used as reference oracle.

#include "gnes/hds.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnes {

class GameDefinitionError : public std::runtime_error {
 public:
  explicit GameDefinitionError(const std::string& what) : std::runtime_error(what) {}
};

class NonFiniteCost : public std::runtime_error {
 public:
  explicit NonFiniteCost(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when the grid stage of the reference oracle would be intractable.
class OracleScaleExceeded : public std::runtime_error {
 public:
  explicit OracleScaleExceeded(const std::string& what) : std::runtime_error(what) {}
};

/// One shared inequality constraint value(u) <= 0 with its full gradient.
struct Constraint {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> gradient;
};

/// N players, player i controlling the block of size dims[i] inside the stacked
/// decision vector u. `cost_gradients[i]`, when present, returns the partial
/// gradient of costs[i] with respect to player i's own block; otherwise central
/// differences are used. `gamma` holds one positive step gain per player.
struct Game {
  std::string name;
  std::vector<int> dims;
  std::vector<std::function<double(const Vec&)>> costs;
  std::vector<std::function<Vec(const Vec&)>> cost_gradients;
  std::vector<Constraint> constraints;
  Vec gamma;

  [[nodiscard]] int n_players() const { return static_cast<int>(dims.size()); }
  [[nodiscard]] int n_constraints() const { return static_cast<int>(constraints.size()); }
  [[nodiscard]] int dim() const {
    int total = 0;
    for (int d : dims) total += d;
    return total;
  }
  [[nodiscard]] int offset(int player) const {
    int off = 0;
    for (int i = 0; i < player; ++i) off += dims[i];
    return off;
  }
  /// Expands the per-player gains to one gain per coordinate.
  [[nodiscard]] Vec gamma_per_coord() const {
    Vec g(dim());
    for (int i = 0, off = 0; i < n_players(); off += dims[i], ++i) {
      g.segment(off, dims[i]).setConstant(gamma[i]);
    }
    return g;
  }
};

inline void validate_game(const Game& game) {
  if (game.dims.empty()) throw GameDefinitionError("game has no players");
  for (int d : game.dims) {
    if (d < 1) throw GameDefinitionError("player block sizes must be positive");
  }
  if (game.costs.size() != game.dims.size()) {
    throw GameDefinitionError("need exactly one cost per player");
  }
  if (!game.cost_gradients.empty() && game.cost_gradients.size() != game.dims.size()) {
    throw GameDefinitionError("cost_gradients must be empty or one per player");
  }
  if (game.gamma.size() != static_cast<int>(game.dims.size())) {
    throw GameDefinitionError("gamma must hold one gain per player");
  }
  if ((game.gamma.array() <= 0.0).any()) {
    throw GameDefinitionError("step gains must be positive");
  }
  for (const Constraint& c : game.constraints) {
    if (!c.value || !c.gradient) {
      throw GameDefinitionError("constraint needs both value and gradient");
    }
  }
}

namespace detail {

/// Central-difference gradient of player i's cost w.r.t. its own block.
inline Vec own_block_gradient_fd(const Game& game, int player, const Vec& u,
                                 double step = 1e-6) {
  const int off = game.offset(player);
  const int m = game.dims[player];
  Vec g(m);
  Vec probe = u;
  for (int c = 0; c < m; ++c) {
    const double saved = probe[off + c];
    probe[off + c] = saved + step;
    const double hi = game.costs[player](probe);
    probe[off + c] = saved - step;
    const double lo = game.costs[player](probe);
    probe[off + c] = saved;
    g[c] = (hi - lo) / (2.0 * step);
  }
  return g;
}

}  // namespace detail

/// Stacked partial gradients col_i(d J_i / d u_i) evaluated at u, using the
/// supplied analytic gradients where present and central differences elsewhere.
inline Vec pseudogradient(const Game& game, const Vec& u) {
  Vec f(game.dim());
  for (int i = 0, off = 0; i < game.n_players(); off += game.dims[i], ++i) {
    Vec block;
    if (!game.cost_gradients.empty() && game.cost_gradients[i]) {
      block = game.cost_gradients[i](u);
      if (block.size() != game.dims[i]) {
        throw GameDefinitionError("cost gradient block size mismatch for player " +
                                  std::to_string(i));
      }
    } else {
      block = detail::own_block_gradient_fd(game, i, u);
    }
    f.segment(off, game.dims[i]) = block;
  }
  if (!f.allFinite()) throw NonFiniteCost("pseudogradient is non-finite");
  return f;
}

/// Same stacking but always via central differences; cross-check for the
/// analytic gradients.
inline Vec pseudogradient_fd(const Game& game, const Vec& u, double step = 1e-6) {
  Vec f(game.dim());
  for (int i = 0, off = 0; i < game.n_players(); off += game.dims[i], ++i) {
    f.segment(off, game.dims[i]) = detail::own_block_gradient_fd(game, i, u, step);
  }
  return f;
}

/// Stacked constraint values g(u).
inline Vec constraint_values(const Game& game, const Vec& u) {
  Vec g(game.n_constraints());
  for (int k = 0; k < game.n_constraints(); ++k) g[k] = game.constraints[k].value(u);
  return g;
}

/// Constraint Jacobian, one gradient per row (q x m).
inline Mat constraint_jacobian(const Game& game, const Vec& u) {
  Mat jac(game.n_constraints(), game.dim());
  for (int k = 0; k < game.n_constraints(); ++k) {
    Vec grad = game.constraints[k].gradient(u);
    if (grad.size() != game.dim()) {
      throw GameDefinitionError("constraint gradient dimension mismatch at row " +
                                std::to_string(k));
    }
    jac.row(k) = grad.transpose();
  }
  return jac;
}

/// Primal/dual candidate for the first-order conditions.
struct KktPoint {
  Vec u;
  Vec lambda;
};

/// Natural residual of the first-order conditions at (u, lambda):
/// stationarity norm plus the componentwise min(lambda, -g) complementarity
/// norm. Zero exactly at points satisfying them with lambda >= 0, g <= 0.
inline double kkt_residual(const Game& game, const KktPoint& p) {
  if (p.u.size() != game.dim() || p.lambda.size() != game.n_constraints()) {
    throw std::invalid_argument("kkt_residual: dimension mismatch");
  }
  const Vec f = pseudogradient(game, p.u);
  const Vec g = constraint_values(game, p.u);
  const Mat jac = constraint_jacobian(game, p.u);
  const Vec stationarity = f + jac.transpose() * p.lambda;
  const Vec comp = p.lambda.cwiseMin(-g);
  return stationarity.norm() + comp.norm();
}

/// Axis-aligned sampling box.
struct Box {
  Vec lo;
  Vec hi;
};

inline Vec sample_in_box(const Box& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec x(box.lo.size());
  for (int i = 0; i < x.size(); ++i) {
    x[i] = box.lo[i] + unit(rng) * (box.hi[i] - box.lo[i]);
  }
  return x;
}

/// Result of sampling <F(u)-F(v), u-v> over random pairs in a box. A negative
/// minimum is a certificate against monotonicity; a nonnegative one is only
/// evidence for it.
struct MonotonicityReport {
  long n_pairs = 0;
  double min_inner_product = 0.0;
  Vec worst_u;
  Vec worst_v;
  [[nodiscard]] bool passed(double tol = 0.0) const { return min_inner_product >= -tol; }
};

inline MonotonicityReport monotonicity_probe(const Game& game, const Box& box,
                                             long n_pairs = 2000,
                                             std::uint64_t seed = 0) {
  if (box.lo.size() != game.dim() || box.hi.size() != game.dim()) {
    throw std::invalid_argument("monotonicity_probe: box dimension mismatch");
  }
  std::mt19937_64 rng(seed);
  MonotonicityReport report;
  report.n_pairs = n_pairs;
  report.min_inner_product = std::numeric_limits<double>::infinity();
  for (long s = 0; s < n_pairs; ++s) {
    const Vec u = sample_in_box(box, rng);
    const Vec v = sample_in_box(box, rng);
    const double inner = (pseudogradient(game, u) - pseudogradient(game, v)).dot(u - v);
    if (inner < report.min_inner_product) {
      report.min_inner_product = inner;
      report.worst_u = u;
      report.worst_v = v;
    }
  }
  return report;
}

/// Search controls for the reference oracle: a coarse grid over the primal box
/// and [0, lambda_max]^q dual box, followed by coordinate pattern search on the
/// most promising candidates.
struct OracleOptions {
  double lambda_max = 10.0;
  int grid_points = 7;
  double target_residual = 1e-9;
  int max_refine_iterations = 400;
  int max_candidates = 64;
  double dedup_distance = 1e-3;
};

namespace detail {

/// Coordinate pattern search (compass search with step halving) on the KKT
/// residual, keeping lambda >= 0.
inline KktPoint refine_kkt(const Game& game, KktPoint p, const Box& u_box,
                           const OracleOptions& opt) {
  const int m = game.dim();
  const int q = game.n_constraints();
  Vec x(m + q);
  x.head(m) = p.u;
  x.tail(q) = p.lambda;
  auto residual_at = [&](const Vec& v) {
    KktPoint cand{v.head(m), v.tail(q).cwiseMax(0.0)};
    return kkt_residual(game, cand);
  };
  double best = residual_at(x);
  Vec scale(m + q);
  scale.head(m) = (u_box.hi - u_box.lo).cwiseMax(1e-3);
  scale.tail(q).setConstant(std::max(opt.lambda_max, 1e-3));
  double step = 0.25;
  for (int iter = 0; iter < opt.max_refine_iterations && best > opt.target_residual;
       ++iter) {
    bool improved = false;
    for (int c = 0; c < m + q; ++c) {
      for (double sign : {1.0, -1.0}) {
        Vec trial = x;
        trial[c] += sign * step * scale[c];
        const double r = residual_at(trial);
        if (r < best) {
          best = r;
          x = trial;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
    if (step < 1e-14) break;
  }
  return {x.head(m), x.tail(q).cwiseMax(0.0)};
}

}  // namespace detail

/// Derivative-free reference solver for the first-order conditions: grid
/// seeding over the primal box and dual box, pattern-search refinement, and
/// deduplication. Returns every distinct point reaching `target_residual`.
inline std::vector<KktPoint> solve_kkt_oracle(const Game& game, const Box& u_box,
                                              const OracleOptions& opt = {}) {
  validate_game(game);
  if (u_box.lo.size() != game.dim() || u_box.hi.size() != game.dim()) {
    throw std::invalid_argument("solve_kkt_oracle: box dimension mismatch");
  }
  const int m = game.dim();
  const int q = game.n_constraints();
  const int gp = std::max(2, opt.grid_points);
  const int dual_gp = 3;  // duals seeded at {0, max/2, max}
  const double grid_size = std::pow(gp, m) * std::pow(dual_gp, q);
  if (grid_size > 2e5) {
    throw OracleScaleExceeded("grid stage would enumerate " +
                              std::to_string(grid_size) +
                              " seeds; this oracle is meant for small games");
  }

  // Enumerate the coarse grid and keep the best seeds by residual.
  std::vector<std::pair<double, KktPoint>> seeds;
  std::vector<int> idx(m + q, 0);
  while (true) {
    KktPoint p;
    p.u = Vec(m);
    p.lambda = Vec(q);
    for (int c = 0; c < m; ++c) {
      p.u[c] = u_box.lo[c] + (u_box.hi[c] - u_box.lo[c]) * idx[c] / (gp - 1);
    }
    for (int k = 0; k < q; ++k) {
      p.lambda[k] = opt.lambda_max * idx[m + k] / (dual_gp - 1);
    }
    seeds.emplace_back(kkt_residual(game, p), std::move(p));

    int c = 0;
    for (; c < m + q; ++c) {
      const int lim = c < m ? gp : dual_gp;
      if (++idx[c] < lim) break;
      idx[c] = 0;
    }
    if (c == m + q) break;
  }
  std::sort(seeds.begin(), seeds.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  if (static_cast<int>(seeds.size()) > opt.max_candidates) {
    seeds.resize(opt.max_candidates);
  }

  std::vector<KktPoint> solutions;
  for (auto& [r0, seed] : seeds) {
    KktPoint refined = detail::refine_kkt(game, seed, u_box, opt);
    if (kkt_residual(game, refined) > opt.target_residual) continue;
    bool duplicate = false;
    for (const KktPoint& s : solutions) {
      if ((s.u - refined.u).norm() + (s.lambda - refined.lambda).norm() <
          opt.dedup_distance) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) solutions.push_back(std::move(refined));
  }
  return solutions;
}

}  // namespace gnes
