#pragma once

// Adaptive dual-gain variant of the primal-dual flow. Each constraint j gets a
// growing gain k_j and a three-state hysteresis mode s_j:
//   s_j = -1  armed: waiting for the constraint to overshoot g_j >= 2 eps
//   s_j = +1  increasing: k_j' = c until g_j falls back below eps
//   s_j =  0  stopped: k_j reached k_max, frozen there
// Mode switches are jumps; only s (and the k clamp at the stop) change, so the
// energy function is exactly preserved across jumps.

#include "gnes/full_info.hpp"
#include "gnes/game.hpp"
#include "gnes/hds.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnes {

class AdaptiveParamError : public std::runtime_error {
 public:
  explicit AdaptiveParamError(const std::string& what) : std::runtime_error(what) {}
};

/// Gain schedule: gains start at k_min, grow at slope c while increasing, and
/// freeze at k_max. `epsilon` sets the hysteresis band [eps, 2 eps] on g_j.
struct AdaptiveParams {
  double k_min = 1.0;
  double k_max = 100.0;
  double c = 2.0;
  double epsilon = 0.1;
};

inline void validate_adaptive_params(const AdaptiveParams& p) {
  if (!(p.k_min > 0.0)) throw AdaptiveParamError("k_min must be positive");
  if (!(p.k_max >= p.k_min)) throw AdaptiveParamError("k_max must be >= k_min");
  if (!(p.c >= 0.0)) throw AdaptiveParamError("slope c must be nonnegative");
  if (!(p.epsilon > 0.0)) throw AdaptiveParamError("epsilon must be positive");
}

/// Stacked state (u, z, lambda, w, k, s).
struct AdaptiveState {
  Vec u;
  Vec z;
  Vec lambda;
  Vec w;
  Vec k;
  Vec s;
};

struct AdaptiveLayout {
  int m = 0;
  int q = 0;
  [[nodiscard]] int dim() const { return 2 * m + 4 * q; }
  [[nodiscard]] int u_off() const { return 0; }
  [[nodiscard]] int z_off() const { return m; }
  [[nodiscard]] int lambda_off() const { return 2 * m; }
  [[nodiscard]] int w_off() const { return 2 * m + q; }
  [[nodiscard]] int k_off() const { return 2 * m + 2 * q; }
  [[nodiscard]] int s_off() const { return 2 * m + 3 * q; }
  [[nodiscard]] GneLayout gne() const { return {m, q}; }

  [[nodiscard]] AdaptiveState unpack(const Vec& x) const {
    if (x.size() != dim()) throw std::invalid_argument("unpack: dimension mismatch");
    return {x.segment(u_off(), m),      x.segment(z_off(), m),
            x.segment(lambda_off(), q), x.segment(w_off(), q),
            x.segment(k_off(), q),      x.segment(s_off(), q)};
  }
  [[nodiscard]] Vec pack(const AdaptiveState& st) const {
    Vec x(dim());
    x.segment(u_off(), m) = st.u;
    x.segment(z_off(), m) = st.z;
    x.segment(lambda_off(), q) = st.lambda;
    x.segment(w_off(), q) = st.w;
    x.segment(k_off(), q) = st.k;
    x.segment(s_off(), q) = st.s;
    return x;
  }
  /// The (u, z, lambda, w) prefix shared with the fixed-gain flow.
  [[nodiscard]] Vec gne_part(const Vec& x) const { return x.head(2 * m + 2 * q); }
};

/// Rounds a stored mode value to {-1, 0, +1}; modes are written exactly but
/// comparisons stay robust to copies through text formats.
inline int mode_of(double s) {
  if (s > 0.5) return 1;
  if (s < -0.5) return -1;
  return 0;
}

/// Flow right-hand side: the fixed-gain flow with per-constraint dual gains k,
/// gain slopes (1 + s_j) s_j^2 c / 2 (i.e. c exactly when increasing), frozen
/// modes. `dual_rate_scale` multiplies the lambda/w/k rates so time-dilated
/// variants can reuse it.
inline Vec adaptive_rhs(const Game& game, const AdaptiveLayout& layout, const Vec& x,
                        double c, double dual_rate_scale = 1.0) {
  const AdaptiveState st = layout.unpack(x);
  const GneLayout gl = layout.gne();
  Vec dx(layout.dim());
  dx.head(gl.dim()) = primal_dual_rhs(game, gl, layout.gne_part(x), st.k);
  dx.segment(layout.lambda_off(), layout.q) *= dual_rate_scale;
  dx.segment(layout.w_off(), layout.q) *= dual_rate_scale;
  for (int j = 0; j < layout.q; ++j) {
    const double sj = st.s[j];
    dx[layout.k_off() + j] = dual_rate_scale * 0.5 * c * (1.0 + sj) * sj * sj;
    dx[layout.s_off() + j] = 0.0;
  }
  return dx;
}

/// Every admissible mode switch at x: overshoot arms-to-increasing when
/// g_j >= 2 eps, recovery back to armed when g_j <= eps, and the terminal stop
/// when k_j reached k_max. Several indices or cases may fire at once; the
/// integrator picks one per jump.
inline std::vector<std::pair<int, int>> jump_candidates(const Game& game,
                                                        const AdaptiveLayout& layout,
                                                        const AdaptiveParams& params,
                                                        const Vec& x) {
  const AdaptiveState st = layout.unpack(x);
  const Vec g = constraint_values(game, st.u);
  std::vector<std::pair<int, int>> out;
  for (int j = 0; j < layout.q; ++j) {
    const int mode = mode_of(st.s[j]);
    if (mode == -1 && g[j] >= 2.0 * params.epsilon) out.emplace_back(j, kJumpArmToOn);
    if (mode == 1 && g[j] <= params.epsilon) out.emplace_back(j, kJumpOnToArm);
    if (mode != 0 && st.k[j] >= params.k_max) out.emplace_back(j, kJumpStop);
  }
  return out;
}

/// Applies one mode switch to a copy of x.
inline Vec apply_jump(const AdaptiveLayout& layout, const AdaptiveParams& params,
                      const Vec& x, int index, int subcase) {
  Vec next = x;
  switch (subcase) {
    case kJumpArmToOn: next[layout.s_off() + index] = 1.0; break;
    case kJumpOnToArm: next[layout.s_off() + index] = -1.0; break;
    case kJumpStop:
      next[layout.s_off() + index] = 0.0;
      next[layout.k_off() + index] = params.k_max;
      break;
    default: throw std::invalid_argument("apply_jump: unknown subcase");
  }
  return next;
}

struct BuiltAdaptive {
  HybridSystem system;
  AdaptiveLayout layout;
  AdaptiveParams params;
};

inline BuiltAdaptive build_adaptive_system(const Game& game,
                                           const AdaptiveParams& params) {
  validate_game(game);
  validate_adaptive_params(params);
  AdaptiveLayout layout{game.dim(), game.n_constraints()};
  HybridSystem sys;
  sys.state_dim = layout.dim();
  const double c = params.c;
  sys.flow_map = [game, layout, c](const Vec& x) {
    return adaptive_rhs(game, layout, x, c);
  };
  sys.flow_set = [](const Vec&) { return true; };
  sys.jump_set = [game, layout, params](const Vec& x) {
    return !jump_candidates(game, layout, params, x).empty();
  };
  sys.jump_map = [game, layout, params](const Vec& x) {
    std::vector<JumpOption> options;
    for (const auto& [index, subcase] : jump_candidates(game, layout, params, x)) {
      options.push_back({apply_jump(layout, params, x, index, subcase), index, subcase});
    }
    return options;
  };
  const GneLayout gl = layout.gne();
  const double k_max = params.k_max;
  sys.post_flow_step = [gl, layout, k_max](Vec& x) {
    clamp_duals(x, gl);
    // Gains may overshoot k_max by one step's growth before the stop jump is
    // detected; clamp so the recorded arc respects the cap exactly.
    for (int j = 0; j < layout.q; ++j) {
      double& kj = x[layout.k_off() + j];
      if (kj > k_max) kj = k_max;
    }
  };
  return {std::move(sys), layout, params};
}

/// Smallest distance u must travel for g_j to cross the hysteresis band, i.e.
/// eps divided by the largest constraint-gradient norm over the sampled box.
/// Dividing by a bound on ||u'|| turns it into a minimum dwell time between a
/// switch-on and the matching switch-off of the same index.
inline double hysteresis_travel_gap(const Game& game, int j, double epsilon,
                                    const Box& box, long n_samples = 1000,
                                    std::uint64_t seed = 0) {
  if (j < 0 || j >= game.n_constraints()) {
    throw std::invalid_argument("hysteresis_travel_gap: constraint index out of range");
  }
  std::mt19937_64 rng(seed);
  double max_norm = 0.0;
  for (long i = 0; i < n_samples; ++i) {
    const Vec u = sample_in_box(box, rng);
    max_norm = std::max(max_norm, game.constraints[j].gradient(u).norm());
  }
  if (max_norm == 0.0) return std::numeric_limits<double>::infinity();
  return epsilon / max_norm;
}

/// Upper bound on the total number of mode switches given a minimum dwell time
/// t_min in the increasing mode: each on/off cycle of an index grows its gain
/// by at least c * rate_scale * t_min, the gain budget is k_max - k_min, and
/// each index stops at most once.
inline long jump_count_bound(const AdaptiveParams& params, int q, double t_min,
                             double rate_scale = 1.0) {
  const double growth = params.c * rate_scale * t_min;
  if (!(growth > 0.0)) return std::numeric_limits<long>::max();
  const double cycles = std::ceil((params.k_max - params.k_min) / growth);
  if (cycles > 1e17) return std::numeric_limits<long>::max();
  return static_cast<long>(q) * (2 * static_cast<long>(cycles) + 3);
}

}  // namespace gnes
