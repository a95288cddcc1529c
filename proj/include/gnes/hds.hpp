#pragma once

// Hybrid dynamical systems: flow/jump descriptions, a fixed-step RK4 integrator
// with jump detection, and arc containers with CSV export helpers.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gnes {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised when a state or flow evaluation stops being finite.
class NonFiniteState : public std::runtime_error {
 public:
  explicit NonFiniteState(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when too many jumps occur without any elapsed flow time.
class ZenoGuardTripped : public std::runtime_error {
 public:
  explicit ZenoGuardTripped(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when the jump map returns no successor for a state in the jump set.
class EmptyJumpMap : public std::runtime_error {
 public:
  explicit EmptyJumpMap(const std::string& what) : std::runtime_error(what) {}
};

/// A point (t, j) of a hybrid time domain: elapsed flow time and jump count.
struct HybridTime {
  double t = 0.0;
  long j = 0;
};

/// One admissible successor state of a jump, tagged with the constraint index
/// and hysteresis subcase that fired (-1/-1 for systems without such labels).
/// Subcase encoding: 0 = armed->increasing, 1 = increasing->armed, 2 = stopped.
struct JumpOption {
  Vec state;
  int index = -1;
  int subcase = -1;
};

inline constexpr int kJumpArmToOn = 0;
inline constexpr int kJumpOnToArm = 1;
inline constexpr int kJumpStop = 2;

/// Flow map, flow set, jump set and (set-valued) jump map of a hybrid system.
/// `post_flow_step` is an optional hook applied to the state after each
/// completed RK4 step (dual clamping, oscillator renormalisation).
struct HybridSystem {
  int state_dim = 0;
  std::function<Vec(const Vec&)> flow_map;
  std::function<bool(const Vec&)> flow_set;
  std::function<bool(const Vec&)> jump_set;
  std::function<std::vector<JumpOption>(const Vec&)> jump_map;
  std::function<void(Vec&)> post_flow_step;
};

/// Record of one jump: pre-jump hybrid time, every admissible option at the
/// pre state, and which option was applied.
struct JumpRecord {
  HybridTime when;
  std::vector<std::pair<int, int>> triggered;  // (index, subcase) per option
  int applied_index = -1;
  int applied_subcase = -1;
  Vec pre;
  Vec post;
};

enum class HaltReason { MaxTime, MaxJumps, OutsideBothSets };

inline const char* to_string(HaltReason r) {
  switch (r) {
    case HaltReason::MaxTime: return "max_time";
    case HaltReason::MaxJumps: return "max_jumps";
    case HaltReason::OutsideBothSets: return "outside_both_sets";
  }
  return "unknown";
}

/// Sampled solution of a hybrid system. `times` and `states` are parallel;
/// a jump appears as two samples sharing t with j incremented.
struct HybridArc {
  std::vector<HybridTime> times;
  std::vector<Vec> states;
  std::vector<JumpRecord> jumps;
  HaltReason halt = HaltReason::MaxTime;

  [[nodiscard]] const Vec& final_state() const { return states.back(); }
  [[nodiscard]] HybridTime final_time() const { return times.back(); }
};

/// Fixed-step integration controls. Jumps within one hybrid time instant are
/// resolved one index at a time; `rng_seed` fixes the order when several
/// options are admissible (`ordered_jumps` picks the first listed instead).
/// Samples are recorded every `record_stride` completed steps, switching to
/// `dense_tail_stride` once t >= dense_tail_start; the initial, final and
/// jump-adjacent samples are always kept.
struct IntegrationOptions {
  double step_size = 1e-3;
  double max_time = 1.0;
  long max_jumps = 1000;
  int max_consecutive_jumps = 100;
  bool jump_priority = true;
  std::uint64_t rng_seed = 0;
  long record_stride = 1;
  double dense_tail_start = std::numeric_limits<double>::infinity();
  long dense_tail_stride = 1;
  bool ordered_jumps = false;
};

namespace detail {

inline void require_finite(const Vec& x, double t, long j, const char* where) {
  if (!x.allFinite()) {
    throw NonFiniteState(std::string(where) + " produced a non-finite state at t=" +
                         std::to_string(t) + ", j=" + std::to_string(j));
  }
}

inline Vec rk4_step(const HybridSystem& sys, const Vec& x, double h) {
  const Vec k1 = sys.flow_map(x);
  const Vec k2 = sys.flow_map(x + 0.5 * h * k1);
  const Vec k3 = sys.flow_map(x + 0.5 * h * k2);
  const Vec k4 = sys.flow_map(x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Picks one successor among the admissible jump options, uniformly at random
/// (or the first listed when `ordered` is set). Throws EmptyJumpMap when the
/// jump map offers nothing.
inline JumpOption resolve_jump(const HybridSystem& sys, const Vec& x,
                               std::mt19937_64& rng, bool ordered = false) {
  std::vector<JumpOption> options = sys.jump_map(x);
  if (options.empty()) {
    throw EmptyJumpMap("jump map returned no successor inside the jump set");
  }
  std::size_t pick = 0;
  if (!ordered && options.size() > 1) {
    std::uniform_int_distribution<std::size_t> dist(0, options.size() - 1);
    pick = dist(rng);
  }
  return options[pick];
}

/// Integrates the hybrid system from x0 with classical RK4 between jumps.
/// Membership in the jump set is checked at the initial point and once after
/// every completed flow step; when both sets contain the state, jumps win if
/// `jump_priority` is set. Throws ZenoGuardTripped after
/// `max_consecutive_jumps` jumps with no flow time in between.
inline HybridArc integrate(const HybridSystem& sys, const Vec& x0,
                           const IntegrationOptions& opt) {
  if (sys.state_dim <= 0 || x0.size() != sys.state_dim) {
    throw std::invalid_argument("integrate: state dimension mismatch");
  }
  if (!(opt.step_size > 0.0) || !(opt.step_size <= opt.max_time)) {
    throw std::invalid_argument("integrate: need 0 < step_size <= max_time");
  }
  if (opt.max_consecutive_jumps < 1) {
    throw std::invalid_argument("integrate: max_consecutive_jumps must be >= 1");
  }

  HybridArc arc;
  std::mt19937_64 rng(opt.rng_seed);
  Vec x = x0;
  double t = 0.0;
  long j = 0;
  long step = 0;
  int consecutive = 0;
  bool last_recorded = true;

  detail::require_finite(x, t, j, "initial state");
  arc.times.push_back({t, j});
  arc.states.push_back(x);

  auto record = [&](bool force) {
    const long stride =
        (t >= opt.dense_tail_start) ? opt.dense_tail_stride : opt.record_stride;
    if (force || stride <= 1 || step % stride == 0) {
      arc.times.push_back({t, j});
      arc.states.push_back(x);
      last_recorded = true;
    } else {
      last_recorded = false;
    }
  };

  const double t_end = opt.max_time;
  while (true) {
    const bool in_d = sys.jump_set(x);
    const bool in_c = sys.flow_set(x);

    if (in_d && (opt.jump_priority || !in_c)) {
      if (j >= opt.max_jumps) {
        arc.halt = HaltReason::MaxJumps;
        break;
      }
      if (++consecutive > opt.max_consecutive_jumps) {
        throw ZenoGuardTripped("more than " + std::to_string(opt.max_consecutive_jumps) +
                               " jumps without flow time at t=" + std::to_string(t));
      }
      std::vector<JumpOption> options = sys.jump_map(x);
      if (options.empty()) {
        throw EmptyJumpMap("jump map returned no successor at t=" + std::to_string(t));
      }
      std::size_t pick = 0;
      if (!opt.ordered_jumps && options.size() > 1) {
        std::uniform_int_distribution<std::size_t> dist(0, options.size() - 1);
        pick = dist(rng);
      }
      JumpRecord rec;
      rec.when = {t, j};
      rec.triggered.reserve(options.size());
      for (const JumpOption& o : options) rec.triggered.emplace_back(o.index, o.subcase);
      rec.applied_index = options[pick].index;
      rec.applied_subcase = options[pick].subcase;
      rec.pre = x;
      rec.post = options[pick].state;
      if (!last_recorded) record(true);  // keep the pre-jump sample
      x = options[pick].state;
      detail::require_finite(x, t, j, "jump map");
      ++j;
      arc.jumps.push_back(std::move(rec));
      record(true);
      continue;
    }

    if (t >= t_end - 1e-12 * std::max(1.0, t_end)) {
      arc.halt = HaltReason::MaxTime;
      break;
    }

    if (!in_c) {
      arc.halt = HaltReason::OutsideBothSets;
      break;
    }

    const double h = std::min(opt.step_size, t_end - t);
    x = detail::rk4_step(sys, x, h);
    if (sys.post_flow_step) sys.post_flow_step(x);
    detail::require_finite(x, t + h, j, "flow step");
    t += h;
    ++step;
    consecutive = 0;
    record(t >= t_end - 1e-12 * std::max(1.0, t_end));
  }

  if (!last_recorded) record(true);
  return arc;
}

/// Distance/oscillation metrics of an arc relative to a reference point.
/// The tail window is the trailing `tail_fraction` of elapsed flow time;
/// tail means are time-weighted so jump instants contribute nothing.
struct ArcMetrics {
  double final_distance = 0.0;
  double tail_mean_distance = 0.0;
  Vec tail_peak_to_peak;
  long total_jumps = 0;
};

inline ArcMetrics arc_metrics(const HybridArc& arc, const Vec& ref,
                              double tail_fraction = 0.2) {
  if (arc.states.empty()) throw std::invalid_argument("arc_metrics: empty arc");
  if (ref.size() != arc.states.front().size()) {
    throw std::invalid_argument("arc_metrics: reference dimension mismatch");
  }
  ArcMetrics m;
  m.total_jumps = static_cast<long>(arc.jumps.size());
  m.final_distance = (arc.states.back() - ref).norm();

  const double t0 = arc.times.front().t;
  const double t1 = arc.times.back().t;
  const double tail_start = t1 - tail_fraction * (t1 - t0);
  const int n = static_cast<int>(ref.size());
  Vec lo = Vec::Constant(n, std::numeric_limits<double>::infinity());
  Vec hi = Vec::Constant(n, -std::numeric_limits<double>::infinity());
  double weighted = 0.0;
  double span = 0.0;
  for (std::size_t i = 0; i < arc.states.size(); ++i) {
    if (arc.times[i].t < tail_start) continue;
    lo = lo.cwiseMin(arc.states[i]);
    hi = hi.cwiseMax(arc.states[i]);
    if (i + 1 < arc.states.size() && arc.times[i + 1].t >= tail_start) {
      const double dt = arc.times[i + 1].t - arc.times[i].t;
      const double d0 = (arc.states[i] - ref).norm();
      const double d1 = (arc.states[i + 1] - ref).norm();
      weighted += 0.5 * (d0 + d1) * dt;
      span += dt;
    }
  }
  m.tail_mean_distance = span > 0.0 ? weighted / span : m.final_distance;
  m.tail_peak_to_peak = (hi - lo).cwiseMax(0.0);
  return m;
}

/// First flow time at which ||P x - ref|| <= radius, restricted to the
/// coordinates selected by `coords` (all when empty). Returns +inf if never.
inline double first_entry_time(const HybridArc& arc, const Vec& ref, double radius,
                               const std::vector<int>& coords = {}) {
  for (std::size_t i = 0; i < arc.states.size(); ++i) {
    double d2 = 0.0;
    if (coords.empty()) {
      d2 = (arc.states[i] - ref).squaredNorm();
    } else {
      for (std::size_t c = 0; c < coords.size(); ++c) {
        const double diff = arc.states[i][coords[c]] - ref[static_cast<int>(c)];
        d2 += diff * diff;
      }
    }
    if (d2 <= radius * radius) return arc.times[i].t;
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace gnes
