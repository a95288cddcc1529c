#include <catch2/catch_amalgamated.hpp>

#include "gnes/hds.hpp"

#include <cmath>
#include <limits>

using namespace gnes;
using Catch::Approx;

namespace {

/// Pure decay x' = -x, no jumps.
HybridSystem decay_system() {
  HybridSystem sys;
  sys.state_dim = 1;
  sys.flow_map = [](const Vec& x) { return (-x).eval(); };
  sys.flow_set = [](const Vec&) { return true; };
  sys.jump_set = [](const Vec&) { return false; };
  sys.jump_map = [](const Vec&) { return std::vector<JumpOption>{}; };
  return sys;
}

/// Sawtooth: x' = -1, reset to 1 once x falls to 0.5.
HybridSystem sawtooth_system() {
  HybridSystem sys;
  sys.state_dim = 1;
  sys.flow_map = [](const Vec& x) { return Vec::Constant(x.size(), -1.0).eval(); };
  sys.flow_set = [](const Vec&) { return true; };
  sys.jump_set = [](const Vec& x) { return x[0] <= 0.5; };
  sys.jump_map = [](const Vec& x) {
    JumpOption o;
    o.state = x;
    o.state[0] = 1.0;
    o.index = 0;
    return std::vector<JumpOption>{o};
  };
  return sys;
}

}  // namespace

TEST_CASE("rk4 reproduces exponential decay to near machine precision", "[hds]") {
  IntegrationOptions opt;
  opt.step_size = 1e-3;
  opt.max_time = 1.0;
  const HybridArc arc = integrate(decay_system(), Vec::Ones(1), opt);
  REQUIRE(arc.halt == HaltReason::MaxTime);
  REQUIRE(arc.final_time().t == Approx(1.0).margin(1e-12));
  REQUIRE(arc.final_state()[0] == Approx(std::exp(-1.0)).margin(1e-12));
  REQUIRE(arc.jumps.empty());
}

TEST_CASE("rk4 converges at fourth order on a nonlinear flow", "[hds]") {
  // x' = x^2 from x(0) = 1 has the exact solution 1 / (1 - t).
  HybridSystem sys;
  sys.state_dim = 1;
  sys.flow_map = [](const Vec& x) { return x.cwiseProduct(x).eval(); };
  sys.flow_set = [](const Vec&) { return true; };
  sys.jump_set = [](const Vec&) { return false; };
  sys.jump_map = [](const Vec&) { return std::vector<JumpOption>{}; };

  auto error_at = [&](double h) {
    IntegrationOptions opt;
    opt.step_size = h;
    opt.max_time = 0.5;
    const HybridArc arc = integrate(sys, Vec::Ones(1), opt);
    return std::abs(arc.final_state()[0] - 2.0);
  };
  const double e1 = error_at(0.02);
  const double e2 = error_at(0.01);
  const double order = std::log2(e1 / e2);
  REQUIRE(order >= 3.5);
}

TEST_CASE("jumps reset the state and advance the jump counter", "[hds]") {
  IntegrationOptions opt;
  opt.step_size = 1e-3;
  opt.max_time = 2.0;
  const HybridArc arc = integrate(sawtooth_system(), Vec::Ones(1), opt);
  REQUIRE(arc.halt == HaltReason::MaxTime);
  // Crossings near t = 0.5, 1.0, 1.5, 2.0; allow the boundary one to land on
  // either side of the horizon check.
  REQUIRE(arc.jumps.size() >= 3);
  REQUIRE(arc.final_time().j == static_cast<long>(arc.jumps.size()));
  for (const JumpRecord& rec : arc.jumps) {
    REQUIRE(rec.pre[0] <= 0.5 + 1e-12);
    REQUIRE(rec.post[0] == 1.0);
    REQUIRE(rec.applied_index == 0);
  }
  // Each jump shows up as two samples sharing t with j incremented.
  bool found_pair = false;
  for (std::size_t i = 1; i < arc.times.size(); ++i) {
    if (arc.times[i].j == arc.times[i - 1].j + 1) {
      REQUIRE(arc.times[i].t == arc.times[i - 1].t);
      found_pair = true;
    }
  }
  REQUIRE(found_pair);
}

TEST_CASE("max_jumps halts the run with the jump budget spent", "[hds]") {
  IntegrationOptions opt;
  opt.step_size = 1e-3;
  opt.max_time = 10.0;
  opt.max_jumps = 2;
  const HybridArc arc = integrate(sawtooth_system(), Vec::Ones(1), opt);
  REQUIRE(arc.halt == HaltReason::MaxJumps);
  REQUIRE(arc.final_time().j == 2);
}

TEST_CASE("zeno guard trips when jumps stop consuming flow time", "[hds]") {
  HybridSystem sys;
  sys.state_dim = 1;
  sys.flow_map = [](const Vec& x) { return (-x).eval(); };
  sys.flow_set = [](const Vec&) { return true; };
  sys.jump_set = [](const Vec&) { return true; };
  sys.jump_map = [](const Vec& x) {
    return std::vector<JumpOption>{{x, 0, -1}};
  };
  IntegrationOptions opt;
  opt.step_size = 1e-3;
  opt.max_time = 1.0;
  opt.max_consecutive_jumps = 10;
  REQUIRE_THROWS_AS(integrate(sys, Vec::Ones(1), opt), ZenoGuardTripped);
}

TEST_CASE("empty jump map inside the jump set is an error", "[hds]") {
  HybridSystem sys = sawtooth_system();
  sys.jump_map = [](const Vec&) { return std::vector<JumpOption>{}; };
  IntegrationOptions opt;
  opt.step_size = 1e-3;
  opt.max_time = 2.0;
  REQUIRE_THROWS_AS(integrate(sys, Vec::Ones(1), opt), EmptyJumpMap);
}

TEST_CASE("a state outside both sets halts the run", "[hds]") {
  HybridSystem sys = decay_system();
  sys.flow_set = [](const Vec& x) { return x[0] <= 1.0; };
  IntegrationOptions opt;
  opt.step_size = 1e-3;
  opt.max_time = 1.0;
  const HybridArc arc = integrate(sys, Vec::Constant(1, 2.0), opt);
  REQUIRE(arc.halt == HaltReason::OutsideBothSets);
  REQUIRE(arc.states.size() == 1);
  REQUIRE(arc.final_time().t == 0.0);
}

TEST_CASE("non-finite flow output raises immediately", "[hds]") {
  HybridSystem sys = decay_system();
  sys.flow_map = [](const Vec& x) {
    return Vec::Constant(x.size(), std::numeric_limits<double>::quiet_NaN()).eval();
  };
  IntegrationOptions opt;
  opt.step_size = 1e-3;
  opt.max_time = 1.0;
  REQUIRE_THROWS_AS(integrate(sys, Vec::Ones(1), opt), NonFiniteState);
}

TEST_CASE("integration argument validation", "[hds]") {
  IntegrationOptions opt;
  opt.step_size = 0.0;
  REQUIRE_THROWS_AS(integrate(decay_system(), Vec::Ones(1), opt),
                    std::invalid_argument);
  opt.step_size = 1e-3;
  REQUIRE_THROWS_AS(integrate(decay_system(), Vec::Ones(2), opt),
                    std::invalid_argument);
}

TEST_CASE("identical seeds replay the same jump choices", "[hds]") {
  // Two admissible resets with different landing points.
  HybridSystem sys = sawtooth_system();
  sys.jump_map = [](const Vec& x) {
    JumpOption a{x, 0, -1};
    a.state[0] = 1.0;
    JumpOption b{x, 1, -1};
    b.state[0] = 2.0;
    return std::vector<JumpOption>{a, b};
  };
  IntegrationOptions opt;
  opt.step_size = 1e-3;
  opt.max_time = 4.0;
  opt.rng_seed = 42;
  const HybridArc first = integrate(sys, Vec::Ones(1), opt);
  const HybridArc second = integrate(sys, Vec::Ones(1), opt);
  REQUIRE(first.jumps.size() == second.jumps.size());
  REQUIRE(first.jumps.size() >= 2);
  for (std::size_t i = 0; i < first.jumps.size(); ++i) {
    REQUIRE(first.jumps[i].applied_index == second.jumps[i].applied_index);
    REQUIRE(first.jumps[i].triggered.size() == 2);
  }

  // Ordered resolution always applies the first listed option.
  opt.ordered_jumps = true;
  const HybridArc ordered = integrate(sys, Vec::Ones(1), opt);
  for (const JumpRecord& rec : ordered.jumps) {
    REQUIRE(rec.applied_index == 0);
  }
}

TEST_CASE("record stride thins samples but keeps landmarks", "[hds]") {
  IntegrationOptions opt;
  opt.step_size = 1e-3;
  opt.max_time = 2.0;
  opt.record_stride = 100;
  const HybridArc arc = integrate(sawtooth_system(), Vec::Ones(1), opt);

  // Thinned: far fewer than the 2000 steps, but initial, final and the
  // pre/post samples of every jump are present.
  REQUIRE(arc.states.size() < 100);
  REQUIRE(arc.times.front().t == 0.0);
  REQUIRE(arc.final_time().t == Approx(2.0).margin(1e-9));
  for (const JumpRecord& rec : arc.jumps) {
    bool pre_found = false;
    for (std::size_t i = 0; i < arc.times.size(); ++i) {
      if (arc.times[i].t == rec.when.t && arc.times[i].j == rec.when.j) {
        pre_found = true;
      }
    }
    REQUIRE(pre_found);
  }
}

TEST_CASE("dense tail stride refines the trailing window", "[hds]") {
  IntegrationOptions opt;
  opt.step_size = 1e-3;
  opt.max_time = 1.0;
  opt.record_stride = 100;
  opt.dense_tail_start = 0.9;
  opt.dense_tail_stride = 1;
  const HybridArc arc = integrate(decay_system(), Vec::Ones(1), opt);
  // Before the tail the spacing is ~0.1; inside it every step is kept. The
  // sample landing on the 0.9 boundary may sit on either side of it in
  // accumulated time, so judge spacing only once the previous sample is
  // clearly past the boundary.
  int dense_samples = 0;
  for (std::size_t i = 1; i < arc.times.size(); ++i) {
    if (arc.times[i - 1].t >= 0.9005) {
      REQUIRE(arc.times[i].t - arc.times[i - 1].t <= 1e-3 + 1e-12);
    }
    if (arc.times[i].t >= 0.9005) ++dense_samples;
  }
  REQUIRE(dense_samples >= 95);
}

TEST_CASE("post flow step hook can reshape the state each step", "[hds]") {
  HybridSystem sys;
  sys.state_dim = 1;
  sys.flow_map = [](const Vec& x) { return Vec::Constant(x.size(), -1.0).eval(); };
  sys.flow_set = [](const Vec&) { return true; };
  sys.jump_set = [](const Vec&) { return false; };
  sys.jump_map = [](const Vec&) { return std::vector<JumpOption>{}; };
  sys.post_flow_step = [](Vec& x) { x = x.cwiseMax(0.0); };
  IntegrationOptions opt;
  opt.step_size = 1e-3;
  opt.max_time = 1.0;
  const HybridArc arc = integrate(sys, Vec::Constant(1, 0.5), opt);
  REQUIRE(arc.final_state()[0] == 0.0);
  for (const Vec& x : arc.states) REQUIRE(x[0] >= 0.0);
}

TEST_CASE("arc metrics summarise distance and tail oscillation", "[hds]") {
  IntegrationOptions opt;
  opt.step_size = 1e-3;
  opt.max_time = 3.0;
  const HybridArc arc = integrate(decay_system(), Vec::Constant(1, 2.0), opt);
  const ArcMetrics m = arc_metrics(arc, Vec::Zero(1), 0.2);
  REQUIRE(m.total_jumps == 0);
  REQUIRE(m.final_distance == Approx(2.0 * std::exp(-3.0)).margin(1e-9));
  // The tail mean sits between the final value and the value at the tail start.
  REQUIRE(m.tail_mean_distance >= m.final_distance);
  REQUIRE(m.tail_mean_distance <= 2.0 * std::exp(-2.4) + 1e-9);
  REQUIRE(m.tail_peak_to_peak[0] ==
          Approx(2.0 * (std::exp(-2.4) - std::exp(-3.0))).margin(1e-6));

  REQUIRE_THROWS_AS(arc_metrics(arc, Vec::Zero(2)), std::invalid_argument);
}

TEST_CASE("first entry time finds the ball crossing", "[hds]") {
  IntegrationOptions opt;
  opt.step_size = 1e-3;
  opt.max_time = 3.0;
  const HybridArc arc = integrate(decay_system(), Vec::Constant(1, 2.0), opt);
  // 2 exp(-t) meets radius 1 at t = ln 2.
  const double entry = first_entry_time(arc, Vec::Zero(1), 1.0);
  REQUIRE(entry == Approx(std::log(2.0)).margin(2e-3));
  REQUIRE(first_entry_time(arc, Vec::Zero(1), 1e-6) ==
          std::numeric_limits<double>::infinity());

  // Projected variant: only the selected coordinate counts.
  HybridSystem sys;
  sys.state_dim = 2;
  sys.flow_map = [](const Vec& x) { return (Vec(2) << 0.0, -x[1]).finished(); };
  sys.flow_set = [](const Vec&) { return true; };
  sys.jump_set = [](const Vec&) { return false; };
  sys.jump_map = [](const Vec&) { return std::vector<JumpOption>{}; };
  const HybridArc arc2 = integrate(sys, (Vec(2) << 50.0, 2.0).finished(), opt);
  const double projected = first_entry_time(arc2, Vec::Zero(1), 1.0, {1});
  REQUIRE(projected == Approx(std::log(2.0)).margin(2e-3));
  REQUIRE(first_entry_time(arc2, Vec::Zero(2), 1.0) ==
          std::numeric_limits<double>::infinity());
}
