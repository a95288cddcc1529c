#pragma once

// Structural invariant checks on completed runs: hybrid time domains, dual
// sign, mode and gain discipline, jump legality and oscillator norms. The
// checks only use what any faithful implementation must satisfy, so they stay
// meaningful across parameter changes.

#include "gnes/adaptive.hpp"
#include "gnes/scenario.hpp"
#include "gnes/zeroth_order.hpp"

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace gnes {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<Check> checks;
  [[nodiscard]] bool passed() const {
    for (const Check& c : checks) {
      if (!c.passed) return false;
    }
    return true;
  }
  void add(const std::string& name, bool ok, const std::string& detail) {
    checks.push_back({name, ok, detail});
  }
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace detail

/// Runs every applicable invariant check for the scenario's algorithm on the
/// recorded arc.
inline VerifyReport verify_run(const Scenario& sc, const HybridArc& arc) {
  VerifyReport report;
  const int m = sc.game.dim();
  const int q = sc.game.n_constraints();
  const bool hybrid = sc.algorithm != Algorithm::FullInfo;
  const AdaptiveParams& ap =
      sc.algorithm == Algorithm::ZerothOrder ? sc.es.adaptive : sc.adaptive;
  const double gain_scale =
      sc.algorithm == Algorithm::ZerothOrder ? sc.es.nu0 * sc.es.eps0 : 1.0;

  // Hybrid time domain: t nondecreasing; j increments exactly at jump samples.
  {
    bool ok = true;
    std::string detail = "t nondecreasing, j increments at jumps";
    for (std::size_t i = 1; i < arc.times.size() && ok; ++i) {
      const double dt = arc.times[i].t - arc.times[i - 1].t;
      const long dj = arc.times[i].j - arc.times[i - 1].j;
      if (dt < 0.0 || dj < 0 || dj > 1 || (dj == 1 && dt != 0.0)) {
        ok = false;
        detail = "violated at sample " + std::to_string(i);
      }
    }
    report.add("hybrid_time_domain", ok, detail);
  }

  // States stay finite.
  {
    bool ok = true;
    for (const Vec& x : arc.states) {
      if (!x.allFinite()) {
        ok = false;
        break;
      }
    }
    report.add("finite_states", ok, ok ? "all samples finite" : "non-finite sample");
  }

  // Duals never go negative (exact zero is allowed once they underflow).
  {
    double worst = 0.0;
    for (const Vec& x : arc.states) {
      worst = std::min(worst, x.segment(2 * m, q).minCoeff());
    }
    report.add("dual_nonnegative", worst >= 0.0, "min dual " + detail::fmt(worst));
  }

  if (hybrid) {
    const AdaptiveLayout al{m, q};

    // Modes take only the three hysteresis values.
    {
      bool ok = true;
      for (const Vec& x : arc.states) {
        for (int j = 0; j < q; ++j) {
          const double s = x[al.s_off() + j];
          if (s != -1.0 && s != 0.0 && s != 1.0) ok = false;
        }
      }
      report.add("modes_valid", ok, ok ? "modes in {-1,0,1}" : "unexpected mode value");
    }

    // Gains stay inside [k_min, k_max] and never decrease.
    {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      bool monotone = true;
      for (std::size_t i = 0; i < arc.states.size(); ++i) {
        const Vec k = arc.states[i].segment(al.k_off(), q);
        lo = std::min(lo, k.minCoeff());
        hi = std::max(hi, k.maxCoeff());
        if (i > 0) {
          const Vec kp = arc.states[i - 1].segment(al.k_off(), q);
          if (((k - kp).array() < -1e-12).any()) monotone = false;
        }
      }
      const bool ok = monotone && lo >= ap.k_min - 1e-9 && hi <= ap.k_max + 1e-9;
      report.add("gain_bounds", ok,
                 "k range [" + detail::fmt(lo) + ", " + detail::fmt(hi) +
                     "], monotone=" + (monotone ? "yes" : "no"));
    }

    // Between records (jumps always force one), the gain slope is either zero
    // or exactly c (time-scaled); the interval where a gain hits the cap may
    // show a partial slope.
    {
      const double c_eff = ap.c * gain_scale;
      bool ok = true;
      std::string detail_msg = "slopes in {0, " + detail::fmt(c_eff) + "}";
      for (std::size_t i = 1; i < arc.states.size() && ok; ++i) {
        if (arc.times[i].j != arc.times[i - 1].j) continue;
        const double dt = arc.times[i].t - arc.times[i - 1].t;
        if (dt <= 0.0) continue;
        for (int j = 0; j < q; ++j) {
          const double slope =
              (arc.states[i][al.k_off() + j] - arc.states[i - 1][al.k_off() + j]) / dt;
          const double tol = 1e-6 * std::max(1.0, c_eff);
          const bool zero = std::abs(slope) <= tol;
          const bool full = std::abs(slope - c_eff) <= tol;
          const bool capped =
              std::abs(arc.states[i][al.k_off() + j] - ap.k_max) <= 1e-9 &&
              slope >= -tol && slope <= c_eff + tol;
          if (!zero && !full && !capped) {
            ok = false;
            detail_msg = "slope " + detail::fmt(slope) + " at sample " +
                         std::to_string(i) + ", gain " + std::to_string(j);
            break;
          }
        }
      }
      report.add("gain_slopes", ok, detail_msg);
    }

    // Jump records: the pre state must satisfy the fired condition, and only
    // the mode (plus the gain clamp at a stop) may change.
    {
      bool ok = true;
      std::string detail_msg = std::to_string(arc.jumps.size()) + " jumps legal";
      const double band_tol = 1e-9 * std::max(1.0, ap.epsilon);
      for (const JumpRecord& rec : arc.jumps) {
        const Vec g = constraint_values(sc.game, rec.pre.head(m));
        const int j = rec.applied_index;
        const int mode = mode_of(rec.pre[al.s_off() + j]);
        bool legal = false;
        switch (rec.applied_subcase) {
          case kJumpArmToOn:
            legal = mode == -1 && g[j] >= 2.0 * ap.epsilon - band_tol;
            break;
          case kJumpOnToArm:
            legal = mode == 1 && g[j] <= ap.epsilon + band_tol;
            break;
          case kJumpStop:
            legal = mode != 0 && rec.pre[al.k_off() + j] >= ap.k_max - 1e-9;
            break;
          default: legal = false;
        }
        Vec diff = (rec.post - rec.pre).cwiseAbs();
        diff[al.s_off() + j] = 0.0;
        if (rec.applied_subcase == kJumpStop) diff[al.k_off() + j] = 0.0;
        if (!legal || diff.maxCoeff() != 0.0) {
          ok = false;
          detail_msg = "jump at t=" + detail::fmt(rec.when.t) + " on index " +
                       std::to_string(j) + " illegal";
          break;
        }
      }
      report.add("jump_legality", ok, detail_msg);
    }
  }

  if (sc.algorithm == Algorithm::ZerothOrder) {
    EsLayout layout{m, q, estimated_coordinates(sc.game, sc.es.estimated)};
    double worst = 0.0;
    for (const Vec& x : arc.states) {
      for (int c = 0; c < layout.n_est(); ++c) {
        const double norm = std::hypot(x[layout.mu_off() + 2 * c],
                                       x[layout.mu_off() + 2 * c + 1]);
        worst = std::max(worst, std::abs(norm - 1.0));
      }
    }
    report.add("oscillator_norms", worst <= 1e-9,
               "max |norm - 1| = " + detail::fmt(worst));
  }

  // Monotonicity probe over the oracle box, when one is configured.
  if (sc.ref_mode == ReferenceMode::Oracle) {
    const MonotonicityReport probe =
        monotonicity_probe(sc.game, sc.oracle_box, 2000, sc.integration.rng_seed);
    report.add("monotone_pseudogradient", probe.passed(1e-9),
               "min pairing " + detail::fmt(probe.min_inner_product));
  }

  return report;
}

}  // namespace gnes
