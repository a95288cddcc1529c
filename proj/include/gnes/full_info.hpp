#pragma once

// Projection-free primal-dual flow with filtered primal and dual states:
//   u'      = -u + z - Gamma (F(u) + J_g(u)^T lambda)
//   z'      = -z + u
//   lambda' = diag(lambda) (g(u) - lambda + w)
//   w'      = -w + lambda
// The multiplicative dual dynamics keep lambda > 0 invariant, so no projection
// is needed. Also provides the energy function certified to decrease along the
// flow, stationary-point classification, and linearization helpers.

#include "gnes/game.hpp"
#include "gnes/hds.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>
#include <string>

namespace gnes {

class NegativeDualState : public std::runtime_error {
 public:
  explicit NegativeDualState(const std::string& what) : std::runtime_error(what) {}
};

class NotStationary : public std::runtime_error {
 public:
  explicit NotStationary(const std::string& what) : std::runtime_error(what) {}
};

class InvalidReference : public std::runtime_error {
 public:
  explicit InvalidReference(const std::string& what) : std::runtime_error(what) {}
};

/// Unpacked view of the stacked flow state (u, z, lambda, w).
struct GneState {
  Vec u;
  Vec z;
  Vec lambda;
  Vec w;
};

/// Offsets of the (u, z, lambda, w) blocks inside the stacked vector.
struct GneLayout {
  int m = 0;
  int q = 0;
  [[nodiscard]] int dim() const { return 2 * m + 2 * q; }
  [[nodiscard]] int u_off() const { return 0; }
  [[nodiscard]] int z_off() const { return m; }
  [[nodiscard]] int lambda_off() const { return 2 * m; }
  [[nodiscard]] int w_off() const { return 2 * m + q; }

  [[nodiscard]] GneState unpack(const Vec& x) const {
    if (x.size() != dim()) throw std::invalid_argument("unpack: dimension mismatch");
    return {x.segment(u_off(), m), x.segment(z_off(), m), x.segment(lambda_off(), q),
            x.segment(w_off(), q)};
  }
  [[nodiscard]] Vec pack(const GneState& s) const {
    if (s.u.size() != m || s.z.size() != m || s.lambda.size() != q || s.w.size() != q) {
      throw std::invalid_argument("pack: block dimension mismatch");
    }
    Vec x(dim());
    x.segment(u_off(), m) = s.u;
    x.segment(z_off(), m) = s.z;
    x.segment(lambda_off(), q) = s.lambda;
    x.segment(w_off(), q) = s.w;
    return x;
  }
  /// Indices of the u block, for projected distance metrics.
  [[nodiscard]] std::vector<int> u_coords() const {
    std::vector<int> coords(static_cast<std::size_t>(m));
    for (int c = 0; c < m; ++c) coords[static_cast<std::size_t>(c)] = c;
    return coords;
  }
};

/// Stacked right-hand side of the flow at x, with per-constraint dual gains k
/// (identity when empty).
inline Vec primal_dual_rhs(const Game& game, const GneLayout& layout, const Vec& x,
                           const Vec& k = Vec()) {
  const GneState s = layout.unpack(x);
  const Vec f = pseudogradient(game, s.u);
  const Vec g = constraint_values(game, s.u);
  const Mat jac = constraint_jacobian(game, s.u);
  const Vec gamma = game.gamma_per_coord();

  Vec dx(layout.dim());
  dx.segment(layout.u_off(), layout.m) =
      -s.u + s.z - gamma.cwiseProduct(f + jac.transpose() * s.lambda);
  dx.segment(layout.z_off(), layout.m) = -s.z + s.u;
  Vec dual_rate = s.lambda.cwiseProduct(g - s.lambda + s.w);
  if (k.size() > 0) {
    if (k.size() != layout.q) throw std::invalid_argument("dual gain size mismatch");
    dual_rate = k.cwiseProduct(dual_rate);
  }
  dx.segment(layout.lambda_off(), layout.q) = dual_rate;
  dx.segment(layout.w_off(), layout.q) = -s.w + s.lambda;
  return dx;
}

/// Clamps tiny negative duals (integration round-off) back to zero and rejects
/// genuinely negative ones. The flow cannot cross zero exactly, so anything
/// below the tolerance indicates a broken configuration or too large a step.
inline void clamp_duals(Vec& x, const GneLayout& layout, double tol = 1e-12) {
  for (int kidx = 0; kidx < layout.q; ++kidx) {
    double& lam = x[layout.lambda_off() + kidx];
    if (lam < 0.0) {
      if (lam < -tol) {
        throw NegativeDualState("dual state " + std::to_string(kidx) +
                                " went negative (" + std::to_string(lam) + ")");
      }
      lam = 0.0;
    }
  }
}

/// Continuous-time system for the flow above; no jumps, flow set everywhere.
struct BuiltFullInfo {
  HybridSystem system;
  GneLayout layout;
};

inline BuiltFullInfo build_full_info_system(const Game& game) {
  validate_game(game);
  GneLayout layout{game.dim(), game.n_constraints()};
  HybridSystem sys;
  sys.state_dim = layout.dim();
  // The game is captured by value so the system owns everything it evaluates.
  sys.flow_map = [game, layout](const Vec& x) {
    return primal_dual_rhs(game, layout, x);
  };
  sys.flow_set = [](const Vec&) { return true; };
  sys.jump_set = [](const Vec&) { return false; };
  sys.jump_map = [](const Vec&) { return std::vector<JumpOption>{}; };
  sys.post_flow_step = [layout](Vec& x) { clamp_duals(x, layout); };
  return {std::move(sys), layout};
}

/// How a stationary point of the flow relates to the first-order conditions:
/// Satisfies them (u = z, w = lambda, stationarity and feasibility hold), is
/// merely stationary because some dual sits at zero against a violated
/// constraint, or is not stationary at all.
enum class StationaryClass { NotStationary, StationaryNotOptimal, FirstOrderPoint };

inline const char* to_string(StationaryClass c) {
  switch (c) {
    case StationaryClass::NotStationary: return "not_stationary";
    case StationaryClass::StationaryNotOptimal: return "stationary_not_optimal";
    case StationaryClass::FirstOrderPoint: return "first_order_point";
  }
  return "unknown";
}

inline StationaryClass classify_stationary_point(const Game& game,
                                                 const GneLayout& layout, const Vec& x,
                                                 double tol = 1e-6) {
  const Vec rhs = primal_dual_rhs(game, layout, x);
  if (rhs.lpNorm<Eigen::Infinity>() > tol) return StationaryClass::NotStationary;
  const GneState s = layout.unpack(x);
  if (kkt_residual(game, {s.u, s.lambda}) <= tol) return StationaryClass::FirstOrderPoint;
  return StationaryClass::StationaryNotOptimal;
}

/// Energy of the flow relative to a reference first-order point: squared
/// gain-weighted distances of u and z to the primal reference, of w to the dual
/// reference, and a relative-entropy term for lambda. Dual weights 1/k_j allow
/// per-constraint gains. Finite only on lambda > 0 when the reference dual has
/// positive entries; entries with zero reference dual contribute lambda_j / k_j.
inline double lyapunov_value(const Game& game, const GneLayout& layout, const Vec& x,
                             const KktPoint& ref, const Vec& k = Vec()) {
  if (ref.u.size() != layout.m || ref.lambda.size() != layout.q) {
    throw InvalidReference("reference dimension mismatch");
  }
  if ((ref.lambda.array() < 0.0).any()) {
    throw InvalidReference("reference dual must be nonnegative");
  }
  const GneState s = layout.unpack(x);
  const Vec inv_gamma = game.gamma_per_coord().cwiseInverse();
  double v = 0.5 * (s.u - ref.u).cwiseProduct(inv_gamma).dot(s.u - ref.u) +
             0.5 * (s.z - ref.u).cwiseProduct(inv_gamma).dot(s.z - ref.u) +
             0.5 * (s.w - ref.lambda).squaredNorm();
  for (int j = 0; j < layout.q; ++j) {
    const double kj = k.size() > 0 ? k[j] : 1.0;
    if (kj <= 0.0) throw InvalidReference("dual gains must be positive");
    const double lam = s.lambda[j];
    const double lam_ref = ref.lambda[j];
    if (lam_ref == 0.0) {
      v += lam / kj;
    } else {
      if (lam <= 0.0) return std::numeric_limits<double>::infinity();
      v += (lam - lam_ref - lam_ref * std::log(lam / lam_ref)) / kj;
    }
  }
  return v;
}

/// Jacobian of the flow at a stationary point, assembled from the analytic
/// block structure with central differences for dF/du and the constraint
/// Hessian terms. Throws NotStationary when the right-hand side is not small.
inline Mat linearize_at(const Game& game, const GneLayout& layout, const Vec& x,
                        double stationarity_tol = 1e-6, double fd_step = 1e-6) {
  const Vec rhs = primal_dual_rhs(game, layout, x);
  if (rhs.lpNorm<Eigen::Infinity>() > stationarity_tol) {
    throw NotStationary("linearization point has flow magnitude " +
                        std::to_string(rhs.lpNorm<Eigen::Infinity>()));
  }
  const int n = layout.dim();
  Mat jac(n, n);
  // Central differences on the full right-hand side; the flow is smooth on
  // lambda > 0 and the states are O(1), so a fixed step is adequate.
  Vec probe = x;
  for (int c = 0; c < n; ++c) {
    const double saved = probe[c];
    double h = fd_step * std::max(1.0, std::abs(saved));
    // Keep duals strictly positive under the probe displacement.
    if (c >= layout.lambda_off() && c < layout.lambda_off() + layout.q) {
      h = std::min(h, 0.5 * std::max(saved, fd_step));
    }
    probe[c] = saved + h;
    const Vec hi = primal_dual_rhs(game, layout, probe);
    probe[c] = saved - h;
    const Vec lo = primal_dual_rhs(game, layout, probe);
    probe[c] = saved;
    jac.col(c) = (hi - lo) / (2.0 * h);
  }
  return jac;
}

/// Largest real part over the spectrum; positive means the point is unstable
/// for the linearized flow.
inline double spectral_abscissa(const Mat& m) {
  Eigen::EigenSolver<Mat> solver(m, /*computeEigenvectors=*/false);
  return solver.eigenvalues().real().maxCoeff();
}

}  // namespace gnes
