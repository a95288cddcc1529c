#include <catch2/catch_amalgamated.hpp>

#include "gnes/example_games.hpp"
#include "gnes/zeroth_order.hpp"

#include <cmath>
#include <memory>
#include <numbers>

using namespace gnes;
using Catch::Approx;

namespace {

/// One player minimizing (u - 1)^2, no constraints.
Game scalar_quadratic() {
  Game game;
  game.name = "scalar_quadratic";
  game.dims = {1};
  game.costs = {[](const Vec& u) { return (u[0] - 1.0) * (u[0] - 1.0); }};
  game.gamma = Vec::Ones(1);
  return game;
}

EsParams scalar_es() {
  EsParams p;
  p.nu = Vec::Constant(1, 0.5);
  p.eps = Vec::Constant(1, 0.5);
  p.estimated = {true};
  p.amplitudes = {{0.1, -1}};
  p.frequencies = Vec::Constant(1, 7.0);
  p.phases = Vec::Zero(1);
  p.signs = Vec::Ones(1);
  p.adaptive = AdaptiveParams{1.0, 1.0, 0.0, 0.1};
  return p;
}

}  // namespace

TEST_CASE("es parameter validation", "[zeroth_order]") {
  const Game game = two_player_monotone();
  EsParams good = two_player_es_defaults();
  REQUIRE_NOTHROW(validate_es_params(game, good));

  SECTION("per-player arrays must match the player count") {
    EsParams p = good;
    p.nu = Vec::Constant(1, 0.2);
    REQUIRE_THROWS_AS(validate_es_params(game, p), EsParamError);
    p = good;
    p.estimated = {true};
    REQUIRE_THROWS_AS(validate_es_params(game, p), EsParamError);
  }

  SECTION("per-coordinate arrays must match the estimated count") {
    EsParams p = good;
    p.frequencies = Vec::Constant(1, 11.0);
    REQUIRE_THROWS_AS(validate_es_params(game, p), EsParamError);
  }

  SECTION("signs are unit, amplitudes positive, frequencies positive") {
    EsParams p = good;
    p.signs[0] = 0.5;
    REQUIRE_THROWS_AS(validate_es_params(game, p), EsParamError);
    p = good;
    p.amplitudes[0] = {0.0, -1};
    REQUIRE_THROWS_AS(validate_es_params(game, p), EsParamError);
    p = good;
    p.amplitudes[0] = {0.0, 9};
    REQUIRE_THROWS_AS(validate_es_params(game, p), EsParamError);
    p = good;
    p.frequencies[0] = -1.0;
    REQUIRE_THROWS_AS(validate_es_params(game, p), EsParamError);
  }

  SECTION("shared frequencies need the override plus a separating phase or sign") {
    EsParams p = good;
    p.frequencies = Vec::Constant(2, 11.0);
    REQUIRE_THROWS_AS(validate_es_params(game, p), EsParamError);
    p.allow_shared_frequencies = true;
    REQUIRE_THROWS_AS(validate_es_params(game, p), EsParamError);
    p.signs[1] = -1.0;
    REQUIRE_NOTHROW(validate_es_params(game, p));
    p.signs[1] = 1.0;
    p.phases[1] = 0.5 * std::numbers::pi;
    REQUIRE_NOTHROW(validate_es_params(game, p));
  }
}

TEST_CASE("estimated coordinates are the flagged players' blocks", "[zeroth_order]") {
  Game game;
  game.dims = {2, 1, 3};
  game.costs.resize(3, [](const Vec&) { return 0.0; });
  game.gamma = Vec::Ones(3);
  REQUIRE(estimated_coordinates(game, {true, false, true}) ==
          std::vector<int>{0, 1, 3, 4, 5});
  REQUIRE(estimated_coordinates(game, {false, true, false}) == std::vector<int>{2});
}

TEST_CASE("dither lands on the estimated coordinates only", "[zeroth_order]") {
  const Game game = two_player_monotone();
  EsParams p = two_player_es_defaults();
  p.estimated = {true, false};
  p.amplitudes = {{0.25, -1}};
  p.frequencies = Vec::Constant(1, 11.0);
  p.phases = Vec::Zero(1);
  p.signs = Vec::Constant(1, -1.0);
  const EsLayout layout{2, 2, estimated_coordinates(game, p.estimated)};
  REQUIRE(layout.n_est() == 1);
  REQUIRE(layout.dim() == 2 * 2 + 4 * 2 + 3);

  Vec x = Vec::Zero(layout.dim());
  x[layout.u_off() + 0] = 1.0;
  x[layout.u_off() + 1] = 2.0;
  x[layout.mu_off() + 0] = 0.8;  // cos component
  x[layout.mu_off() + 1] = 0.6;
  const Vec input = perturbed_input(layout, p, x);
  REQUIRE(input[0] == Approx(1.0 + 0.25 * (-1.0) * 0.8));
  REQUIRE(input[1] == 2.0);
}

TEST_CASE("live amplitudes read the configured primal coordinate", "[zeroth_order]") {
  const Game game = two_player_monotone();
  EsParams p = two_player_es_defaults();
  p.estimated = {true, false};
  p.amplitudes = {{0.0, 1}};  // amplitude taken from u1
  p.frequencies = Vec::Constant(1, 11.0);
  p.phases = Vec::Zero(1);
  p.signs = Vec::Ones(1);
  const EsLayout layout{2, 2, estimated_coordinates(game, p.estimated)};

  Vec x = Vec::Zero(layout.dim());
  x[layout.u_off() + 1] = 0.75;
  x[layout.mu_off() + 0] = 1.0;
  REQUIRE(amplitude_at(layout, p, x, 0) == 0.75);
  REQUIRE(perturbed_input(layout, p, x)[0] == Approx(0.75));

  x[layout.u_off() + 1] = -0.1;
  REQUIRE_THROWS_AS(amplitude_at(layout, p, x, 0), AmplitudeOutOfRange);
}

TEST_CASE("one measurement serves every coordinate of a player", "[zeroth_order]") {
  Game game;
  game.name = "counting";
  game.dims = {2};
  auto calls = std::make_shared<int>(0);
  game.costs = {[calls](const Vec& u) {
    ++*calls;
    return u[0] * u[0] + u[1];
  }};
  game.gamma = Vec::Ones(1);

  EsParams p;
  p.nu = Vec::Constant(1, 0.2);
  p.eps = Vec::Constant(1, 0.2);
  p.estimated = {true};
  p.amplitudes = {{0.1, -1}, {0.1, -1}};
  p.frequencies = (Vec(2) << 11.0, 21.0).finished();
  p.phases = Vec::Zero(2);
  p.signs = Vec::Ones(2);
  p.adaptive = AdaptiveParams{1.0, 1.0, 0.0, 0.1};
  const EsLayout layout{2, 0, estimated_coordinates(game, p.estimated)};

  Vec x = Vec::Zero(layout.dim());
  x[layout.mu_off() + 0] = 1.0;
  x[layout.mu_off() + 2] = 1.0;
  const Vec est = estimate_pseudogradient(game, layout, p, x);
  REQUIRE(est.size() == 2);
  REQUIRE(*calls == 1);
}

TEST_CASE("flow couples filters, duals and oscillators as configured",
          "[zeroth_order]") {
  const Game game = two_player_monotone();
  EsParams p = two_player_es_defaults();
  p.estimated = {true, false};
  p.amplitudes = {{0.1, -1}};
  p.frequencies = Vec::Constant(1, 11.0);
  p.phases = Vec::Zero(1);
  p.signs = Vec::Ones(1);
  const EsLayout layout{2, 2, estimated_coordinates(game, p.estimated)};

  Vec x = Vec::Zero(layout.dim());
  x[layout.u_off() + 0] = 1.0;
  x[layout.u_off() + 1] = -1.0;
  x[layout.z_off() + 0] = 1.0;
  x[layout.z_off() + 1] = -1.0;
  x[layout.lambda_off() + 0] = 0.3;
  x[layout.lambda_off() + 1] = 0.2;
  x[layout.k_off() + 0] = 2.0;
  x[layout.k_off() + 1] = 2.0;
  x[layout.s_off() + 0] = 1.0;
  x[layout.zeta_off()] = 99.0;
  x[layout.mu_off() + 0] = 0.6;
  x[layout.mu_off() + 1] = 0.8;

  const Vec dx = zeroth_order_rhs(game, layout, p, x);

  // Estimated player: the filter state replaces the gradient; u = z so the
  // primal rate reduces to -gamma (h + jac^T lambda), scaled by nu eps.
  const Mat jac = constraint_jacobian(game, x.head(2));
  const Vec dual_term = jac.transpose() * x.segment(layout.lambda_off(), 2);
  REQUIRE(dx[layout.u_off() + 0] ==
          Approx(0.2 * 0.2 * -(99.0 + dual_term[0])).margin(1e-12));
  // Analytic player: partial gradient 2 - u1 at the undithered input.
  REQUIRE(dx[layout.u_off() + 1] ==
          Approx(0.2 * 0.2 * -((2.0 - 1.0) + dual_term[1])).margin(1e-12));

  // Dual-side rates carry nu0 eps0 and the per-constraint gains.
  const Vec g = constraint_values(game, x.head(2));
  REQUIRE(dx[layout.lambda_off() + 0] ==
          Approx(0.2 * 0.2 * 2.0 * 0.3 * (g[0] - 0.3 + 0.0)).margin(1e-12));
  REQUIRE(dx[layout.w_off() + 1] == Approx(0.2 * 0.2 * (0.2 - 0.0)).margin(1e-12));

  // Gain growth only for the increasing mode, scaled like the duals.
  REQUIRE(dx[layout.k_off() + 0] == Approx(0.2 * 0.2 * p.adaptive.c).margin(1e-12));
  REQUIRE(dx[layout.k_off() + 1] == 0.0);

  // The filter chases the demodulated estimate at rate nu.
  const Vec est = estimate_pseudogradient(game, layout, p, x);
  REQUIRE(dx[layout.zeta_off()] == Approx(0.2 * (-99.0 + est[0])).margin(1e-9));

  // Oscillator pair rotates at 2 pi kappa.
  const double omega = 2.0 * std::numbers::pi * 11.0;
  REQUIRE(dx[layout.mu_off() + 0] == Approx(-omega * 0.8));
  REQUIRE(dx[layout.mu_off() + 1] == Approx(omega * 0.6));
}

TEST_CASE("jumps never touch filter or oscillator states", "[zeroth_order]") {
  const Game game = two_player_monotone();
  const EsParams p = two_player_es_defaults();
  const BuiltZerothOrder built = build_zeroth_order_system(game, p);
  const EsLayout& layout = built.layout;

  // u = 0 overshoots the first constraint; the armed mode must fire.
  Vec x = pack_initial_state(layout, p, Vec::Zero(2), Vec::Zero(2),
                             Vec::Constant(2, 0.1), Vec::Zero(2), Vec::Ones(2),
                             Vec::Constant(2, -1.0), (Vec(2) << 3.0, -4.0).finished());
  REQUIRE(built.system.jump_set(x));
  const auto options = built.system.jump_map(x);
  REQUIRE(options.size() == 1);
  REQUIRE(options[0].index == 0);
  REQUIRE(options[0].subcase == kJumpArmToOn);
  const Vec& next = options[0].state;
  REQUIRE(next[layout.s_off() + 0] == 1.0);
  // Everything except the switched mode is bit-identical.
  Vec diff = (next - x).cwiseAbs();
  diff[layout.s_off() + 0] = 0.0;
  REQUIRE(diff.maxCoeff() == 0.0);
}

TEST_CASE("oscillators stay on the unit circle over long runs", "[zeroth_order]") {
  const Game game = two_player_monotone();
  EsParams p = two_player_es_defaults();
  p.adaptive = AdaptiveParams{1.0, 1.0, 0.0, 0.1};  // frozen gains, no jumps
  const BuiltZerothOrder built = build_zeroth_order_system(game, p);
  const EsLayout& layout = built.layout;

  const Vec x0 = pack_initial_state(layout, p, Vec::Zero(2), Vec::Zero(2),
                                    Vec::Constant(2, 0.1), Vec::Zero(2),
                                    Vec::Ones(2), Vec::Zero(2), Vec::Zero(2));
  IntegrationOptions opt;
  opt.step_size = 2e-3;
  opt.max_time = 100.0;
  opt.record_stride = 50;
  const HybridArc arc = integrate(built.system, x0, opt);

  for (const Vec& x : arc.states) {
    for (int c = 0; c < layout.n_est(); ++c) {
      const double norm =
          std::hypot(x[layout.mu_off() + 2 * c], x[layout.mu_off() + 2 * c + 1]);
      REQUIRE(std::abs(norm - 1.0) <= 1e-12);
    }
  }
  // The raw per-step drift the renormalisation absorbed stays tiny.
  REQUIRE(*built.oscillator_drift < 1e-4);
  REQUIRE(*built.oscillator_drift > 0.0);
}

TEST_CASE("averaging window snaps to a common period", "[zeroth_order]") {
  REQUIRE(detail::commensurate_window((Vec(2) << 11.0, 21.0).finished(), 5) ==
          Approx(1.0));
  REQUIRE(detail::commensurate_window((Vec(2) << 11.0, 21.0).finished(), 33) ==
          Approx(3.0));
  REQUIRE(detail::commensurate_window(Vec::Constant(1, 0.5), 4) == Approx(8.0));
  // Equal frequencies need no stretching at all.
  REQUIRE(detail::commensurate_window(Vec::Constant(3, 2.0), 7) == Approx(3.5));
}

TEST_CASE("estimator average is exact for quadratic costs", "[zeroth_order]") {
  const Game game = scalar_quadratic();
  const EsParams p = scalar_es();
  const EstimatorBiasReport report =
      estimator_bias_probe(game, p, Vec::Constant(1, 2.0), 7, 256);
  REQUIRE(report.window == Approx(1.0));
  REQUIRE(report.truth[0] == Approx(2.0).margin(1e-9));
  // Averaged over whole periods the only surviving term is the gradient; for
  // a quadratic the higher-order remainder vanishes identically, leaving just
  // the rectangle-rule quadrature floor.
  REQUIRE(report.bias[0] < 1e-9);
}

TEST_CASE("estimator bias shrinks with the dither amplitude", "[zeroth_order]") {
  // A quartic cost has a genuine O(a^2) bias term; halving the amplitude must
  // shrink the bias by about four.
  Game game;
  game.name = "scalar_quartic";
  game.dims = {1};
  game.costs = {[](const Vec& u) { return std::pow(u[0], 4); }};
  game.gamma = Vec::Ones(1);

  auto bias_at = [&](double a) {
    EsParams p = scalar_es();
    p.amplitudes = {{a, -1}};
    return estimator_bias_probe(game, p, Vec::Constant(1, 1.0), 7, 512).bias[0];
  };
  const double b1 = bias_at(0.2);
  const double b2 = bias_at(0.1);
  REQUIRE(b1 > 1e-4);  // the quartic really is biased
  REQUIRE(b2 < 0.5 * b1);
  REQUIRE(b2 == Approx(0.25 * b1).epsilon(0.05));
}

TEST_CASE("bilinear game estimates are unbiased at distinct frequencies",
          "[zeroth_order]") {
  const Game game = two_player_monotone();
  const EsParams p = two_player_es_defaults();
  const EstimatorBiasReport report =
      estimator_bias_probe(game, p, Vec::Zero(2), 33, 512);
  REQUIRE(report.window == Approx(3.0));
  REQUIRE(report.truth[0] == Approx(3.0));
  REQUIRE(report.truth[1] == Approx(2.0));
  REQUIRE(report.bias.maxCoeff() < 1e-9);
}

TEST_CASE("oscillation amplitude measures trailing peak-to-peak height",
          "[zeroth_order]") {
  std::vector<double> t;
  std::vector<double> v;
  for (int i = 0; i <= 10000; ++i) {
    const double ti = 0.001 * i;
    t.push_back(ti);
    v.push_back(3.0 + std::sin(2.0 * std::numbers::pi * ti));
  }
  REQUIRE(oscillation_amplitude(t, v, 1.0, 5) == Approx(2.0).margin(1e-4));

  // A short series cannot support the measurement.
  std::vector<double> t_short(t.begin(), t.begin() + 1500);
  std::vector<double> v_short(v.begin(), v.begin() + 1500);
  REQUIRE_THROWS_AS(oscillation_amplitude(t_short, v_short, 1.0, 5),
                    TailTooShort);
  REQUIRE_THROWS_AS(oscillation_amplitude({}, {}, 1.0), std::invalid_argument);
}
