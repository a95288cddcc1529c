#pragma once

// Scenario files: JSON descriptions of a game, an algorithm, initial states,
// integration controls and reference configuration. Running a scenario
// produces a trajectory CSV, a jump log CSV and a machine-readable summary.

#include "gnes/adaptive.hpp"
#include "gnes/csv.hpp"
#include "gnes/example_games.hpp"
#include "gnes/full_info.hpp"
#include "gnes/game.hpp"
#include "gnes/hds.hpp"
#include "gnes/zeroth_order.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnes {

using json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class Algorithm { FullInfo, Adaptive, ZerothOrder };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::FullInfo: return "full_info";
    case Algorithm::Adaptive: return "adaptive";
    case Algorithm::ZerothOrder: return "zeroth_order";
  }
  return "unknown";
}

enum class ReferenceMode { None, Oracle, Point };

/// Everything needed to reproduce one run.
struct Scenario {
  std::string name;
  std::string description;
  Game game;
  Algorithm algorithm = Algorithm::FullInfo;
  AdaptiveParams adaptive;
  EsParams es;
  Vec initial_state;
  IntegrationOptions integration;

  ReferenceMode ref_mode = ReferenceMode::None;
  KktPoint ref_point;
  Box oracle_box;
  OracleOptions oracle_options;

  double ball_radius = 0.5;
  double tail_fraction = 0.2;

  // Oil-specific extras, populated for the built-in oil games.
  bool has_oil_params = false;
  OilParams oil;

  // Estimator probe mode: no integration, just the averaged-bias measurement.
  bool probe_mode = false;
  Vec probe_u;
  long probe_periods = 33;
  long probe_samples_per_period = 512;
};

namespace detail {

inline const json& require_field(const json& j, const std::string& key,
                                 const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(where + ": missing field '" + key + "'");
  return *it;
}

inline double number_field(const json& j, const std::string& key, double fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number()) throw ConfigError("field '" + key + "' must be a number");
  return it->get<double>();
}

/// Accepts a scalar (broadcast) or an array of the expected size.
inline Vec vec_field(const json& j, const std::string& key, int size, double fallback) {
  auto it = j.find(key);
  if (it == j.end()) return Vec::Constant(size, fallback);
  if (it->is_number()) return Vec::Constant(size, it->get<double>());
  if (!it->is_array() || static_cast<int>(it->size()) != size) {
    throw ConfigError("field '" + key + "' must be a scalar or an array of length " +
                      std::to_string(size));
  }
  Vec v(size);
  for (int c = 0; c < size; ++c) v[c] = (*it)[static_cast<std::size_t>(c)].get<double>();
  return v;
}

inline Vec vec_value(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be an array");
  Vec v(static_cast<int>(j.size()));
  for (int c = 0; c < v.size(); ++c) v[c] = j[static_cast<std::size_t>(c)].get<double>();
  return v;
}

inline json to_json(const Vec& v) {
  json arr = json::array();
  for (int c = 0; c < v.size(); ++c) arr.push_back(v[c]);
  return arr;
}

/// One monomial over the full decision vector.
struct PolyTerm {
  double coeff = 0.0;
  std::vector<int> powers;
};

inline std::vector<PolyTerm> parse_poly(const json& j, int dim, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": polynomial must be a term array");
  std::vector<PolyTerm> terms;
  for (const json& tj : j) {
    PolyTerm t;
    t.coeff = require_field(tj, "coeff", where).get<double>();
    const json& pj = require_field(tj, "powers", where);
    if (!pj.is_array() || static_cast<int>(pj.size()) != dim) {
      throw ConfigError(where + ": powers must have one exponent per coordinate");
    }
    for (const json& p : pj) {
      const int e = p.get<int>();
      if (e < 0) throw ConfigError(where + ": exponents must be nonnegative");
      t.powers.push_back(e);
    }
    terms.push_back(std::move(t));
  }
  return terms;
}

inline double poly_eval(const std::vector<PolyTerm>& terms, const Vec& u) {
  double total = 0.0;
  for (const PolyTerm& t : terms) {
    double v = t.coeff;
    for (std::size_t c = 0; c < t.powers.size(); ++c) {
      for (int e = 0; e < t.powers[c]; ++e) v *= u[static_cast<int>(c)];
    }
    total += v;
  }
  return total;
}

inline double poly_partial(const std::vector<PolyTerm>& terms, const Vec& u, int coord) {
  double total = 0.0;
  for (const PolyTerm& t : terms) {
    const int e = t.powers[static_cast<std::size_t>(coord)];
    if (e == 0) continue;
    double v = t.coeff * static_cast<double>(e);
    for (std::size_t c = 0; c < t.powers.size(); ++c) {
      const int p = static_cast<int>(c) == coord ? t.powers[c] - 1 : t.powers[c];
      for (int k = 0; k < p; ++k) v *= u[static_cast<int>(c)];
    }
    total += v;
  }
  return total;
}

inline OilParams parse_oil_params(const json& j) {
  OilParams p;
  if (j.contains("wells")) {
    const json& wj = j.at("wells");
    if (!wj.is_array() || wj.size() != 4) {
      throw ConfigError("oil.wells must list four coefficient rows");
    }
    for (std::size_t i = 0; i < 4; ++i) {
      const json& row = wj[i];
      if (!row.is_array() || row.size() != 5) {
        throw ConfigError("oil.wells rows must hold five coefficients");
      }
      for (std::size_t c = 0; c < 5; ++c) p.wells[i][c] = row[c].get<double>();
    }
  }
  if (j.contains("b")) {
    const Vec b = vec_value(j.at("b"), "oil.b");
    if (b.size() != 4) throw ConfigError("oil.b needs four entries");
    for (int i = 0; i < 4; ++i) p.b[static_cast<std::size_t>(i)] = b[i];
  }
  p.x_max = number_field(j, "x_max", p.x_max);
  p.l = number_field(j, "l", p.l);
  p.a_min = number_field(j, "a_min", p.a_min);
  p.a_max = number_field(j, "a_max", p.a_max);
  p.p = number_field(j, "p", p.p);
  p.gamma = number_field(j, "gamma", p.gamma);
  return p;
}

inline Game parse_custom_game(const json& j) {
  Game game;
  game.name = j.value("name", std::string("custom"));
  const json& dims = require_field(j, "dims", "game.custom");
  for (const json& d : dims) game.dims.push_back(d.get<int>());
  const int m = game.dim();
  const json& costs = require_field(j, "costs", "game.custom");
  if (static_cast<int>(costs.size()) != game.n_players()) {
    throw ConfigError("game.custom: need one cost polynomial per player");
  }
  int player = 0;
  for (const json& cj : costs) {
    auto terms = parse_poly(cj, m, "game.custom.costs[" + std::to_string(player) + "]");
    game.costs.push_back([terms](const Vec& u) { return poly_eval(terms, u); });
    const int off = game.offset(player);
    const int block = game.dims[player];
    game.cost_gradients.push_back([terms, off, block](const Vec& u) {
      Vec g(block);
      for (int c = 0; c < block; ++c) g[c] = poly_partial(terms, u, off + c);
      return g;
    });
    ++player;
  }
  if (j.contains("constraints")) {
    int row = 0;
    for (const json& cj : j.at("constraints")) {
      const std::string where = "game.custom.constraints[" + std::to_string(row) + "]";
      if (cj.contains("affine")) {
        const json& aj = cj.at("affine");
        Vec a = vec_value(require_field(aj, "a", where), where + ".a");
        if (a.size() != m) throw ConfigError(where + ": affine row length mismatch");
        const double b = number_field(aj, "b", 0.0);
        game.constraints.push_back(
            {[a, b](const Vec& u) { return a.dot(u) + b; },
             [a](const Vec&) { return a; }});
      } else {
        auto terms = parse_poly(require_field(cj, "terms", where), m, where);
        game.constraints.push_back(
            {[terms](const Vec& u) { return poly_eval(terms, u); },
             [terms, m](const Vec& u) {
               Vec g(m);
               for (int c = 0; c < m; ++c) g[c] = poly_partial(terms, u, c);
               return g;
             }});
      }
      ++row;
    }
  }
  const Vec gamma = vec_field(j, "gamma", game.n_players(), 1.0);
  game.gamma = gamma;
  return game;
}

inline AdaptiveParams parse_adaptive(const json& j, AdaptiveParams base) {
  base.k_min = number_field(j, "k_min", base.k_min);
  base.k_max = number_field(j, "k_max", base.k_max);
  base.c = number_field(j, "c", base.c);
  base.epsilon = number_field(j, "epsilon", base.epsilon);
  return base;
}

inline EsParams parse_es(const json& j, const Game& game, EsParams base) {
  const int n = game.n_players();
  if (j.contains("nu")) base.nu = vec_field(j, "nu", n, 0.0);
  if (j.contains("eps")) base.eps = vec_field(j, "eps", n, 0.0);
  base.nu0 = number_field(j, "nu0", base.nu0);
  base.eps0 = number_field(j, "eps0", base.eps0);
  if (j.contains("estimated")) {
    const json& ej = j.at("estimated");
    if (!ej.is_array() || static_cast<int>(ej.size()) != n) {
      throw ConfigError("es.estimated needs one flag per player");
    }
    base.estimated.clear();
    for (const json& f : ej) base.estimated.push_back(f.get<bool>());
  }
  const int ne = static_cast<int>(estimated_coordinates(game, base.estimated).size());
  if (j.contains("amplitudes")) {
    const json& aj = j.at("amplitudes");
    base.amplitudes.clear();
    if (aj.is_number()) {
      base.amplitudes.assign(static_cast<std::size_t>(ne), {aj.get<double>(), -1});
    } else {
      if (!aj.is_array() || static_cast<int>(aj.size()) != ne) {
        throw ConfigError("es.amplitudes needs one entry per estimated coordinate");
      }
      for (const json& a : aj) {
        if (a.is_number()) {
          base.amplitudes.push_back({a.get<double>(), -1});
        } else {
          base.amplitudes.push_back(
              {0.0, require_field(a, "from_coordinate", "es.amplitudes").get<int>()});
        }
      }
    }
  }
  if (j.contains("frequencies")) base.frequencies = vec_field(j, "frequencies", ne, 0.0);
  if (j.contains("phases")) base.phases = vec_field(j, "phases", ne, 0.0);
  if (j.contains("signs")) base.signs = vec_field(j, "signs", ne, 1.0);
  base.allow_shared_frequencies =
      j.value("allow_shared_frequencies", base.allow_shared_frequencies);
  if (j.contains("adaptive")) base.adaptive = parse_adaptive(j.at("adaptive"), base.adaptive);
  return base;
}

inline IntegrationOptions parse_integration(const json& j, IntegrationOptions base) {
  base.step_size = number_field(j, "step_size", base.step_size);
  base.max_time = number_field(j, "max_time", base.max_time);
  base.max_jumps = static_cast<long>(number_field(j, "max_jumps",
                                                  static_cast<double>(base.max_jumps)));
  base.max_consecutive_jumps = static_cast<int>(number_field(
      j, "max_consecutive_jumps", static_cast<double>(base.max_consecutive_jumps)));
  base.jump_priority = j.value("jump_priority", base.jump_priority);
  base.rng_seed = static_cast<std::uint64_t>(
      number_field(j, "rng_seed", static_cast<double>(base.rng_seed)));
  base.record_stride = static_cast<long>(
      number_field(j, "record_stride", static_cast<double>(base.record_stride)));
  base.dense_tail_start = number_field(j, "dense_tail_start", base.dense_tail_start);
  base.dense_tail_stride = static_cast<long>(number_field(
      j, "dense_tail_stride", static_cast<double>(base.dense_tail_stride)));
  base.ordered_jumps = j.value("ordered_jumps", base.ordered_jumps);
  return base;
}

}  // namespace detail

/// Parses a scenario document. Unknown games, dimension mismatches and missing
/// required fields raise ConfigError.
inline Scenario parse_scenario(const json& doc) {
  Scenario sc;
  if (doc.value("schema_version", 1) != 1) {
    throw ConfigError("unsupported schema_version");
  }
  sc.name = doc.value("name", std::string("unnamed"));
  sc.description = doc.value("description", std::string());

  const json& gj = detail::require_field(doc, "game", "scenario");
  if (gj.contains("builtin")) {
    const std::string which = gj.at("builtin").get<std::string>();
    if (which == "two_player_monotone") {
      sc.game = two_player_monotone();
    } else if (which == "oil_extraction") {
      sc.oil = gj.contains("oil") ? detail::parse_oil_params(gj.at("oil")) : OilParams{};
      sc.game = oil_extraction(sc.oil);
      sc.has_oil_params = true;
    } else if (which == "oil_extraction_wells_only") {
      sc.oil = gj.contains("oil") ? detail::parse_oil_params(gj.at("oil")) : OilParams{};
      sc.game = oil_extraction_wells_only(sc.oil);
      sc.has_oil_params = true;
    } else {
      throw ConfigError("unknown builtin game '" + which + "'");
    }
  } else if (gj.contains("custom")) {
    sc.game = detail::parse_custom_game(gj.at("custom"));
  } else {
    throw ConfigError("game needs either 'builtin' or 'custom'");
  }
  validate_game(sc.game);
  const int m = sc.game.dim();
  const int q = sc.game.n_constraints();

  const std::string alg =
      detail::require_field(doc, "algorithm", "scenario").get<std::string>();
  if (alg == "full_info") {
    sc.algorithm = Algorithm::FullInfo;
  } else if (alg == "adaptive") {
    sc.algorithm = Algorithm::Adaptive;
  } else if (alg == "zeroth_order") {
    sc.algorithm = Algorithm::ZerothOrder;
  } else {
    throw ConfigError("unknown algorithm '" + alg + "'");
  }

  sc.adaptive = AdaptiveParams{};
  if (doc.contains("adaptive")) {
    sc.adaptive = detail::parse_adaptive(doc.at("adaptive"), sc.adaptive);
  }
  if (sc.algorithm == Algorithm::ZerothOrder) {
    EsParams base;
    base.nu = Vec::Constant(sc.game.n_players(), 0.2);
    base.eps = Vec::Constant(sc.game.n_players(), 0.2);
    base.estimated.assign(static_cast<std::size_t>(sc.game.n_players()), true);
    base.adaptive = doc.contains("adaptive") ? sc.adaptive : AdaptiveParams{};
    const int ne_all = m;
    base.amplitudes.assign(static_cast<std::size_t>(ne_all), {0.1, -1});
    base.frequencies = Vec::LinSpaced(ne_all, 11.0, 11.0 + 2.0 * (ne_all - 1));
    base.phases = Vec::Zero(ne_all);
    base.signs = Vec::Ones(ne_all);
    sc.es = detail::parse_es(doc.contains("es") ? doc.at("es") : json::object(),
                             sc.game, base);
    if (doc.contains("adaptive")) sc.es.adaptive = sc.adaptive;
    validate_es_params(sc.game, sc.es);
  }

  // Probe mode replaces integration with a frozen-state estimator average.
  if (doc.contains("probe")) {
    const json& pj = doc.at("probe");
    const std::string type =
        detail::require_field(pj, "type", "probe").get<std::string>();
    if (type != "estimator_bias") throw ConfigError("unknown probe type '" + type + "'");
    if (sc.algorithm != Algorithm::ZerothOrder) {
      throw ConfigError("estimator_bias probes need algorithm zeroth_order");
    }
    sc.probe_mode = true;
    sc.probe_u = detail::vec_field(pj, "u", m, 0.0);
    sc.probe_periods = static_cast<long>(detail::number_field(pj, "n_periods", 33.0));
    sc.probe_samples_per_period =
        static_cast<long>(detail::number_field(pj, "samples_per_period", 512.0));
  }

  // Initial state, packed per algorithm.
  const json init = doc.contains("initial") ? doc.at("initial") : json::object();
  const Vec u0 = detail::vec_field(init, "u", m, 0.0);
  Vec z0 = u0;
  if (init.contains("z")) z0 = detail::vec_field(init, "z", m, 0.0);
  const Vec lambda0 = detail::vec_field(init, "lambda", q, 0.1);
  const Vec w0 = detail::vec_field(init, "w", q, 0.0);
  if ((lambda0.array() <= 0.0).any()) {
    throw ConfigError("initial.lambda must be strictly positive");
  }
  switch (sc.algorithm) {
    case Algorithm::FullInfo: {
      GneLayout layout{m, q};
      sc.initial_state = layout.pack({u0, z0, lambda0, w0});
      break;
    }
    case Algorithm::Adaptive: {
      AdaptiveLayout layout{m, q};
      const Vec k0 = detail::vec_field(init, "k", q, sc.adaptive.k_min);
      const Vec s0 = detail::vec_field(init, "s", q, -1.0);
      sc.initial_state = layout.pack({u0, z0, lambda0, w0, k0, s0});
      break;
    }
    case Algorithm::ZerothOrder: {
      EsLayout layout{m, q, estimated_coordinates(sc.game, sc.es.estimated)};
      const Vec k0 = detail::vec_field(init, "k", q, sc.es.adaptive.k_min);
      const Vec s0 = detail::vec_field(init, "s", q, -1.0);
      const Vec zeta0 = detail::vec_field(init, "zeta", layout.n_est(), 0.0);
      sc.initial_state =
          pack_initial_state(layout, sc.es, u0, z0, lambda0, w0, k0, s0, zeta0);
      break;
    }
  }

  sc.integration = detail::parse_integration(
      doc.contains("integration") ? doc.at("integration") : json::object(),
      IntegrationOptions{});

  if (doc.contains("reference")) {
    const json& rj = doc.at("reference");
    const std::string mode = rj.value("mode", std::string("none"));
    if (mode == "none") {
      sc.ref_mode = ReferenceMode::None;
    } else if (mode == "point") {
      sc.ref_mode = ReferenceMode::Point;
      sc.ref_point.u = detail::vec_field(rj, "u", m, 0.0);
      sc.ref_point.lambda = detail::vec_field(rj, "lambda", q, 0.0);
    } else if (mode == "oracle") {
      sc.ref_mode = ReferenceMode::Oracle;
      const json& bj = detail::require_field(rj, "box", "reference");
      sc.oracle_box.lo = detail::vec_field(bj, "lo", m, 0.0);
      sc.oracle_box.hi = detail::vec_field(bj, "hi", m, 0.0);
      sc.oracle_options.lambda_max =
          detail::number_field(rj, "lambda_max", sc.oracle_options.lambda_max);
      sc.oracle_options.grid_points = static_cast<int>(detail::number_field(
          rj, "grid_points", static_cast<double>(sc.oracle_options.grid_points)));
    } else {
      throw ConfigError("unknown reference mode '" + mode + "'");
    }
  }

  if (doc.contains("metrics")) {
    const json& mj = doc.at("metrics");
    sc.ball_radius = detail::number_field(mj, "ball_radius", sc.ball_radius);
    sc.tail_fraction = detail::number_field(mj, "tail_fraction", sc.tail_fraction);
  }
  return sc;
}

inline Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw ConfigError("scenario " + path + " is not valid JSON: " + e.what());
  }
  return parse_scenario(doc);
}

/// Column labels matching the packed state of the scenario's algorithm.
inline std::vector<std::string> state_labels(const Scenario& sc) {
  const int m = sc.game.dim();
  const int q = sc.game.n_constraints();
  std::vector<std::string> labels;
  auto block = [&labels](const std::string& prefix, int count) {
    for (int c = 0; c < count; ++c) labels.push_back(prefix + std::to_string(c));
  };
  block("u", m);
  block("z", m);
  block("lambda", q);
  block("w", q);
  if (sc.algorithm != Algorithm::FullInfo) {
    block("k", q);
    block("s", q);
  }
  if (sc.algorithm == Algorithm::ZerothOrder) {
    EsLayout layout{m, q, estimated_coordinates(sc.game, sc.es.estimated)};
    block("zeta", layout.n_est());
    for (int c = 0; c < layout.n_est(); ++c) {
      labels.push_back("mu" + std::to_string(c) + "_cos");
      labels.push_back("mu" + std::to_string(c) + "_sin");
    }
  }
  return labels;
}

/// Outcome of one run: the arc plus the summary document.
struct RunResult {
  HybridArc arc;
  json summary;
  std::optional<KktPoint> reference;
};

namespace detail {

/// Primal-projected distance metrics and Lyapunov bookkeeping for the summary.
inline void fill_reference_metrics(const Scenario& sc, const HybridArc& arc,
                                   const KktPoint& ref, json& summary) {
  const int m = sc.game.dim();
  std::vector<int> u_coords(static_cast<std::size_t>(m));
  for (int c = 0; c < m; ++c) u_coords[static_cast<std::size_t>(c)] = c;

  const Vec u_final = arc.final_state().head(m);
  json dist;
  dist["primal_final"] = (u_final - ref.u).norm();
  const double entry = first_entry_time(arc, ref.u, sc.ball_radius, u_coords);
  dist["ball_radius"] = sc.ball_radius;
  if (std::isfinite(entry)) {
    dist["first_time_within_ball"] = entry;
  } else {
    dist["first_time_within_ball"] = nullptr;
  }

  // Time-weighted mean primal distance over the trailing window.
  const double t0 = arc.times.front().t;
  const double t1 = arc.times.back().t;
  const double tail_start = t1 - sc.tail_fraction * (t1 - t0);
  double weighted = 0.0;
  double span = 0.0;
  for (std::size_t i = 0; i + 1 < arc.states.size(); ++i) {
    if (arc.times[i].t < tail_start) continue;
    const double dt = arc.times[i + 1].t - arc.times[i].t;
    const double d0 = (arc.states[i].head(m) - ref.u).norm();
    const double d1 = (arc.states[i + 1].head(m) - ref.u).norm();
    weighted += 0.5 * (d0 + d1) * dt;
    span += dt;
  }
  dist["primal_tail_mean"] = span > 0.0 ? weighted / span : dist["primal_final"].get<double>();
  summary["distance"] = dist;

  // Energy decrease along the arc, for the flows that certify it.
  if (sc.algorithm == Algorithm::ZerothOrder) return;
  const GneLayout gl{m, sc.game.n_constraints()};
  const AdaptiveLayout al{m, sc.game.n_constraints()};
  double v_prev = std::numeric_limits<double>::quiet_NaN();
  double v0 = 0.0;
  double v1 = 0.0;
  double max_increase = 0.0;
  for (std::size_t i = 0; i < arc.states.size(); ++i) {
    Vec k;
    Vec prefix;
    if (sc.algorithm == Algorithm::Adaptive) {
      k = arc.states[i].segment(al.k_off(), al.q);
      prefix = al.gne_part(arc.states[i]);
    } else {
      prefix = arc.states[i];
    }
    const double v = lyapunov_value(sc.game, gl, prefix, ref, k);
    if (i == 0) v0 = v;
    v1 = v;
    if (i > 0 && arc.times[i].j == arc.times[i - 1].j) {
      max_increase = std::max(max_increase, (v - v_prev) / (1.0 + std::abs(v_prev)));
    }
    v_prev = v;
  }
  double jump_gap = 0.0;
  const AdaptiveLayout al2{m, sc.game.n_constraints()};
  for (const JumpRecord& rec : arc.jumps) {
    Vec k_pre, k_post, pre, post;
    if (sc.algorithm == Algorithm::Adaptive) {
      k_pre = rec.pre.segment(al2.k_off(), al2.q);
      k_post = rec.post.segment(al2.k_off(), al2.q);
      pre = al2.gne_part(rec.pre);
      post = al2.gne_part(rec.post);
    } else {
      pre = rec.pre;
      post = rec.post;
      k_pre = k_post = Vec();
    }
    const double vp = lyapunov_value(sc.game, gl, pre, ref, k_pre);
    const double vq = lyapunov_value(sc.game, gl, post, ref, k_post);
    jump_gap = std::max(jump_gap, std::abs(vq - vp));
  }
  json lyap;
  lyap["initial"] = v0;
  lyap["final"] = v1;
  lyap["max_relative_increase"] = max_increase;
  lyap["max_jump_gap"] = jump_gap;
  summary["lyapunov"] = lyap;
}

}  // namespace detail

/// Resolves the scenario's reference point: the configured point, or the
/// unique oracle solution over the configured box. Oracle references with
/// zero or several solutions raise ConfigError so scenarios stay unambiguous.
inline std::optional<KktPoint> resolve_reference(const Scenario& sc) {
  switch (sc.ref_mode) {
    case ReferenceMode::None: return std::nullopt;
    case ReferenceMode::Point: return sc.ref_point;
    case ReferenceMode::Oracle: {
      const std::vector<KktPoint> points =
          solve_kkt_oracle(sc.game, sc.oracle_box, sc.oracle_options);
      if (points.empty()) {
        throw ConfigError("reference oracle found no first-order point in the box");
      }
      if (points.size() > 1) {
        throw ConfigError("reference oracle found " + std::to_string(points.size()) +
                          " first-order points; configure reference.mode=point");
      }
      return points.front();
    }
  }
  return std::nullopt;
}

/// Runs the scenario (or its probe) and assembles the summary document.
inline RunResult run_scenario(const Scenario& sc) {
  RunResult result;
  json& summary = result.summary;
  summary["schema_version"] = 1;
  summary["scenario"] = sc.name;
  summary["game"] = sc.game.name;
  summary["algorithm"] = to_string(sc.algorithm);

  const auto wall_start = std::chrono::steady_clock::now();

  if (sc.probe_mode) {
    const EstimatorBiasReport report = estimator_bias_probe(
        sc.game, sc.es, sc.probe_u, sc.probe_periods, sc.probe_samples_per_period);
    json probe;
    probe["u"] = detail::to_json(sc.probe_u);
    probe["window"] = report.window;
    probe["bias_per_coordinate"] = detail::to_json(report.bias);
    probe["bias_max"] = report.bias.size() > 0 ? report.bias.maxCoeff() : 0.0;
    probe["estimate_mean"] = detail::to_json(report.estimate_mean);
    probe["truth"] = detail::to_json(report.truth);
    summary["estimator_bias"] = probe;
    summary["wall_time_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start)
            .count();
    return result;
  }

  const int m = sc.game.dim();
  const int q = sc.game.n_constraints();
  std::shared_ptr<double> drift;
  HybridSystem system;
  switch (sc.algorithm) {
    case Algorithm::FullInfo: system = build_full_info_system(sc.game).system; break;
    case Algorithm::Adaptive:
      system = build_adaptive_system(sc.game, sc.adaptive).system;
      break;
    case Algorithm::ZerothOrder: {
      BuiltZerothOrder built = build_zeroth_order_system(sc.game, sc.es);
      system = std::move(built.system);
      drift = built.oscillator_drift;
      break;
    }
  }
  result.arc = integrate(system, sc.initial_state, sc.integration);
  const HybridArc& arc = result.arc;

  summary["halt_reason"] = to_string(arc.halt);
  summary["hybrid_time"] = {{"t", arc.final_time().t}, {"j", arc.final_time().j}};
  summary["jump_count"] = arc.jumps.size();
  summary["samples"] = arc.states.size();

  // Final state blocks.
  const Vec& xf = arc.final_state();
  json final_state;
  final_state["u"] = detail::to_json(xf.head(m));
  final_state["z"] = detail::to_json(xf.segment(m, m));
  final_state["lambda"] = detail::to_json(xf.segment(2 * m, q));
  final_state["w"] = detail::to_json(xf.segment(2 * m + q, q));
  if (sc.algorithm != Algorithm::FullInfo) {
    final_state["k"] = detail::to_json(xf.segment(2 * m + 2 * q, q));
    final_state["s"] = detail::to_json(xf.segment(2 * m + 3 * q, q));
  }
  if (sc.algorithm == Algorithm::ZerothOrder) {
    EsLayout layout{m, q, estimated_coordinates(sc.game, sc.es.estimated)};
    final_state["zeta"] = detail::to_json(xf.segment(layout.zeta_off(), layout.n_est()));
  }
  summary["final"] = final_state;
  summary["kkt_residual"] =
      kkt_residual(sc.game, {xf.head(m), xf.segment(2 * m, q)});

  result.reference = resolve_reference(sc);
  if (result.reference) {
    json ref;
    ref["source"] = sc.ref_mode == ReferenceMode::Oracle ? "oracle" : "point";
    ref["u"] = detail::to_json(result.reference->u);
    ref["lambda"] = detail::to_json(result.reference->lambda);
    ref["kkt_residual"] = kkt_residual(sc.game, *result.reference);
    summary["reference"] = ref;
    detail::fill_reference_metrics(sc, arc, *result.reference, summary);
  } else {
    summary["reference"] = nullptr;
  }

  if (drift) summary["oscillator"] = {{"max_norm_drift", *drift}};

  // Oil scenarios report the rate on the applied (dithered) injections.
  if (sc.has_oil_params && sc.algorithm == Algorithm::ZerothOrder) {
    EsLayout layout{m, q, estimated_coordinates(sc.game, sc.es.estimated)};
    const RateSeries series = applied_rate_series(sc.oil, layout, sc.es, arc);
    const double period = 1.0 / sc.es.frequencies.minCoeff();
    json rate;
    rate["final_nominal"] = total_rate(sc.oil, xf.head(4));
    rate["period"] = period;
    try {
      rate["oscillation_amplitude"] =
          oscillation_amplitude(series.t, series.rate, period);
    } catch (const TailTooShort& e) {
      rate["oscillation_amplitude"] = nullptr;
      rate["oscillation_error"] = e.what();
    }
    summary["applied_rate"] = rate;
  }

  summary["wall_time_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start)
          .count();
  return result;
}

/// Runs and writes trajectory.csv, jumps.csv and summary.json into out_dir.
inline RunResult run_scenario_to_dir(const Scenario& sc,
                                     const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  RunResult result = run_scenario(sc);
  if (!sc.probe_mode) {
    const std::vector<std::string> labels = state_labels(sc);
    write_trajectory_csv((out_dir / "trajectory.csv").string(), result.arc, labels);
    write_jumps_csv((out_dir / "jumps.csv").string(), result.arc, labels);
  }
  std::ofstream out(out_dir / "summary.json");
  if (!out) throw CsvWriteError("cannot write summary.json in " + out_dir.string());
  out << result.summary.dump(2) << '\n';
  return result;
}

/// Root directory for run outputs: explicit argument, else the environment
/// override, else ./runs.
inline std::filesystem::path output_root(const std::string& cli_value = {}) {
  if (!cli_value.empty()) return cli_value;
  if (const char* env = std::getenv("GNES_OUTPUT_ROOT")) return env;
  return "runs";
}

/// Directory holding the bundled scenario files: environment override first,
/// then the build-time location, then ./scenarios.
inline std::filesystem::path scenario_dir() {
  if (const char* env = std::getenv("GNES_SCENARIO_DIR")) return env;
#ifdef GNES_BUNDLED_SCENARIO_DIR
  return GNES_BUNDLED_SCENARIO_DIR;
#else
  return "scenarios";
#endif
}

/// Resolves a scenario argument: a path to a JSON file, or the name of a
/// bundled scenario (with or without .json).
inline std::filesystem::path resolve_scenario_path(const std::string& arg) {
  namespace fs = std::filesystem;
  if (fs::exists(arg)) return arg;
  const fs::path dir = scenario_dir();
  for (const std::string candidate : {arg, arg + ".json"}) {
    if (fs::exists(dir / candidate)) return dir / candidate;
  }
  throw ConfigError("no scenario file or bundled scenario named '" + arg + "'");
}

}  // namespace gnes
