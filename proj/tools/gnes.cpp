// Command-line front end: run scenarios, verify invariants on a run, sweep a
// parameter across values, and list the bundled scenarios.
//
// Exit codes: 0 success, 1 verification failure, 2 configuration or usage
// error, 3 numerical failure during integration.

#include "gnes/scenario.hpp"
#include "gnes/verify.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;
using gnes::json;

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

json load_document(const std::string& arg) {
  const fs::path path = gnes::resolve_scenario_path(arg);
  std::ifstream in(path);
  if (!in) throw gnes::ConfigError("cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw gnes::ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
  return doc;
}

void apply_overrides(json& doc, const std::vector<std::string>& sets) {
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw gnes::ConfigError("--set expects /json/pointer=value, got '" + s + "'");
    }
    const std::string pointer = s.substr(0, eq);
    const std::string value = s.substr(eq + 1);
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::parse_error&) {
      parsed = value;  // bare strings are allowed unquoted
    }
    try {
      doc[json::json_pointer(pointer)] = parsed;
    } catch (const json::exception& e) {
      throw gnes::ConfigError("cannot apply override '" + s + "': " + e.what());
    }
  }
}

/// Pulls a dotted path of object keys out of the summary, if present.
json summary_lookup(const json& summary, const std::string& dotted) {
  const json* node = &summary;
  std::istringstream keys(dotted);
  std::string key;
  while (std::getline(keys, key, '.')) {
    if (!node->is_object() || !node->contains(key)) return nullptr;
    node = &node->at(key);
  }
  return *node;
}

void print_summary_digest(const json& summary) {
  std::cout << "scenario:      " << summary.value("scenario", std::string("?")) << '\n';
  std::cout << "algorithm:     " << summary.value("algorithm", std::string("?")) << '\n';
  if (summary.contains("halt_reason")) {
    std::cout << "halt:          " << summary["halt_reason"].get<std::string>()
              << "  (t=" << summary["hybrid_time"]["t"].get<double>()
              << ", j=" << summary["hybrid_time"]["j"].get<long>() << ")\n";
    std::cout << "kkt residual:  " << summary["kkt_residual"].get<double>() << '\n';
  }
  const json dist = summary_lookup(summary, "distance.primal_final");
  if (!dist.is_null()) std::cout << "|u - u*|:      " << dist.get<double>() << '\n';
  const json bias = summary_lookup(summary, "estimator_bias.bias_max");
  if (!bias.is_null()) std::cout << "bias max:      " << bias.get<double>() << '\n';
  const json osc = summary_lookup(summary, "applied_rate.oscillation_amplitude");
  if (!osc.is_null()) std::cout << "rate ripple:   " << osc.get<double>() << '\n';
  std::cout << "wall time:     " << summary.value("wall_time_seconds", 0.0) << " s\n";
}

int cmd_run(const std::string& scenario_arg, const std::vector<std::string>& sets,
            const std::string& out_arg, bool quiet) {
  json doc = load_document(scenario_arg);
  apply_overrides(doc, sets);
  const gnes::Scenario sc = gnes::parse_scenario(doc);
  const fs::path out_dir = gnes::output_root(out_arg) / sc.name;
  const gnes::RunResult result = gnes::run_scenario_to_dir(sc, out_dir);
  if (!quiet) {
    print_summary_digest(result.summary);
    std::cout << "outputs:       " << out_dir.string() << '\n';
  }
  return kExitOk;
}

int cmd_verify(const std::string& scenario_arg, const std::vector<std::string>& sets,
               const std::string& out_arg) {
  json doc = load_document(scenario_arg);
  apply_overrides(doc, sets);
  const gnes::Scenario sc = gnes::parse_scenario(doc);
  if (sc.probe_mode) {
    throw gnes::ConfigError("verify needs an integration scenario, not a probe");
  }
  gnes::RunResult result;
  if (out_arg.empty()) {
    result = gnes::run_scenario(sc);
  } else {
    result = gnes::run_scenario_to_dir(sc, gnes::output_root(out_arg) / sc.name);
  }
  const gnes::VerifyReport report = gnes::verify_run(sc, result.arc);
  for (const gnes::Check& c : report.checks) {
    std::cout << (c.passed ? "[PASS] " : "[FAIL] ") << c.name << ": " << c.detail
              << '\n';
  }
  std::cout << (report.passed() ? "all checks passed" : "some checks FAILED") << '\n';
  return report.passed() ? kExitOk : kExitVerifyFailed;
}

int cmd_sweep(const std::string& scenario_arg, const std::string& pointer,
              const std::string& values_csv, const std::vector<std::string>& sets,
              const std::string& out_arg) {
  if (pointer.empty() || pointer.front() != '/') {
    throw gnes::ConfigError("--param must be a JSON pointer like /es/amplitudes");
  }
  std::vector<double> values;
  std::istringstream vs(values_csv);
  std::string tok;
  while (std::getline(vs, tok, ',')) {
    try {
      values.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw gnes::ConfigError("--values must be a comma-separated number list");
    }
  }
  if (values.empty()) throw gnes::ConfigError("--values is empty");

  json base = load_document(scenario_arg);
  apply_overrides(base, sets);
  const std::string sweep_name =
      base.value("name", std::string("scenario")) + "_sweep";
  const fs::path sweep_dir = gnes::output_root(out_arg) / sweep_name;
  fs::create_directories(sweep_dir);

  // Columns cover the scalar outputs of every scenario kind; absent ones stay
  // empty so the CSV schema is stable.
  const std::vector<std::pair<std::string, std::string>> columns = {
      {"kkt_residual", "kkt_residual"},
      {"primal_distance", "distance.primal_final"},
      {"first_time_within_ball", "distance.first_time_within_ball"},
      {"jump_count", "jump_count"},
      {"bias_max", "estimator_bias.bias_max"},
      {"rate_oscillation", "applied_rate.oscillation_amplitude"},
      {"wall_time_seconds", "wall_time_seconds"},
  };
  std::ofstream csv(sweep_dir / "sweep.csv");
  csv << "value";
  for (const auto& [name, path] : columns) csv << ',' << name;
  csv << '\n';

  for (std::size_t i = 0; i < values.size(); ++i) {
    json doc = base;
    doc[json::json_pointer(pointer)] = values[i];
    gnes::Scenario sc = gnes::parse_scenario(doc);
    const fs::path run_dir = sweep_dir / ("value_" + std::to_string(i));
    const gnes::RunResult result = gnes::run_scenario_to_dir(sc, run_dir);
    csv << values[i];
    for (const auto& [name, path] : columns) {
      const json v = summary_lookup(result.summary, path);
      csv << ',';
      if (v.is_number()) csv << v.get<double>();
    }
    csv << '\n';
    std::cout << pointer << " = " << values[i] << "  ->  " << run_dir.string() << '\n';
  }
  std::cout << "sweep table:   " << (sweep_dir / "sweep.csv").string() << '\n';
  return kExitOk;
}

int cmd_list() {
  const fs::path dir = gnes::scenario_dir();
  if (!fs::exists(dir)) {
    std::cout << "no scenario directory at " << dir.string() << '\n';
    return kExitOk;
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    try {
      std::ifstream in(f);
      json doc;
      in >> doc;
      std::cout << doc.value("name", f.stem().string()) << "\n    "
                << doc.value("description", std::string("(no description)")) << '\n';
    } catch (const std::exception& e) {
      std::cerr << f.string() << ": unreadable (" << e.what() << ")\n";
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equilibrium-seeking simulation runner"};
  app.require_subcommand(1);

  std::string scenario_arg;
  std::string out_arg;
  std::string param_pointer;
  std::string values_csv;
  std::vector<std::string> sets;
  bool quiet = false;

  CLI::App* run = app.add_subcommand("run", "integrate a scenario and write outputs");
  run->add_option("scenario", scenario_arg, "scenario file or bundled name")->required();
  run->add_option("--out", out_arg, "output root (default: $GNES_OUTPUT_ROOT or ./runs)");
  run->add_option("--set", sets, "override a field, e.g. --set /integration/max_time=10");
  run->add_flag("--quiet", quiet, "suppress the summary digest");

  CLI::App* verify = app.add_subcommand("verify", "run a scenario and check invariants");
  verify->add_option("scenario", scenario_arg, "scenario file or bundled name")->required();
  verify->add_option("--out", out_arg, "also write run outputs under this root");
  verify->add_option("--set", sets, "override a field before running");

  CLI::App* sweep = app.add_subcommand("sweep", "run a scenario across parameter values");
  sweep->add_option("scenario", scenario_arg, "scenario file or bundled name")->required();
  sweep->add_option("--param", param_pointer, "JSON pointer to the swept field")->required();
  sweep->add_option("--values", values_csv, "comma-separated values")->required();
  sweep->add_option("--out", out_arg, "output root");
  sweep->add_option("--set", sets, "fixed overrides applied before the sweep");

  app.add_subcommand("list-scenarios", "list bundled scenarios");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(scenario_arg, sets, out_arg, quiet);
    if (verify->parsed()) return cmd_verify(scenario_arg, sets, out_arg);
    if (sweep->parsed()) return cmd_sweep(scenario_arg, param_pointer, values_csv, sets, out_arg);
    return cmd_list();
  } catch (const gnes::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kExitNumeric;
  }
}
