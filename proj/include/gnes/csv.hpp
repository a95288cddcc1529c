#pragma once

// CSV export for hybrid arcs: one trajectory file (t, j, state columns) and
// one jump log (pre/post states plus which hysteresis case fired).

#include "gnes/hds.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnes {

class CsvWriteError : public std::runtime_error {
 public:
  explicit CsvWriteError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Column labels for the state vector; falls back to x0..x{n-1}.
inline std::vector<std::string> default_state_labels(int n) {
  std::vector<std::string> labels;
  labels.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels.push_back("x" + std::to_string(i));
  return labels;
}

/// Writes the sampled arc as CSV with header t,j,<labels...>.
inline void write_trajectory_csv(const std::string& path, const HybridArc& arc,
                                 const std::vector<std::string>& labels = {}) {
  if (arc.states.empty()) throw CsvWriteError("cannot export an empty arc");
  const int n = static_cast<int>(arc.states.front().size());
  std::vector<std::string> cols = labels.empty() ? default_state_labels(n) : labels;
  if (static_cast<int>(cols.size()) != n) {
    throw CsvWriteError("label count does not match state dimension");
  }
  std::ofstream out(path);
  if (!out) throw CsvWriteError("cannot open " + path + " for writing");
  out << "t,j";
  for (const std::string& c : cols) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < arc.states.size(); ++i) {
    out << detail::format_double(arc.times[i].t) << ',' << arc.times[i].j;
    for (int c = 0; c < n; ++c) out << ',' << detail::format_double(arc.states[i][c]);
    out << '\n';
  }
  if (!out) throw CsvWriteError("write failed for " + path);
}

namespace detail {

inline char subcase_suffix(int subcase) {
  switch (subcase) {
    case kJumpArmToOn: return '+';
    case kJumpOnToArm: return '-';
    case kJumpStop: return '0';
    default: return '?';
  }
}

}  // namespace detail

/// Writes the jump log as CSV with header t,j,indices,pre_<labels>,post_<labels>.
/// The indices cell lists every admissible option as <index><case> tokens
/// joined by ';', the applied one first and starred (e.g. "*1+;0+").
inline void write_jumps_csv(const std::string& path, const HybridArc& arc,
                            const std::vector<std::string>& labels = {}) {
  int n = 0;
  if (!arc.jumps.empty()) n = static_cast<int>(arc.jumps.front().pre.size());
  else if (!arc.states.empty()) n = static_cast<int>(arc.states.front().size());
  std::vector<std::string> cols = labels.empty() ? default_state_labels(n) : labels;
  if (static_cast<int>(cols.size()) != n) {
    throw CsvWriteError("label count does not match state dimension");
  }
  std::ofstream out(path);
  if (!out) throw CsvWriteError("cannot open " + path + " for writing");
  out << "t,j,indices";
  for (const std::string& c : cols) out << ",pre_" << c;
  for (const std::string& c : cols) out << ",post_" << c;
  out << '\n';
  for (const JumpRecord& rec : arc.jumps) {
    std::ostringstream cell;
    cell << '*' << rec.applied_index << detail::subcase_suffix(rec.applied_subcase);
    for (const auto& [idx, sub] : rec.triggered) {
      if (idx == rec.applied_index && sub == rec.applied_subcase) continue;
      cell << ';' << idx << detail::subcase_suffix(sub);
    }
    out << detail::format_double(rec.when.t) << ',' << rec.when.j << ',' << cell.str();
    for (int c = 0; c < n; ++c) out << ',' << detail::format_double(rec.pre[c]);
    for (int c = 0; c < n; ++c) out << ',' << detail::format_double(rec.post[c]);
    out << '\n';
  }
  if (!out) throw CsvWriteError("write failed for " + path);
}

}  // namespace gnes
