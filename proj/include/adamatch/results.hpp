#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "adamatch/tensor.hpp"

namespace adamatch {

/// One flat result row; the CSV schema is
/// source,target,kind,algo,seed,final_accuracy.
struct ResultRow {
  std::string source, target, kind, algo;
  uint64_t seed = 0;
  double final_accuracy = 0.0;
};

inline std::string format_accuracy(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::string emit_results_csv(const std::vector<ResultRow>& rows) {
  std::string out = "source,target,kind,algo,seed,final_accuracy\n";
  for (const auto& r : rows) {
    out += r.source + "," + r.target + "," + r.kind + "," + r.algo + "," +
           std::to_string(r.seed) + "," + format_accuracy(r.final_accuracy) + "\n";
  }
  return out;
}

inline std::vector<ResultRow> parse_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "source,target,kind,algo,seed,final_accuracy")
    throw ValueError("results csv: bad header");
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (fields.size() != 6) throw ValueError("results csv: bad row: " + line);
    ResultRow r;
    r.source = fields[0];
    r.target = fields[1];
    r.kind = fields[2];
    r.algo = fields[3];
    r.seed = std::stoull(fields[4]);
    r.final_accuracy = std::stod(fields[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Per-pair accuracy grid with row/column/grand averages over present cells,
/// in the shape of the per-dataset result tables.
inline std::string emit_grid(const std::vector<ResultRow>& rows) {
  std::vector<std::string> sources, targets;
  std::map<std::pair<std::string, std::string>, std::pair<double, int>> cells;
  for (const auto& r : rows) {
    if (std::find(sources.begin(), sources.end(), r.source) == sources.end())
      sources.push_back(r.source);
    if (std::find(targets.begin(), targets.end(), r.target) == targets.end())
      targets.push_back(r.target);
    auto& c = cells[{r.source, r.target}];
    c.first += r.final_accuracy;
    c.second += 1;
  }
  std::string out = "source\\target";
  for (const auto& t : targets) out += "," + t;
  out += ",avg\n";
  double grand = 0;
  int grand_n = 0;
  std::vector<double> col_sum(targets.size(), 0.0);
  std::vector<int> col_n(targets.size(), 0);
  for (const auto& s : sources) {
    out += s;
    double row_sum = 0;
    int row_n = 0;
    for (size_t ti = 0; ti < targets.size(); ++ti) {
      auto it = cells.find({s, targets[ti]});
      if (it == cells.end() || it->second.second == 0) {
        out += ",";
        continue;
      }
      const double v = it->second.first / it->second.second;
      out += "," + format_accuracy(v);
      row_sum += v;
      ++row_n;
      col_sum[ti] += v;
      ++col_n[ti];
      grand += v;
      ++grand_n;
    }
    out += "," + (row_n ? format_accuracy(row_sum / row_n) : std::string()) + "\n";
  }
  out += "avg";
  for (size_t ti = 0; ti < targets.size(); ++ti)
    out += "," + (col_n[ti] ? format_accuracy(col_sum[ti] / col_n[ti]) : std::string());
  out += "," + (grand_n ? format_accuracy(grand / grand_n) : std::string()) + "\n";
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ValueError("cannot write " + path);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValueError("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// FNV-1a, used to fingerprint resolved configs.
inline uint64_t fnv1a(const std::string& text) {
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace adamatch
