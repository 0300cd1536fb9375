#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bcs/core_types.hpp"
#include "bcs/encoding.hpp"
#include "bcs/error.hpp"

namespace bcs::csv {

/// Header plus string cells. Quoted fields may contain commas; `""` escapes a quote.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  }

  std::vector<std::string> cells(std::size_t c) const {
    std::vector<std::string> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto a = s.find_first_not_of(' ');
    const auto b = s.find_last_not_of(' ');
    s = a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  }
  return out;
}

inline Table parse(const std::string& text, const std::string& source = "csv") {
  Table t;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw ValidationError({source + " line " + std::to_string(lineno) + ": expected " +
                             std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size())});
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw ValidationError({source + ": missing header"});
  return t;
}

inline Table read(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError({"cannot open '" + path + "'"});
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

/// Shortest round-trip representation, so output bytes depend only on values.
inline std::string format(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write(const std::string& path, const std::vector<std::string>& header, const Matrix& values) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError({"cannot write '" + path + "'"});
  for (std::size_t c = 0; c < header.size(); ++c) f << (c ? "," : "") << header[c];
  f << '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) f << (c ? "," : "") << format(values(r, c));
    f << '\n';
  }
}

inline Vector numeric_column(const Table& t, std::size_t c) {
  Vector v(static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    v[static_cast<Eigen::Index>(r)] = parse_number(t.rows[r][c], "column '" + t.header[c] + "'");
  return v;
}

struct LoadedData {
  ObservedData data;
  EncodingReport encoding;
};

/// Data file: `y`, `t`, optional propensity column, every other column a covariate.
inline LoadedData load_data(const Table& t, const std::vector<std::string>& categorical = {},
                            const std::string& pi_column = "pi") {
  std::vector<std::string> errors;
  const auto cy = t.column("y");
  const auto ct = t.column("t");
  if (!cy) errors.push_back("data file has no 'y' column");
  if (!ct) errors.push_back("data file has no 't' column");
  if (t.rows.empty()) errors.push_back("data file has no rows");
  for (const auto& name : categorical)
    if (!t.column(name)) errors.push_back("categorical column '" + name + "' not found");
  if (!errors.empty()) throw ValidationError(std::move(errors));
  const auto cpi = t.column(pi_column);

  LoadedData out;
  out.data.y = numeric_column(t, *cy);
  const Vector tv = numeric_column(t, *ct);
  out.data.t.resize(tv.size());
  for (Eigen::Index i = 0; i < tv.size(); ++i) {
    if (tv[i] != 0.0 && tv[i] != 1.0) errors.push_back("treatment at row " + std::to_string(i + 1) + " is not 0/1");
    out.data.t[i] = static_cast<int>(tv[i]);
  }
  if (!errors.empty()) throw ValidationError(std::move(errors));
  if (cpi) out.data.pi = numeric_column(t, *cpi);

  RawTable raw;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c == *cy || c == *ct || (cpi && c == *cpi)) continue;
    RawColumn col{t.header[c], ColumnKind::continuous, t.cells(c)};
    col.kind = infer_kind(col, categorical);
    raw.push_back(std::move(col));
  }
  if (raw.empty()) throw ValidationError({"data file has no covariate columns"});
  auto [x, report] = encode_covariates(raw);
  out.data.x = std::move(x);
  out.encoding = std::move(report);
  out.data.covariate_names = out.encoding.output_names();
  return out;
}

/// Reads `tau_hat_j, se_j` pairs for j = 1, 2, ... until the next pair is absent.
inline std::vector<AgentPosterior> load_agents(const Table& t, std::optional<Eigen::Index> expected_rows = {}) {
  std::vector<AgentPosterior> agents;
  for (int j = 1;; ++j) {
    const auto ch = t.column("tau_hat_" + std::to_string(j));
    const auto cs = t.column("se_" + std::to_string(j));
    if (!ch && !cs) break;
    if (!ch || !cs)
      throw ValidationError({"agent " + std::to_string(j) + " needs both tau_hat_" + std::to_string(j) + " and se_" +
                             std::to_string(j)});
    AgentPosterior a;
    a.j = j;
    a.name = "agent" + std::to_string(j);
    a.tau_hat = numeric_column(t, *ch);
    a.se = numeric_column(t, *cs);
    agents.push_back(std::move(a));
  }
  if (agents.empty()) throw ValidationError({"no tau_hat_1/se_1 columns found"});
  if (expected_rows && static_cast<Eigen::Index>(t.rows.size()) != *expected_rows)
    throw ValidationError({"agent file has " + std::to_string(t.rows.size()) + " rows, data has " +
                           std::to_string(*expected_rows)});
  return agents;
}

inline void write_agents(const std::string& path, const std::vector<AgentPosterior>& agents) {
  if (agents.empty()) throw ValidationError({"no agents to write"});
  std::vector<std::string> header;
  Matrix m(agents.front().tau_hat.size(), 2 * static_cast<Eigen::Index>(agents.size()));
  for (std::size_t j = 0; j < agents.size(); ++j) {
    header.push_back("tau_hat_" + std::to_string(j + 1));
    header.push_back("se_" + std::to_string(j + 1));
    m.col(2 * static_cast<Eigen::Index>(j)) = agents[j].tau_hat;
    m.col(2 * static_cast<Eigen::Index>(j) + 1) = agents[j].se;
  }
  write(path, header, m);
}

/// Prediction points: raw covariates (encoded with the training report) plus agent columns.
inline std::pair<Matrix, std::vector<AgentPosterior>> load_points(const Table& t, const EncodingReport& report) {
  RawTable raw;
  for (const auto& tr : report.columns) {
    const auto c = t.column(tr.name);
    if (!c) throw EncodingError("prediction points lack covariate column '" + tr.name + "'");
    raw.push_back({tr.name, tr.kind, t.cells(*c)});
  }
  Matrix x = apply_encoding(report, raw);
  return {std::move(x), load_agents(t, static_cast<Eigen::Index>(t.rows.size()))};
}

}  // namespace bcs::csv
