#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bcs/core_types.hpp"
#include "bcs/error.hpp"

namespace bcs {

enum class ColumnKind { continuous, binary, categorical };

inline std::string to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::continuous: return "continuous";
    case ColumnKind::binary: return "binary";
    case ColumnKind::categorical: return "categorical";
  }
  return "continuous";
}

inline ColumnKind column_kind_from_string(const std::string& s) {
  if (s == "continuous") return ColumnKind::continuous;
  if (s == "binary") return ColumnKind::binary;
  if (s == "categorical") return ColumnKind::categorical;
  throw EncodingError("unknown column kind '" + s + "'");
}

/// One raw covariate column. Cells are kept as text so categorical levels
/// survive unchanged; numeric kinds parse them on encode.
struct RawColumn {
  std::string name;
  ColumnKind kind = ColumnKind::continuous;
  std::vector<std::string> cells;
};

using RawTable = std::vector<RawColumn>;

inline double parse_number(const std::string& s, const std::string& context) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && *(last - 1) == ' ') --last;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw EncodingError("non-numeric value '" + s + "' in " + context);
  return v;
}

/// How one raw column maps onto encoded columns. Population sd (divide by n)
/// is used for standardization.
struct ColumnTransform {
  std::string name;
  ColumnKind kind = ColumnKind::continuous;
  double mean = 0.0;
  double sd = 1.0;
  std::vector<std::string> levels;  // categorical: all levels, first is the dropped reference

  std::vector<std::string> output_names() const {
    switch (kind) {
      case ColumnKind::continuous:
      case ColumnKind::binary: return {name};
      case ColumnKind::categorical: {
        std::vector<std::string> out;
        for (std::size_t l = 1; l < levels.size(); ++l) out.push_back(name + "=" + levels[l]);
        return out;
      }
    }
    return {};
  }

  bool operator==(const ColumnTransform&) const = default;
};

struct EncodingReport {
  std::vector<ColumnTransform> columns;

  std::vector<std::string> output_names() const {
    std::vector<std::string> out;
    for (const auto& c : columns)
      for (auto& s : c.output_names()) out.push_back(std::move(s));
    return out;
  }

  /// Encoded column indices produced by the named raw columns.
  std::vector<int> output_indices(const std::vector<std::string>& raw_names) const {
    std::vector<int> out;
    int offset = 0;
    for (const auto& c : columns) {
      const int width = static_cast<int>(c.output_names().size());
      if (std::find(raw_names.begin(), raw_names.end(), c.name) != raw_names.end())
        for (int k = 0; k < width; ++k) out.push_back(offset + k);
      offset += width;
    }
    for (const auto& name : raw_names) {
      bool found = false;
      for (const auto& c : columns) found = found || c.name == name;
      if (!found) throw EncodingError("unknown covariate column '" + name + "'");
    }
    return out;
  }

  bool operator==(const EncodingReport&) const = default;
};

inline void to_json(nlohmann::json& j, const ColumnTransform& c) {
  j = nlohmann::json{{"name", c.name}, {"kind", to_string(c.kind)}};
  if (c.kind == ColumnKind::continuous) {
    j["mean"] = c.mean;
    j["sd"] = c.sd;
  }
  if (c.kind == ColumnKind::categorical) j["levels"] = c.levels;
}

inline void from_json(const nlohmann::json& j, ColumnTransform& c) {
  c.name = j.at("name").get<std::string>();
  c.kind = column_kind_from_string(j.at("kind").get<std::string>());
  c.mean = j.value("mean", 0.0);
  c.sd = j.value("sd", 1.0);
  c.levels = j.value("levels", std::vector<std::string>{});
}

inline void to_json(nlohmann::json& j, const EncodingReport& r) { j = nlohmann::json{{"columns", r.columns}}; }
inline void from_json(const nlohmann::json& j, EncodingReport& r) {
  r.columns = j.at("columns").get<std::vector<ColumnTransform>>();
}

namespace detail {

inline std::vector<std::string> sorted_levels(const std::vector<std::string>& cells) {
  std::vector<std::string> levels = cells;
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  // Numeric levels sort by value so "10" follows "9".
  bool numeric = true;
  for (const auto& l : levels) {
    double v;
    auto [ptr, ec] = std::from_chars(l.data(), l.data() + l.size(), v);
    numeric = numeric && ec == std::errc() && ptr == l.data() + l.size();
  }
  if (numeric) {
    std::sort(levels.begin(), levels.end(), [](const std::string& a, const std::string& b) {
      return parse_number(a, "level") < parse_number(b, "level");
    });
  }
  return levels;
}

}  // namespace detail

/// Applies a fitted report to a raw table with the same columns (by name).
inline Matrix apply_encoding(const EncodingReport& report, const RawTable& table) {
  std::size_t rows = table.empty() ? 0 : table.front().cells.size();
  const auto width = static_cast<Eigen::Index>(report.output_names().size());
  Matrix x(static_cast<Eigen::Index>(rows), width);
  Eigen::Index out = 0;
  for (const auto& tr : report.columns) {
    auto it = std::find_if(table.begin(), table.end(), [&](const RawColumn& c) { return c.name == tr.name; });
    if (it == table.end()) throw EncodingError("missing covariate column '" + tr.name + "'");
    if (it->cells.size() != rows) throw EncodingError("ragged column '" + tr.name + "'");
    switch (tr.kind) {
      case ColumnKind::continuous:
        for (std::size_t i = 0; i < rows; ++i)
          x(static_cast<Eigen::Index>(i), out) = (parse_number(it->cells[i], tr.name) - tr.mean) / tr.sd;
        ++out;
        break;
      case ColumnKind::binary:
        for (std::size_t i = 0; i < rows; ++i) {
          const double v = parse_number(it->cells[i], tr.name);
          if (v != 0.0 && v != 1.0) throw EncodingError("binary column '" + tr.name + "' has value " + it->cells[i]);
          x(static_cast<Eigen::Index>(i), out) = v;
        }
        ++out;
        break;
      case ColumnKind::categorical: {
        const auto k = static_cast<Eigen::Index>(tr.levels.size()) - 1;
        x.block(0, out, x.rows(), k).setZero();
        for (std::size_t i = 0; i < rows; ++i) {
          auto lv = std::find(tr.levels.begin(), tr.levels.end(), it->cells[i]);
          if (lv == tr.levels.end())
            throw EncodingError("unseen category '" + it->cells[i] + "' in column '" + tr.name + "'");
          const auto idx = lv - tr.levels.begin();
          if (idx > 0) x(static_cast<Eigen::Index>(i), out + idx - 1) = 1.0;
        }
        out += k;
        break;
      }
    }
  }
  return x;
}

/// Fits the encoding on a training table: continuous columns standardized,
/// binary passed through, categorical one-hot with the first level dropped.
inline std::pair<Matrix, EncodingReport> encode_covariates(const RawTable& table) {
  if (table.empty() || table.front().cells.empty()) throw EncodingError("empty covariate table");
  EncodingReport report;
  for (const auto& col : table) {
    ColumnTransform tr;
    tr.name = col.name;
    tr.kind = col.kind;
    if (col.kind == ColumnKind::continuous) {
      double sum = 0.0;
      for (const auto& c : col.cells) sum += parse_number(c, col.name);
      const double mean = sum / static_cast<double>(col.cells.size());
      double ss = 0.0;
      for (const auto& c : col.cells) ss += std::pow(parse_number(c, col.name) - mean, 2);
      const double sd = std::sqrt(ss / static_cast<double>(col.cells.size()));
      if (!(sd > 1e-12 * std::max(1.0, std::abs(mean))))
        throw EncodingError("zero variance in continuous column '" + col.name + "'");
      tr.mean = mean;
      tr.sd = sd;
    } else if (col.kind == ColumnKind::categorical) {
      tr.levels = detail::sorted_levels(col.cells);
    }
    report.columns.push_back(std::move(tr));
  }
  return {apply_encoding(report, table), std::move(report)};
}

/// Kind inference for ingested CSV columns: 0/1-valued columns are binary,
/// names listed in `categorical` are categorical, everything else continuous.
inline ColumnKind infer_kind(const RawColumn& col, const std::vector<std::string>& categorical) {
  if (std::find(categorical.begin(), categorical.end(), col.name) != categorical.end())
    return ColumnKind::categorical;
  for (const auto& c : col.cells) {
    const double v = parse_number(c, col.name);
    if (v != 0.0 && v != 1.0) return ColumnKind::continuous;
  }
  return ColumnKind::binary;
}

}  // namespace bcs
