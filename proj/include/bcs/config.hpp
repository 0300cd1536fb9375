#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "bcs/error.hpp"

namespace bcs {

/// A flat YAML mapping: every value is a scalar or a list of scalars.
/// Entries keep their source line so validation errors can point at it.
class KeyValueConfig {
 public:
  struct Entry {
    std::string key;
    std::vector<std::string> values;  // one element for a scalar
    bool is_list = false;
    int line = 0;

    const std::string& value() const { return values.front(); }
  };

  static KeyValueConfig parse(const std::string& text) {
    YAML::Node root;
    try {
      root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
      throw ConfigError(e.msg, e.mark.is_null() ? 0 : e.mark.line + 1);
    }
    KeyValueConfig cfg;
    if (root.IsNull()) return cfg;
    if (!root.IsMap()) throw ConfigError("config must be a mapping of keys to values", line_of(root));
    for (const auto& kv : root) {
      const int line = line_of(kv.first);
      if (!kv.first.IsScalar()) throw ConfigError("keys must be plain names", line);
      Entry e{kv.first.Scalar(), {}, false, line};
      if (cfg.find(e.key)) throw ConfigError("duplicate key '" + e.key + "'", line);
      const YAML::Node& v = kv.second;
      if (v.IsScalar()) {
        e.values.push_back(v.Scalar());
      } else if (v.IsSequence()) {
        e.is_list = true;
        for (const auto& item : v) {
          if (!item.IsScalar()) throw ConfigError("list '" + e.key + "' must hold plain values", line_of(item));
          e.values.push_back(item.Scalar());
        }
      } else if (v.IsNull()) {
        throw ConfigError("empty value for '" + e.key + "'", line);
      } else {
        throw ConfigError("'" + e.key + "' must be a value or a list", line);
      }
      cfg.entries_.push_back(std::move(e));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  const Entry* find(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.key == key) return &e;
    return nullptr;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  /// Rejects keys outside `known`, naming the offending line.
  void require_known(const std::vector<std::string>& known) const {
    for (const auto& e : entries_)
      if (std::find(known.begin(), known.end(), e.key) == known.end())
        throw ConfigError("unknown key '" + e.key + "'", e.line);
  }

  template <class T>
  bool get(const std::string& key, T& out) const {
    const Entry* e = find(key);
    if (!e) return false;
    if (e->is_list) throw ConfigError("'" + key + "' must be a single value", e->line);
    out = convert<T>(*e);
    return true;
  }

  /// A YAML list, or a single scalar split on commas.
  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    const Entry* e = find(key);
    if (!e) return out;
    if (e->is_list) {
      for (const auto& v : e->values)
        if (!trim(v).empty()) out.push_back(trim(v));
      return out;
    }
    std::stringstream ss(e->value());
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

 private:
  static int line_of(const YAML::Node& n) {
    const auto m = n.Mark();
    return m.is_null() ? 0 : m.line + 1;
  }

  template <class T>
  static T convert(const Entry& e) {
    const std::string& s = e.value();
    if constexpr (std::is_same_v<T, std::string>) {
      return s;
    } else {
      T v{};
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size())
        throw ConfigError("invalid value '" + s + "' for '" + e.key + "'", e.line);
      return v;
    }
  }

  std::vector<Entry> entries_;
};

}  // namespace bcs
