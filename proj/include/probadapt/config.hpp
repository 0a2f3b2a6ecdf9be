// Copyright 2026 The probadapt Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "probadapt/errors.hpp"
#include "probadapt/pgm.hpp"

// TOML-style key/value documents: `[section]` headers, `key = value` lines,
// `#` comments. Values are numbers, booleans, "strings" or [arrays] of numbers.

namespace probadapt {

class ConfigDoc {
 public:
  static ConfigDoc parse(const std::string& text, const std::string& origin = "<config>") {
    ConfigDoc doc;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = strip(strip_comment(line));
      if (line.empty()) continue;
      auto where = [&] { return origin + ":" + std::to_string(lineno) + ": "; };
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(where() + "unterminated section header");
        section = strip(line.substr(1, line.size() - 2));
        if (section.empty()) throw ConfigError(where() + "empty section name");
        doc.touch_section(section);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(where() + "expected key = value");
      const std::string key = strip(line.substr(0, eq));
      const std::string value = strip(line.substr(eq + 1));
      if (key.empty() || value.empty()) throw ConfigError(where() + "expected key = value");
      if (section.empty()) throw ConfigError(where() + "key '" + key + "' outside of any section");
      doc.set_raw(section, key, value);
    }
    return doc;
  }

  static ConfigDoc load(const std::filesystem::path& path) { return parse(pgm::read_file(path), path.string()); }

  void save(const std::filesystem::path& path) const { pgm::write_file(path, dump()); }

  std::string dump() const {
    std::string out;
    for (const auto& name : order_) {
      const auto& sec = sections_.at(name);
      if (!out.empty()) out += "\n";
      out += "[" + name + "]\n";
      for (const auto& key : sec.order) out += key + " = " + sec.values.at(key) + "\n";
    }
    return out;
  }

  bool has(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    return it != sections_.end() && it->second.values.count(key);
  }
  bool has_section(const std::string& section) const { return sections_.count(section) != 0; }

  std::vector<std::string> keys(const std::string& section) const {
    auto it = sections_.find(section);
    return it == sections_.end() ? std::vector<std::string>{} : it->second.order;
  }
  const std::vector<std::string>& sections() const noexcept { return order_; }

  const std::string& raw(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    if (it == sections_.end() || !it->second.values.count(key)) {
      throw ConfigError("missing config key " + section + "." + key);
    }
    used_.insert(section + "." + key);
    return it->second.values.at(key);
  }

  std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const {
    return has(section, key) ? parse_string(section, key) : fallback;
  }
  double get_double(const std::string& section, const std::string& key, double fallback) const {
    return has(section, key) ? parse_double(raw(section, key), section + "." + key) : fallback;
  }
  std::int64_t get_int(const std::string& section, const std::string& key, std::int64_t fallback) const {
    if (!has(section, key)) return fallback;
    const double v = get_double(section, key, 0.0);
    if (v != static_cast<double>(static_cast<std::int64_t>(v))) {
      throw ConfigError(section + "." + key + ": expected an integer");
    }
    return static_cast<std::int64_t>(v);
  }
  std::uint64_t get_uint(const std::string& section, const std::string& key, std::uint64_t fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& r = raw(section, key);
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(r, &used);
      if (used != r.size() || r.front() == '-') throw std::invalid_argument(r);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(section + "." + key + ": expected a non-negative integer, got '" + r + "'");
    }
  }
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& r = raw(section, key);
    if (r == "true") return true;
    if (r == "false") return false;
    throw ConfigError(section + "." + key + ": expected true or false, got '" + r + "'");
  }
  std::vector<double> get_array(const std::string& section, const std::string& key,
                                const std::vector<double>& fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& r = raw(section, key);
    if (r.size() < 2 || r.front() != '[' || r.back() != ']') throw ConfigError(section + "." + key + ": expected [array]");
    std::vector<double> out;
    std::stringstream ss(r.substr(1, r.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = strip(item);
      if (item.empty()) continue;
      out.push_back(parse_double(item, section + "." + key));
    }
    return out;
  }

  void set_raw(const std::string& section, const std::string& key, const std::string& value) {
    auto& sec = touch_section(section);
    if (!sec.values.count(key)) sec.order.push_back(key);
    sec.values[key] = value;
  }
  void set_string(const std::string& section, const std::string& key, const std::string& v) {
    set_raw(section, key, "\"" + v + "\"");
  }
  void set_double(const std::string& section, const std::string& key, double v) {
    set_raw(section, key, format_double(v));
  }
  void set_int(const std::string& section, const std::string& key, std::int64_t v) {
    set_raw(section, key, std::to_string(v));
  }
  void set_uint(const std::string& section, const std::string& key, std::uint64_t v) {
    set_raw(section, key, std::to_string(v));
  }
  void set_bool(const std::string& section, const std::string& key, bool v) { set_raw(section, key, v ? "true" : "false"); }
  void set_array(const std::string& section, const std::string& key, const std::vector<double>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
    set_raw(section, key, s + "]");
  }

  // Values from `other` replace or extend this document's.
  void merge(const ConfigDoc& other) {
    for (const auto& name : other.order_) {
      const auto& sec = other.sections_.at(name);
      for (const auto& key : sec.order) set_raw(name, key, sec.values.at(key));
    }
  }

  // Applies a `section.key=value` override.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
    }
    set_raw(strip(assignment.substr(0, dot)), strip(assignment.substr(dot + 1, eq - dot - 1)),
            strip(assignment.substr(eq + 1)));
  }

  // Keys present in `section` that no getter has read.
  std::vector<std::string> unread(const std::string& section) const {
    std::vector<std::string> out;
    for (const auto& key : keys(section)) {
      if (!used_.count(section + "." + key)) out.push_back(key);
    }
    return out;
  }

  static std::string format_double(double v) {
    char buf[64];
    if (std::isfinite(v) && v == std::trunc(v) && std::abs(v) < 1e15) {
      std::snprintf(buf, sizeof buf, "%.0f", v);
      return buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s(buf);
    // Shortest representation that parses back to the same value.
    for (int prec = 1; prec < 17; ++prec) {
      std::snprintf(buf, sizeof buf, "%.*g", prec, v);
      if (std::stod(buf) == v) {
        s = buf;
        break;
      }
    }
    return s;
  }

 private:
  struct Section {
    std::vector<std::string> order;
    std::map<std::string, std::string> values;
  };

  Section& touch_section(const std::string& name) {
    auto it = sections_.find(name);
    if (it == sections_.end()) {
      order_.push_back(name);
      it = sections_.emplace(name, Section{}).first;
    }
    return it->second;
  }

  static std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }

  static double parse_double(const std::string& r, const std::string& what) {
    try {
      std::size_t used = 0;
      const double v = std::stod(r, &used);
      if (used != r.size()) throw std::invalid_argument(r);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(what + ": expected a number, got '" + r + "'");
    }
  }

  std::string parse_string(const std::string& section, const std::string& key) const {
    const std::string& r = raw(section, key);
    if (r.size() >= 2 && r.front() == '"' && r.back() == '"') return r.substr(1, r.size() - 2);
    return r;
  }

  std::vector<std::string> order_;
  std::map<std::string, Section> sections_;
  mutable std::set<std::string> used_;
};

}  // namespace probadapt
