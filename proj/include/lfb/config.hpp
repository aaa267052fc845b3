#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lfb/errors.hpp"

namespace lfb {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace detail

/// Sectioned key = value configuration. Storage is sorted maps, so
/// serialization is canonical: parse(serialize(c)) == c and
/// serialize(parse(s)) is a fixed point for any well-formed s. Keys given
/// before the first section header live in the unnamed section "".
class Config {
 public:
  void set(const std::string& section, const std::string& key,
           const std::string& value) {
    if (key.empty()) throw ValueError("config: empty key");
    sections_[section][key] = value;
  }

  bool has(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) != 0;
  }

  const std::string& get(const std::string& section,
                         const std::string& key) const {
    const auto s = sections_.find(section);
    if (s != sections_.end()) {
      const auto k = s->second.find(key);
      if (k != s->second.end()) return k->second;
    }
    throw ValueError("config: missing key [" + section + "] " + key);
  }

  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const {
    return has(section, key) ? get(section, key) : fallback;
  }

  /// Typed getters parse the full value; trailing junk is an error.
  long long get_int(const std::string& section, const std::string& key) const {
    const std::string& raw = get(section, key);
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(raw, &used);
    } catch (const std::exception&) {
      used = std::string::npos;
    }
    if (used != raw.size() || raw.empty()) {
      throw ValueError("config: [" + section + "] " + key + " = '" + raw +
                       "' is not an integer");
    }
    return v;
  }

  std::size_t get_size(const std::string& section,
                       const std::string& key) const {
    const long long v = get_int(section, key);
    if (v < 0) {
      throw ValueError("config: [" + section + "] " + key +
                       " must not be negative");
    }
    return static_cast<std::size_t>(v);
  }

  double get_double(const std::string& section, const std::string& key) const {
    const std::string& raw = get(section, key);
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(raw, &used);
    } catch (const std::exception&) {
      used = std::string::npos;
    }
    if (used != raw.size() || raw.empty()) {
      throw ValueError("config: [" + section + "] " + key + " = '" + raw +
                       "' is not a number");
    }
    return v;
  }

  bool get_bool(const std::string& section, const std::string& key) const {
    const std::string& raw = get(section, key);
    if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") {
      return true;
    }
    if (raw == "false" || raw == "0" || raw == "no" || raw == "off") {
      return false;
    }
    throw ValueError("config: [" + section + "] " + key + " = '" + raw +
                     "' is not a boolean");
  }

  std::vector<std::string> section_names() const {
    std::vector<std::string> names;
    for (const auto& [name, keys] : sections_) names.push_back(name);
    return names;
  }

  std::vector<std::string> keys(const std::string& section) const {
    std::vector<std::string> out;
    const auto s = sections_.find(section);
    if (s != sections_.end()) {
      for (const auto& [key, value] : s->second) out.push_back(key);
    }
    return out;
  }

  /// Parses `[section]` headers and `key = value` lines; '#' and ';' start
  /// comments, blanks are skipped. All malformed lines are reported together
  /// with their line numbers.
  static Config parse(std::istream& in) {
    Config cfg;
    std::vector<std::string> problems;
    std::string section;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string text = detail::trim(line);
      if (text.empty() || text[0] == '#' || text[0] == ';') continue;
      if (text.front() == '[') {
        if (text.back() != ']' || text.size() < 3) {
          problems.push_back("line " + std::to_string(lineno) +
                             ": malformed section header '" + text + "'");
          continue;
        }
        section = detail::trim(text.substr(1, text.size() - 2));
        if (section.empty()) {
          problems.push_back("line " + std::to_string(lineno) +
                             ": empty section name");
        }
        continue;
      }
      const auto eq = text.find('=');
      if (eq == std::string::npos) {
        problems.push_back("line " + std::to_string(lineno) +
                           ": expected 'key = value', got '" + text + "'");
        continue;
      }
      const std::string key = detail::trim(text.substr(0, eq));
      const std::string value = detail::trim(text.substr(eq + 1));
      if (key.empty()) {
        problems.push_back("line " + std::to_string(lineno) + ": empty key");
        continue;
      }
      cfg.sections_[section][key] = value;
    }
    if (!problems.empty()) throw ConfigError(problems);
    return cfg;
  }

  static Config parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static Config parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    return parse(in);
  }

  void serialize(std::ostream& out) const {
    bool first = true;
    for (const auto& [name, keys] : sections_) {
      if (!name.empty()) {
        if (!first) out << "\n";
        out << "[" << name << "]\n";
      }
      for (const auto& [key, value] : keys) {
        out << key << " = " << value << "\n";
      }
      first = false;
    }
  }

  std::string serialized() const {
    std::ostringstream out;
    serialize(out);
    return out.str();
  }

  void save_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    serialize(out);
    if (!out) throw IoError("failed writing '" + path + "'");
  }

  /// FNV-1a over the canonical serialization: equal configs hash equal
  /// regardless of input formatting or key order.
  std::uint64_t hash() const {
    const std::string text = serialized();
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const unsigned char c : text) {
      h ^= c;
      h *= 0x100000001B3ull;
    }
    return h;
  }

  std::string hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(hash()));
    return std::string(buf);
  }

  bool operator==(const Config& other) const {
    return sections_ == other.sections_;
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace lfb
