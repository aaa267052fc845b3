#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "lfb/errors.hpp"

namespace lfb::detail {

// Text-format plumbing shared by the evaluation interchange files, the
// synthetic dataset descriptors, and the metrics logs.

/// Shortest round-trip decimal: re-parsing the output restores the bits.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Splits a line on commas and/or whitespace, dropping empty fields.
inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) fields.push_back(std::move(cur));
  return fields;
}

inline double parse_double(const std::string& s, std::size_t line_no) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValueError("line " + std::to_string(line_no) +
                     ": cannot parse number '" + s + "'");
  }
}

inline std::int64_t parse_int(const std::string& s, std::size_t line_no) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValueError("line " + std::to_string(line_no) +
                     ": cannot parse integer '" + s + "'");
  }
}

}  // namespace lfb::detail
