#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <system_error>

#include "aexp/errors.hpp"

namespace aexp {

// Shortest representation that parses back to the identical double.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("not a number: '" + std::string(s) + "'");
  return x;
}

inline long long parse_int(std::string_view s) {
  long long x = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("not an integer: '" + std::string(s) + "'");
  return x;
}

}  // namespace aexp
