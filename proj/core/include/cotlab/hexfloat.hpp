#pragma once

#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace cotlab {

// Exact textual round trip for doubles ("%a" hexadecimal-float form).
inline std::string hex_from_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double double_from_hex(const std::string& s) {
  const char* c = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(c, &end);
  if (end == c || *end != '\0') throw std::invalid_argument("not a hex float: " + s);
  return v;
}

}  // namespace cotlab
