#pragma once

#include <charconv>
#include <string>

namespace softquant {

/// Shortest text that parses back to exactly `v`. Every text artifact goes
/// through this so outputs are byte-stable and lossless.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace softquant
