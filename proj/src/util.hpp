// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>

namespace schedkit::util {

inline bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  auto alpha = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; };
  if (!alpha(s[0])) return false;
  for (char c : s) {
    if (!alpha(c) && !(c >= '0' && c <= '9')) return false;
  }
  return true;
}

template <class Range>
std::string join(const Range& r, std::string_view sep) {
  std::ostringstream os;
  bool first = true;
  for (const auto& v : r) {
    if (!first) os << sep;
    os << v;
    first = false;
  }
  return os.str();
}

inline std::string quote(std::string_view s) { return "'" + std::string(s) + "'"; }

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace schedkit::util
