// SPDX-License-Identifier: Apache-2.0
//
// Brute-force LRU oracle and random traces for cache model checks. The
// oracle keeps a last-use stamp per resident line and evicts by linear scan;
// it shares no code with the simulator.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "schedkit/backend_interp.hpp"

namespace schedkit::test_support {

inline std::int64_t brute_force_misses(const std::vector<std::uint64_t>& lines, std::size_t capacity) {
  std::vector<std::uint64_t> line;
  std::vector<std::int64_t> stamp;
  std::unordered_map<std::uint64_t, std::size_t> slot;
  std::int64_t misses = 0, now = 0;
  for (auto l : lines) {
    ++now;
    if (auto it = slot.find(l); it != slot.end()) {
      stamp[it->second] = now;
      continue;
    }
    ++misses;
    if (line.size() < capacity) {
      slot[l] = line.size();
      line.push_back(l);
      stamp.push_back(now);
      continue;
    }
    std::size_t oldest = 0;
    for (std::size_t j = 1; j < stamp.size(); ++j) {
      if (stamp[j] < stamp[oldest]) oldest = j;
    }
    slot.erase(line[oldest]);
    slot[l] = oldest;
    line[oldest] = l;
    stamp[oldest] = now;
  }
  return misses;
}

struct RandomTrace {
  std::vector<TraceTensor> tensors;
  std::vector<TraceEvent> events;
};

/// Strided sweeps with occasional jumps over 1 to 4 tensors.
inline RandomTrace random_trace(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  RandomTrace t;
  const int count = 1 + static_cast<int>(rng() % 4);
  for (int k = 0; k < count; ++k) {
    t.tensors.push_back({"t" + std::to_string(k), 1 + static_cast<std::int64_t>(rng() % 5000),
                         rng() % 2 ? 4u : 8u});
  }
  std::uint32_t cur = 0;
  std::int64_t idx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rng() % 16 == 0) {
      cur = static_cast<std::uint32_t>(rng() % t.tensors.size());
      idx = static_cast<std::int64_t>(rng() % t.tensors[cur].elements);
    } else {
      idx = (idx + static_cast<std::int64_t>(rng() % 9)) % t.tensors[cur].elements;
    }
    t.events.push_back({cur, idx, rng() % 3 == 0});
  }
  return t;
}

/// Line number of every event with tensors packed back to back, each
/// starting on a line boundary.
inline std::vector<std::uint64_t> line_addresses(const std::vector<TraceTensor>& tensors,
                                                 const std::vector<TraceEvent>& events,
                                                 std::int64_t line) {
  std::vector<std::uint64_t> base;
  std::uint64_t next = 0;
  for (const auto& x : tensors) {
    base.push_back(next);
    const std::uint64_t bytes = x.elements * x.element_size;
    next += ((bytes + line - 1) / line) * line;
  }
  std::vector<std::uint64_t> out;
  out.reserve(events.size());
  for (const auto& e : events) {
    out.push_back((base[e.tensor] + e.index * tensors[e.tensor].element_size) / line);
  }
  return out;
}

}  // namespace schedkit::test_support
