// SPDX-License-Identifier: Apache-2.0
//
// Fully associative LRU cache simulator over interpreter access traces.
// Tensors are laid out one after another, each starting on a line boundary.
#pragma once

#include <cstdint>
#include <list>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "schedkit/backend_interp.hpp"

namespace schedkit {

struct CacheConfig {
  std::int64_t capacity_bytes = 32768;
  std::int64_t line_bytes = 64;

  /// Both powers of two, line size dividing capacity.
  void check() const;
  std::int64_t lines() const { return capacity_bytes / line_bytes; }
};

/// Parses "CAPACITY:LINE", e.g. "32768:64".
CacheConfig parse_cache_config(const std::string& text);

struct TensorMisses {
  std::string name;
  std::int64_t accesses = 0;
  std::int64_t misses = 0;
};

struct MissReport {
  std::int64_t accesses = 0;
  std::int64_t misses = 0;
  std::vector<TensorMisses> tensors;  // same order as the trace tensors

  nlohmann::ordered_json to_json() const;
};

/// LRU set of line addresses.
class LruCache {
 public:
  explicit LruCache(std::int64_t lines);
  /// Touches `line`; returns true on a miss.
  bool access(std::uint64_t line);

 private:
  std::int64_t capacity_;
  std::list<std::uint64_t> order_;  // most recent first
  std::unordered_map<std::uint64_t, std::list<std::uint64_t>::iterator> where_;
};

/// Streaming simulation, usable directly as a TraceSink.
class CacheSimulator {
 public:
  CacheSimulator(CacheConfig config, std::vector<TraceTensor> tensors);

  void access(const TraceEvent& e);
  void operator()(const TraceEvent& e) { access(e); }
  const MissReport& report() const { return report_; }

 private:
  CacheConfig config_;
  std::vector<TraceTensor> tensors_;
  std::vector<std::uint64_t> base_;
  LruCache cache_;
  MissReport report_;
};

MissReport predict_misses(const std::vector<TraceEvent>& trace,
                          const std::vector<TraceTensor>& tensors, CacheConfig config);

/// Traces one execution of `module` on seeded inputs and simulates it.
MissReport predict_misses(const InterpModule& module, CacheConfig config, std::uint64_t seed = 0);

}  // namespace schedkit
