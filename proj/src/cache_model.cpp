// SPDX-License-Identifier: Apache-2.0
#include "schedkit/cache_model.hpp"

#include "schedkit/error.hpp"
#include "schedkit/harness.hpp"

namespace schedkit {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw Error("cache_model", msg); }

bool pow2(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

void CacheConfig::check() const {
  if (!pow2(capacity_bytes) || !pow2(line_bytes)) {
    fail("capacity " + std::to_string(capacity_bytes) + " and line size " +
         std::to_string(line_bytes) + " must be powers of two");
  }
  if (line_bytes > capacity_bytes) fail("line size exceeds the capacity");
}

CacheConfig parse_cache_config(const std::string& text) {
  const auto colon = text.find(':');
  CacheConfig c;
  try {
    std::size_t used = 0;
    c.capacity_bytes = std::stoll(text.substr(0, colon), &used);
    if (used != text.substr(0, colon).size()) throw std::invalid_argument(text);
    if (colon != std::string::npos) {
      const std::string line = text.substr(colon + 1);
      c.line_bytes = std::stoll(line, &used);
      if (used != line.size()) throw std::invalid_argument(text);
    }
  } catch (const std::logic_error&) {
    fail("cannot parse cache config '" + text + "' (expected CAPACITY:LINE)");
  }
  c.check();
  return c;
}

nlohmann::ordered_json MissReport::to_json() const {
  nlohmann::ordered_json j;
  j["accesses"] = accesses;
  j["misses"] = misses;
  j["tensors"] = nlohmann::ordered_json::array();
  for (const auto& t : tensors) {
    j["tensors"].push_back({{"name", t.name}, {"accesses", t.accesses}, {"misses", t.misses}});
  }
  return j;
}

LruCache::LruCache(std::int64_t lines) : capacity_(lines) {
  if (lines < 1) fail("cache needs at least one line");
}

bool LruCache::access(std::uint64_t line) {
  auto it = where_.find(line);
  if (it != where_.end()) {
    order_.splice(order_.begin(), order_, it->second);
    return false;
  }
  if (static_cast<std::int64_t>(order_.size()) == capacity_) {
    where_.erase(order_.back());
    order_.pop_back();
  }
  order_.push_front(line);
  where_.emplace(line, order_.begin());
  return true;
}

CacheSimulator::CacheSimulator(CacheConfig config, std::vector<TraceTensor> tensors)
    : config_(config), tensors_(std::move(tensors)), cache_((config.check(), config.lines())) {
  std::uint64_t next = 0;
  const auto line = static_cast<std::uint64_t>(config_.line_bytes);
  for (const auto& t : tensors_) {
    base_.push_back(next);
    const auto bytes = static_cast<std::uint64_t>(t.elements) * t.element_size;
    next += (bytes + line - 1) / line * line;
    report_.tensors.push_back({t.name, 0, 0});
  }
}

void CacheSimulator::access(const TraceEvent& e) {
  if (e.tensor >= tensors_.size()) fail("trace event names tensor " + std::to_string(e.tensor));
  const TraceTensor& t = tensors_[e.tensor];
  if (e.index < 0 || e.index >= t.elements) {
    fail("trace event index " + std::to_string(e.index) + " outside " + t.name);
  }
  const std::uint64_t addr = base_[e.tensor] + static_cast<std::uint64_t>(e.index) * t.element_size;
  const bool miss = cache_.access(addr / static_cast<std::uint64_t>(config_.line_bytes));
  ++report_.accesses;
  ++report_.tensors[e.tensor].accesses;
  if (miss) {
    ++report_.misses;
    ++report_.tensors[e.tensor].misses;
  }
}

MissReport predict_misses(const std::vector<TraceEvent>& trace,
                          const std::vector<TraceTensor>& tensors, CacheConfig config) {
  CacheSimulator sim(config, tensors);
  for (const auto& e : trace) sim.access(e);
  return sim.report();
}

MissReport predict_misses(const InterpModule& module, CacheConfig config, std::uint64_t seed) {
  CacheSimulator sim(config, module.trace_tensors());
  module.execute_traced(make_inputs(module.graph(), seed), [&](const TraceEvent& e) { sim.access(e); });
  return sim.report();
}

}  // namespace schedkit
