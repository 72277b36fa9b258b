// SPDX-License-Identifier: Apache-2.0
//
// Validation against the reference executor and wall-clock measurement.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "schedkit/module.hpp"

namespace schedkit {

/// Seeded inputs: float32 uniform in [-1, 1], int32 uniform in {-1, 0, 1}.
/// The mapping from the 64-bit Mersenne Twister stream is fixed, so values
/// are the same on every platform.
TensorMap make_inputs(const Graph& graph, std::uint64_t seed = 0);

/// max_i |got_i - want_i| / max(max_i |want_i|, 1e-6).
double max_relative_error(const Tensor& got, const Tensor& want, std::int64_t* worst = nullptr);

struct OutputCheck {
  std::string name;
  double max_rel_error = 0;
  std::int64_t worst_index = -1;        // flat index of the largest difference
  std::vector<std::int64_t> worst_at;   // same, per axis
  bool pass = false;
};

struct ValidationReport {
  double tolerance = 0;
  std::vector<OutputCheck> outputs;
  bool pass = false;

  nlohmann::ordered_json to_json() const;
};

ValidationReport validate(const Module& module, double tolerance = 1e-5, std::uint64_t seed = 0);

/// Hardware or software event counters around the timed call.
class CounterProvider {
 public:
  virtual ~CounterProvider() = default;
  virtual std::vector<std::string> events() const = 0;
  virtual void open(const std::vector<std::string>& events) = 0;
  virtual void start() = 0;
  virtual void stop() = 0;
  /// Values of the opened events for the last start/stop window.
  virtual std::map<std::string, double> read() const = 0;
};

using CounterFactory = std::function<std::unique_ptr<CounterProvider>()>;

/// "wall_clock" is always registered.
void register_counter_provider(const std::string& name, CounterFactory factory);
std::unique_ptr<CounterProvider> make_counter_provider(const std::string& name);
std::vector<std::string> counter_providers();

struct EvalOptions {
  int repeats = 10;
  int warmup = 2;
  std::uint64_t seed = 0;
  std::vector<std::string> providers;  // counter providers to open
  // Called right before the clock starts and right after it stops.
  std::function<void()> on_start;
  std::function<void()> on_stop;
};

struct Metrics {
  std::vector<std::int64_t> samples_ns;
  std::int64_t min_ns = 0;
  std::int64_t median_ns = 0;
  double mean_ns = 0;
  double flops = 0;
  double gflops = 0;  // flops / min time
  std::map<std::string, double> counters;  // "provider.event" -> mean over repeats

  nlohmann::ordered_json to_json() const;
};

Metrics evaluate(const Module& module, const EvalOptions& options = {});

}  // namespace schedkit
