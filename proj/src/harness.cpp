// SPDX-License-Identifier: Apache-2.0
#include "schedkit/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <random>

#include "schedkit/error.hpp"

namespace schedkit {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw Error("harness", msg); }

using Clock = std::chrono::steady_clock;

class WallClock final : public CounterProvider {
 public:
  std::vector<std::string> events() const override { return {"ns"}; }
  void open(const std::vector<std::string>& events) override {
    for (const auto& e : events) {
      if (e != "ns") fail("wall_clock has no event '" + e + "'");
    }
  }
  void start() override { t0_ = Clock::now(); }
  void stop() override { t1_ = Clock::now(); }
  std::map<std::string, double> read() const override {
    return {{"ns", static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1_ - t0_).count())}};
  }

 private:
  Clock::time_point t0_, t1_;
};

struct Registry {
  std::mutex mu;
  std::map<std::string, CounterFactory> factories{
      {"wall_clock", [] { return std::make_unique<WallClock>(); }}};
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

TensorMap make_inputs(const Graph& graph, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TensorMap in;
  for (const auto& spec : graph.inputs) {
    Tensor t(spec);
    for (std::int64_t i = 0; i < t.size(); ++i) {
      const std::uint64_t x = rng();
      if (spec.dtype == DType::int32) {
        t.set(i, static_cast<double>(static_cast<std::int64_t>(x % 3) - 1));
      } else {
        t.set(i, 2.0 * static_cast<double>(x >> 11) * 0x1.0p-53 - 1.0);
      }
    }
    in.emplace(spec.name, std::move(t));
  }
  return in;
}

double max_relative_error(const Tensor& got, const Tensor& want, std::int64_t* worst) {
  if (got.spec().shape != want.spec().shape || got.dtype() != want.dtype()) {
    fail("compared tensors differ in shape or dtype");
  }
  double scale = 0, diff = 0;
  std::int64_t at = want.size() ? 0 : -1;
  for (std::int64_t i = 0; i < want.size(); ++i) {
    scale = std::max(scale, std::abs(want.at(i)));
    const double d = std::abs(got.at(i) - want.at(i));
    if (d > diff || std::isnan(d)) {
      diff = std::isnan(d) ? INFINITY : d;
      at = i;
    }
  }
  if (worst) *worst = at;
  return diff / std::max(scale, 1e-6);
}

nlohmann::ordered_json ValidationReport::to_json() const {
  nlohmann::ordered_json j;
  j["pass"] = pass;
  j["tolerance"] = tolerance;
  j["outputs"] = nlohmann::ordered_json::array();
  for (const auto& o : outputs) {
    j["outputs"].push_back({{"name", o.name},
                            {"max_rel_error", o.max_rel_error},
                            {"worst_index", o.worst_at},
                            {"pass", o.pass}});
  }
  return j;
}

ValidationReport validate(const Module& module, double tolerance, std::uint64_t seed) {
  const Graph& g = module.graph();
  const TensorMap in = make_inputs(g, seed);
  const TensorMap want = reference_execute(g, in);
  TensorMap got;
  try {
    got = module.execute(in);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(std::string("execution failed: ") + e.what());
  }
  ValidationReport r;
  r.tolerance = tolerance;
  r.pass = true;
  for (const auto& name : g.outputs) {
    OutputCheck c;
    c.name = name;
    c.max_rel_error = max_relative_error(got.at(name), want.at(name), &c.worst_index);
    c.pass = c.max_rel_error <= tolerance;
    if (c.worst_index >= 0) {
      const auto& shape = g.tensor(name).shape;
      c.worst_at.assign(shape.size(), 0);
      std::int64_t rest = c.worst_index;
      for (std::size_t a = shape.size(); a-- > 0;) {
        c.worst_at[a] = rest % shape[a];
        rest /= shape[a];
      }
    }
    r.pass &= c.pass;
    r.outputs.push_back(std::move(c));
  }
  return r;
}

void register_counter_provider(const std::string& name, CounterFactory factory) {
  auto& r = registry();
  std::lock_guard<std::mutex> lock(r.mu);
  r.factories[name] = std::move(factory);
}

std::unique_ptr<CounterProvider> make_counter_provider(const std::string& name) {
  auto& r = registry();
  std::lock_guard<std::mutex> lock(r.mu);
  auto it = r.factories.find(name);
  if (it == r.factories.end()) fail("unknown counter provider '" + name + "'");
  return it->second();
}

std::vector<std::string> counter_providers() {
  auto& r = registry();
  std::lock_guard<std::mutex> lock(r.mu);
  std::vector<std::string> out;
  for (const auto& [name, f] : r.factories) out.push_back(name);
  return out;
}

nlohmann::ordered_json Metrics::to_json() const {
  nlohmann::ordered_json j;
  j["samples_ns"] = samples_ns;
  j["min_ns"] = min_ns;
  j["median_ns"] = median_ns;
  j["mean_ns"] = mean_ns;
  j["flops"] = flops;
  j["gflops"] = gflops;
  j["counters"] = counters;
  return j;
}

Metrics evaluate(const Module& module, const EvalOptions& options) {
  if (options.repeats < 1) fail("repeats must be at least 1");
  if (options.warmup < 0) fail("warmup must be non-negative");
  const Graph& g = module.graph();
  const TensorMap in = make_inputs(g, options.seed);
  check_inputs(g, in);
  TensorMap out;
  std::vector<void*> params;
  for (const auto& spec : g.inputs) params.push_back(const_cast<void*>(in.at(spec.name).data()));
  for (const auto& name : g.outputs) out.emplace(name, Tensor(g.tensor(name)));
  for (const auto& name : g.outputs) params.push_back(out.at(name).data());

  std::vector<std::pair<std::string, std::unique_ptr<CounterProvider>>> providers;
  for (const auto& name : options.providers) {
    auto p = make_counter_provider(name);
    p->open(p->events());
    providers.emplace_back(name, std::move(p));
  }

  Metrics m;
  for (int w = 0; w < options.warmup; ++w) module.invoke(params.data());
  for (int r = 0; r < options.repeats; ++r) {
    if (options.on_start) options.on_start();
    for (auto& [n, p] : providers) p->start();
    const auto t0 = Clock::now();
    module.invoke(params.data());
    const auto t1 = Clock::now();
    for (auto& [n, p] : providers) p->stop();
    if (options.on_stop) options.on_stop();
    m.samples_ns.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
    for (auto& [n, p] : providers) {
      for (const auto& [event, v] : p->read()) m.counters[n + "." + event] += v / options.repeats;
    }
  }
  std::vector<std::int64_t> sorted = m.samples_ns;
  std::sort(sorted.begin(), sorted.end());
  m.min_ns = sorted.front();
  const std::size_t n = sorted.size();
  m.median_ns = n % 2 ? sorted[n / 2] : (sorted[n / 2 - 1] + sorted[n / 2]) / 2;
  double sum = 0;
  for (auto s : sorted) sum += static_cast<double>(s);
  m.mean_ns = sum / static_cast<double>(n);
  m.flops = static_cast<double>(g.flops());
  m.gflops = m.min_ns > 0 ? m.flops / static_cast<double>(m.min_ns) : 0;
  return m;
}

}  // namespace schedkit
