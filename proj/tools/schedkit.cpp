// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: apply a schedule, search a strategy, trace misses.
//
// Exit codes: 0 every requested stage passed, 1 a validation or sample
// failed, 2 a pipeline or I/O error.
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "schedkit/backend_c.hpp"
#include "schedkit/backend_interp.hpp"
#include "schedkit/cache_model.hpp"
#include "schedkit/descript.hpp"
#include "schedkit/error.hpp"
#include "schedkit/harness.hpp"
#include "schedkit/strategy.hpp"

using namespace schedkit;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitError = 2;

struct Settings {
  std::string config_path;
  std::string backend = "interp";
  bool json_out = false;
  double tolerance = 1e-5;
  int repeats = 10;
  int warmup = 2;
  std::uint64_t seed = 0;
  SchedulerConfig scheduler;
  StrategyOptions strategy;
  Toolchain toolchain = Toolchain::from_env();
};

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cli", "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("cli", "'" + path + "': " + e.what());
  }
}

/// JSON config: vector_width, cache_budget, max_unroll, local_memory_bytes,
/// tolerance, repeats, warmup, cc, cflags. Command-line flags win.
void load_config(Settings& s, const CLI::App& app) {
  if (s.config_path.empty()) return;
  const json c = read_json(s.config_path);
  for (const auto& [key, value] : c.items()) {
    if (key == "vector_width") {
      s.scheduler.vector_width = value.get<int>();
      s.strategy.vector_width = value.get<int>();
    } else if (key == "cache_budget") {
      s.strategy.cache_budget = value.get<std::int64_t>();
    } else if (key == "max_unroll") {
      s.strategy.max_unroll = value.get<std::int64_t>();
    } else if (key == "local_memory_bytes") {
      s.scheduler.local_memory_bytes = value.get<std::int64_t>();
    } else if (key == "tolerance") {
      if (app.count("--tolerance") == 0) s.tolerance = value.get<double>();
    } else if (key == "repeats") {
      if (app.count("--repeats") == 0) s.repeats = value.get<int>();
    } else if (key == "warmup") {
      if (app.count("--warmup") == 0) s.warmup = value.get<int>();
    } else if (key == "cc") {
      s.toolchain.cc = value.get<std::string>();
    } else if (key == "cflags") {
      s.toolchain.flags = value.get<std::vector<std::string>>();
    } else {
      throw Error("cli", "unknown config key '" + key + "'");
    }
  }
}

/// Schedule documents carry "primitives"; anything else is a descript.
Schedule load_schedule(const Graph& g, const std::string& path, const Settings& s) {
  if (path.empty()) return Scheduler(g, {}, s.scheduler).schedule();
  const json doc = read_json(path);
  if (doc.is_object() && doc.contains("primitives")) return parse_schedule(g, doc, s.scheduler);
  Scheduler sch(g, {}, s.scheduler);
  apply_descript(sch, parse_descript(doc));
  return sch.schedule();
}

std::unique_ptr<Module> compile(const Graph& g, const Schedule& sch, const Settings& s) {
  if (s.backend == "interp") return std::make_unique<InterpModule>(compile_interp(g, sch));
  return std::make_unique<CModule>(compile_c(g, sch, s.toolchain));
}

EvalOptions eval_options(const Settings& s) {
  EvalOptions o;
  o.repeats = s.repeats;
  o.warmup = s.warmup;
  o.seed = s.seed;
  return o;
}

std::string format_ns(double ns) {
  char buf[32];
  if (ns >= 1e9) {
    std::snprintf(buf, sizeof buf, "%.3f s", ns * 1e-9);
  } else if (ns >= 1e6) {
    std::snprintf(buf, sizeof buf, "%.3f ms", ns * 1e-6);
  } else {
    std::snprintf(buf, sizeof buf, "%.3f us", ns * 1e-3);
  }
  return buf;
}

void print_row(const std::string& key, const std::string& value) {
  std::printf("%-12s %s\n", key.c_str(), value.c_str());
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// apply

struct ApplyArgs {
  std::string graph;
  std::string schedule;
  bool render = false;
  bool no_eval = false;
  std::string cache;
};

int cmd_apply(const ApplyArgs& a, const Settings& s) {
  const Graph g = parse_graph(read_json(a.graph));
  const Schedule sch = load_schedule(g, a.schedule, s);
  const auto module = compile(g, sch, s);
  const ValidationReport v = validate(*module, s.tolerance, s.seed);
  std::optional<Metrics> metrics;
  if (!a.no_eval) metrics = evaluate(*module, eval_options(s));
  std::optional<MissReport> misses;
  if (!a.cache.empty()) {
    misses = predict_misses(compile_interp(g, sch), parse_cache_config(a.cache), s.seed);
  }

  if (s.json_out) {
    json r;
    r["graph"] = g.name;
    r["schedule"] = sch.digest();
    r["backend"] = module->backend();
    r["validation"] = v.to_json();
    r["metrics"] = metrics ? metrics->to_json() : json(nullptr);
    r["misses"] = misses ? misses->to_json() : json(nullptr);
    if (a.render) r["render"] = sch.render();
    std::cout << r.dump(2) << "\n";
  } else {
    if (a.render) std::cout << sch.render() << "\n";
    print_row("graph", g.name);
    print_row("schedule", sch.digest());
    print_row("backend", module->backend());
    for (const auto& o : v.outputs) {
      print_row("validation", o.name + " " + (o.pass ? "pass" : "FAIL") +
                                  " (max rel error " + format_double(o.max_rel_error) + ")");
    }
    if (metrics) {
      print_row("min", format_ns(static_cast<double>(metrics->min_ns)));
      print_row("median", format_ns(static_cast<double>(metrics->median_ns)));
      print_row("mean", format_ns(metrics->mean_ns));
      print_row("gflops", format_double(metrics->gflops));
    }
    if (misses) {
      print_row("accesses", std::to_string(misses->accesses));
      print_row("misses", std::to_string(misses->misses));
    }
  }
  return v.pass ? 0 : kExitFail;
}

// search

struct SearchArgs {
  std::string graph;
  std::string tokens;
  std::string op;
  int num = 100;
  std::string out;
  bool parallelize = false;
};

std::string default_op(const Graph& g) {
  for (const auto& op : g.nodes) {
    if (op.has_reduction()) return op.id;
  }
  return g.nodes.front().id;
}

int cmd_search(const SearchArgs& a, Settings s) {
  const Graph g = parse_graph(read_json(a.graph));
  s.strategy.parallelize = a.parallelize;
  const std::string op = a.op.empty() ? default_op(g) : a.op;
  const Strategy st = make_strategy(g, a.tokens, op, s.strategy);
  const auto samples = sample(st, a.num, s.seed);

  json rows = json::array();
  bool all_pass = true;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    json row;
    row["index"] = i;
    row["sample"] = sample_to_json(samples[i]);
    try {
      Scheduler sch(g, {}, s.scheduler);
      generate(st, sch, samples[i]);
      const Schedule schedule = sch.schedule();
      row["schedule"] = schedule.digest();
      const auto module = compile(g, schedule, s);
      const ValidationReport v = validate(*module, s.tolerance, s.seed);
      row["status"] = v.pass ? "ok" : "invalid";
      row["validation"] = v.to_json();
      if (v.pass) row["metrics"] = evaluate(*module, eval_options(s)).to_json();
      all_pass = all_pass && v.pass;
    } catch (const Error& e) {
      row["status"] = "error";
      row["error"] = e.what();
      all_pass = false;
    }
    rows.push_back(std::move(row));
  }
  // Fastest valid sample first; failures keep sample order at the end.
  std::stable_sort(rows.begin(), rows.end(), [](const json& x, const json& y) {
    const bool ox = x.contains("metrics"), oy = y.contains("metrics");
    if (ox != oy) return ox;
    if (!ox) return false;
    return x["metrics"]["min_ns"].get<std::int64_t>() < y["metrics"]["min_ns"].get<std::int64_t>();
  });

  json report;
  report["graph"] = g.name;
  report["op"] = op;
  report["tokens"] = a.tokens;
  report["seed"] = s.seed;
  report["backend"] = s.backend;
  report["rows"] = rows;
  if (!a.out.empty()) {
    std::ofstream out(a.out);
    if (!out) throw Error("cli", "cannot write '" + a.out + "'");
    out << report.dump(2) << "\n";
    if (!out) throw Error("cli", "cannot write '" + a.out + "'");
  }
  if (s.json_out) {
    std::cout << report.dump(2) << "\n";
  } else {
    std::printf("%-5s %-10s %-12s %-10s %s\n", "rank", "status", "min", "gflops", "sample");
    int rank = 0;
    for (const auto& r : rows) {
      const bool timed = r.contains("metrics");
      std::printf("%-5d %-10s %-12s %-10s %s\n", rank++, r["status"].get<std::string>().c_str(),
                  timed ? format_ns(r["metrics"]["min_ns"].get<double>()).c_str() : "-",
                  timed ? format_double(r["metrics"]["gflops"].get<double>()).c_str() : "-",
                  r["sample"].dump().c_str());
    }
  }
  return all_pass ? 0 : kExitFail;
}

// trace

struct TraceArgs {
  std::string graph;
  std::string schedule;
  std::string cache = "32768:64";
};

int cmd_trace(const TraceArgs& a, const Settings& s) {
  const Graph g = parse_graph(read_json(a.graph));
  const Schedule sch = load_schedule(g, a.schedule, s);
  const MissReport r = predict_misses(compile_interp(g, sch), parse_cache_config(a.cache), s.seed);
  if (s.json_out) {
    json j = r.to_json();
    j["graph"] = g.name;
    j["schedule"] = sch.digest();
    j["cache"] = a.cache;
    std::cout << j.dump(2) << "\n";
  } else {
    std::printf("%-16s %12s %12s\n", "tensor", "accesses", "misses");
    for (const auto& t : r.tensors) {
      std::printf("%-16s %12lld %12lld\n", t.name.c_str(), static_cast<long long>(t.accesses),
                  static_cast<long long>(t.misses));
    }
    std::printf("%-16s %12lld %12lld\n", "total", static_cast<long long>(r.accesses),
                static_cast<long long>(r.misses));
  }
  return 0;
}

void add_common(CLI::App* cmd, Settings& s, bool backend) {
  cmd->add_flag("--json", s.json_out, "Machine-readable JSON on stdout");
  cmd->add_option("--config", s.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", s.seed, "Input and sampling seed");
  if (backend) {
    cmd->add_option("--backend", s.backend, "Execution backend")
        ->check(CLI::IsMember({"interp", "c"}));
    cmd->add_option("--tolerance", s.tolerance, "Relative error bound")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--repeats", s.repeats, "Timed calls")->check(CLI::PositiveNumber);
    cmd->add_option("--warmup", s.warmup, "Untimed calls")->check(CLI::NonNegativeNumber);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"schedkit: schedule, run and measure tensor loop nests"};
  app.require_subcommand(1);
  Settings s;

  ApplyArgs apply_args;
  auto* apply_cmd = app.add_subcommand("apply", "Apply a schedule, validate and measure");
  apply_cmd->add_option("graph", apply_args.graph, "Graph JSON")->required()->check(CLI::ExistingFile);
  apply_cmd->add_option("schedule", apply_args.schedule, "Schedule or descript JSON (default: naive)")
      ->check(CLI::ExistingFile);
  apply_cmd->add_flag("--render", apply_args.render, "Print the canonical loop render");
  apply_cmd->add_flag("--no-eval", apply_args.no_eval, "Skip timing");
  apply_cmd->add_option("--cache", apply_args.cache, "Also predict misses, CAPACITY:LINE");
  add_common(apply_cmd, s, true);

  SearchArgs search_args;
  auto* search_cmd = app.add_subcommand("search", "Sample a token strategy and evaluate each point");
  search_cmd->add_option("graph", search_args.graph, "Graph JSON")->required()->check(CLI::ExistingFile);
  search_cmd->add_option("--tokens", search_args.tokens, "Strategy tokens, e.g. PPWRPRP")->required();
  search_cmd->add_option("--op", search_args.op, "Op id (default: first op with a reduction)");
  search_cmd->add_option("--num", search_args.num, "Number of samples")->check(CLI::NonNegativeNumber);
  search_cmd->add_option("--out", search_args.out, "Write the sorted report here");
  search_cmd->add_flag("--parallelize", search_args.parallelize, "Parallelize the outer tile loops");
  add_common(search_cmd, s, true);

  TraceArgs trace_args;
  auto* trace_cmd = app.add_subcommand("trace", "Predict cache misses with the LRU model");
  trace_cmd->add_option("graph", trace_args.graph, "Graph JSON")->required()->check(CLI::ExistingFile);
  trace_cmd->add_option("schedule", trace_args.schedule, "Schedule or descript JSON (default: naive)")
      ->check(CLI::ExistingFile);
  trace_cmd->add_option("--cache", trace_args.cache, "CAPACITY:LINE in bytes");
  add_common(trace_cmd, s, false);

  CLI11_PARSE(app, argc, argv);

  try {
    const CLI::App* cmd = app.get_subcommands().front();
    load_config(s, *cmd);
    if (cmd == apply_cmd) return cmd_apply(apply_args, s);
    if (cmd == search_cmd) return cmd_search(search_args, s);
    return cmd_trace(trace_args, s);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "cli: " << e.what() << "\n";
    return kExitError;
  }
}
