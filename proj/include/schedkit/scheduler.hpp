// SPDX-License-Identifier: Apache-2.0
//
// The unified scheduling API: every primitive call is validated against the
// current loop structure, applied, and appended to a replayable log.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "schedkit/graph.hpp"
#include "schedkit/loop_ir.hpp"

namespace schedkit {

/// Name -> integer pairs whose order is significant (segments, tiles, unrolls).
using OrderedSizes = std::vector<std::pair<std::string, std::int64_t>>;

struct DimsSpec {
  std::string root;
  std::vector<std::string> names;
};
struct SplitSpec {
  std::string root;
  std::string dim;
  OrderedSizes segments;  // new root name -> start offset
};
struct StripMineSpec {
  std::string root;
  std::string dim;
  OrderedSizes tiles;  // tile loop name -> tile size, outer to inner
};
struct InterchangeSpec {
  std::string root;
  std::vector<std::string> permutation;
};
struct UnrollSpec {
  std::string root;
  OrderedSizes unrolls;
};
struct VectorizeSpec {
  std::string root;
  std::vector<std::string> axes;
};
struct ParallelizeSpec {
  std::string root;
  std::vector<std::string> axes;
};
struct PackSpec {
  std::string root;
  std::string at;
  std::string operand;
  std::vector<std::int64_t> pad;  // empty: no padding
};
struct BufferSpec {
  std::string root;
  std::string at;
  std::string operand;  // empty: the op output
};
struct FuseSpec {
  std::string root;
  std::string producer;
  std::string consumer;
  std::string at;
};

using Primitive = std::variant<DimsSpec, SplitSpec, StripMineSpec, InterchangeSpec, UnrollSpec,
                               VectorizeSpec, ParallelizeSpec, PackSpec, BufferSpec, FuseSpec>;

nlohmann::ordered_json primitive_to_json(const Primitive& p);
Primitive primitive_from_json(const nlohmann::ordered_json& j);
/// Python-like one-line spelling, e.g. `strip_mine('i', {'i1': 64})`.
std::string describe(const Primitive& p);

struct SchedulerConfig {
  int vector_width = 8;
  std::int64_t local_memory_bytes = 16 << 20;
};

/// Immutable result of scheduling a graph.
struct Schedule {
  std::string graph_name;
  std::string default_root;
  SchedulerConfig config;
  std::vector<Primitive> log;
  std::vector<LoopNest> nests;  // one per op, graph order
  std::vector<std::string> dims;
  std::set<std::string> fused_away;  // ops inlined into another op's nest

  const LoopNest& nest(const std::string& op_id) const;
  nlohmann::ordered_json to_json() const;
  /// Stable hash of the serialized primitive log.
  std::string digest() const;
  /// Renders every op that still owns a nest, in graph order.
  std::string render() const;
};

class Scheduler {
 public:
  explicit Scheduler(const Graph& graph, std::string default_root = {},
                     SchedulerConfig config = {});

  const Graph& graph() const { return *graph_; }
  const SchedulerConfig& config() const { return config_; }
  const std::string& default_root() const { return default_root_; }
  const std::vector<Primitive>& log() const { return log_; }

  void set_dims(std::vector<std::string> names, std::string root = {});
  std::vector<std::string> split(std::string root, std::string dim, OrderedSizes segments);
  /// Returns the roots created when the extent needs an epilogue (else empty).
  std::vector<std::string> strip_mine(std::string root, std::string dim, OrderedSizes tiles);
  void interchange(std::string root, std::vector<std::string> permutation);
  void unroll(std::string root, OrderedSizes unrolls);
  void vectorize(std::string root, std::vector<std::string> axes);
  void parallelize(std::string root, std::vector<std::string> axes);
  void pack(PackSpec spec);
  void buffer_at(BufferSpec spec);
  void fuse(FuseSpec spec);

  /// Dispatches one recorded primitive.
  void apply(const Primitive& p);

  const LoopNest& nest_of_root(const std::string& root) const;
  const Root& root(const std::string& name) const;
  bool has_root(const std::string& name) const;
  /// Every root of every op that still owns a nest, depth-first.
  std::vector<std::string> root_names() const;

  /// Runs the whole-schedule checks (vectorize innermost, parallel prefix,
  /// unroll divisibility, buffer footprints) and freezes the result.
  Schedule schedule() const;

 private:
  struct Located {
    LoopNest* nest;
    const OpNode* op;
    Root* root;
  };
  Located locate(const std::string& root);
  std::string resolve(std::string root) const { return root.empty() ? default_root_ : root; }
  int op_dim(const Located& at, const std::string& name) const;
  std::size_t loop_index(const Root& r, const std::string& label) const;
  std::vector<const Loop*> enclosing(const LoopNest& nest, const Root& r, std::size_t idx) const;
  bool root_name_used(const std::string& name) const;
  void check_label_free(const LoopNest& nest, const Root& r, const std::string& label) const;
  std::vector<std::string> split_at(Located at, std::size_t pos,
                                    const std::vector<std::pair<std::string, std::int64_t>>& starts);

  const Graph* graph_;
  SchedulerConfig config_;
  std::string default_root_;
  std::vector<LoopNest> nests_;
  std::vector<Primitive> log_;
  std::vector<std::string> dims_;
  std::set<std::string> fused_away_;
};

/// Replays a primitive log from the initial nests.
Schedule apply(const Graph& graph, const std::vector<Primitive>& log,
               std::string default_root = {}, SchedulerConfig config = {});

/// Parses a schedule document ({"graph","default_root","primitives"}).
Schedule parse_schedule(const Graph& graph, const nlohmann::ordered_json& doc,
                        SchedulerConfig config = {});

/// Per-dim ranges, relative to the dim values at the start of one iteration of
/// `root.loops[loop]`, covered by everything nested inside that iteration.
struct DimRanges {
  std::vector<std::int64_t> min;
  std::vector<std::int64_t> max;
};
DimRanges inner_ranges(const Root& root, std::size_t loop, std::size_t num_dims);

/// Box of operand elements touched by one iteration of the loop a buffer is
/// attached to.
struct BufferBox {
  std::vector<std::int64_t> extent;      // per tensor axis
  std::vector<std::int64_t> origin_min;  // axis origin = access(dim values at entry) + origin_min
  std::vector<std::int64_t> padded;      // extent + pad
  std::int64_t elements() const;
};
BufferBox buffer_box(const TensorAccess& access, const DimRanges& ranges,
                     const std::vector<std::int64_t>& pad);

}  // namespace schedkit
