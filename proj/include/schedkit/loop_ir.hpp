// SPDX-License-Identifier: Apache-2.0
//
// Explicit loop-nest trees. A nest is a tree of roots: each root owns an
// ordered band of loops (outer to inner) and either ends in the op body or
// in the sibling roots created by a split. The value of an iteration dim at
// the body is the sum of the induction variables of every loop of that dim
// on the path, so tile loops iterate over [0, span) and the single base loop
// of a dim carries the absolute range.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "schedkit/graph.hpp"

namespace schedkit {

struct Segment {
  int dim = 0;
  std::int64_t lower = 0;
  std::int64_t upper = 0;  // half-open
};

struct Annotations {
  std::int64_t unroll = 0;  // 0: none
  bool vectorize = false;
  bool parallel = false;

  bool empty() const { return unroll <= 1 && !vectorize && !parallel; }
};

enum class BufferKind {
  pack,           // local copy of an input, filled at loop entry
  write,          // local output accumulator, written back at loop exit
  fuse_producer,  // local copy of an input computed by an inlined elementwise producer
  fuse_consumer,  // local output accumulator whose write-back applies an elementwise consumer
};

/// A buffer placed inside a loop body: filled at the start of every
/// iteration, written back (write/fuse_consumer) at its end. Its extent is the
/// operand footprint of that iteration.
struct BufferOp {
  BufferKind kind = BufferKind::pack;
  std::string tensor;              // operand tensor (for fusion: the intermediate)
  std::vector<std::int64_t> pad;   // per operand axis, pack only
  std::string fused_op;            // fusion only

  bool writes() const { return kind == BufferKind::write || kind == BufferKind::fuse_consumer; }
};

struct Loop {
  std::string label;
  int dim = 0;
  std::int64_t lower = 0;
  std::int64_t upper = 1;
  std::int64_t step = 1;
  bool base = true;
  Annotations ann;
  std::vector<BufferOp> buffers;

  std::int64_t trip() const { return (upper - lower) / step; }
  std::int64_t last() const { return lower + (trip() - 1) * step; }
  Segment segment() const { return {dim, lower, upper}; }
};

struct Root {
  std::string name;
  bool has_header = false;  // loops[0] is the split loop that defines this root
  std::vector<Loop> loops;
  std::vector<Root> children;

  /// Loops an interchange may reorder (the header excluded).
  std::size_t first_free() const { return has_header ? 1 : 0; }
};

struct LoopNest {
  std::string op_id;
  std::vector<IterDim> dims;
  Root root;
};

LoopNest initial_nest(const OpNode& op);

/// Canonical text form. Grammar in docs/render.md.
std::string render(const LoopNest& nest);

/// Every iteration point (dim values in canonical dim order) in execution
/// order. Throws when the nest has more than `max_points` points.
std::vector<std::vector<std::int64_t>> enumerate_points(const LoopNest& nest,
                                                        std::size_t max_points = 1u << 20);

Root* find_root(Root& tree, const std::string& name);
const Root* find_root(const Root& tree, const std::string& name);
/// Roots from the top of the nest down to `name` (inclusive); empty if absent.
std::vector<const Root*> root_path(const Root& tree, const std::string& name);
void for_each_root(const Root& tree, const std::function<void(const Root&)>& f);
void for_each_root(Root& tree, const std::function<void(Root&)>& f);

}  // namespace schedkit
