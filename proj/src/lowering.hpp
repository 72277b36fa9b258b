// SPDX-License-Identifier: Apache-2.0
//
// Backend-independent lowering of a schedule: per-op loop trees with the
// buffer layouts resolved, plus the addressing helpers both backends share.
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "schedkit/scheduler.hpp"

namespace schedkit::lower {

std::vector<std::int64_t> row_major(const std::vector<std::int64_t>& shape);

/// Coefficient of each op dim in the linear index of `access` laid out with
/// `strides`, and the constant part.
std::vector<std::int64_t> linear_coef(const TensorAccess& access,
                                      const std::vector<std::int64_t>& strides, std::size_t num_dims);
std::int64_t linear_offset(const TensorAccess& access, const std::vector<std::int64_t>& strides);

inline std::int64_t axis_value(const AffineIndex& ax, const std::vector<std::int64_t>& dims) {
  std::int64_t v = ax.offset;
  for (std::size_t d = 0; d < ax.coeff.size(); ++d) v += ax.coeff[d] * dims[d];
  return v;
}

/// Loops below a buffer's loop restricted to the dims its operand depends on.
/// Walking it visits every element the iteration touches, in access order.
struct ProjRoot {
  std::vector<Loop> loops;
  std::vector<ProjRoot> children;
};

struct BufferPlan {
  BufferKind kind = BufferKind::pack;
  std::string tensor;
  int slot = 0;                  // operand slot it stands in for
  const OpNode* fused = nullptr;  // inlined producer or consumer
  BufferBox box;
  std::vector<std::int64_t> strides;  // row-major over box.padded
  ProjRoot walk;
  int id = 0;  // dense over the whole graph
  std::string at;

  std::int64_t elements() const { return box.elements(); }
};

struct LoopPlan {
  Loop loop;
  std::vector<BufferPlan> buffers;
};

struct RootPlan {
  std::string name;
  std::vector<LoopPlan> loops;
  std::vector<RootPlan> children;
};

struct OpPlan {
  const OpNode* op = nullptr;
  RootPlan root;
  std::vector<TensorAccess> access;  // per slot: inputs, then the output
  bool zero_output = false;          // reductions start from a zeroed output
  std::size_t output_slot() const { return access.size() - 1; }
};

struct GraphPlan {
  std::vector<OpPlan> ops;                // ops that keep a nest, graph order
  std::vector<TensorSpec> intermediates;  // materialized, neither input nor output
  std::set<std::string> elided;           // intermediates that only live in fused buffers
  std::vector<const BufferPlan*> buffers;  // by id
};

GraphPlan make_plan(const Graph& graph, const Schedule& schedule);

}  // namespace schedkit::lower
