// SPDX-License-Identifier: Apache-2.0
#include "lowering.hpp"

#include <algorithm>

#include "schedkit/error.hpp"

namespace schedkit::lower {

std::vector<std::int64_t> row_major(const std::vector<std::int64_t>& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (int a = static_cast<int>(shape.size()) - 2; a >= 0; --a) s[a] = s[a + 1] * shape[a + 1];
  return s;
}

std::vector<std::int64_t> linear_coef(const TensorAccess& access,
                                      const std::vector<std::int64_t>& strides, std::size_t num_dims) {
  std::vector<std::int64_t> c(num_dims, 0);
  for (std::size_t a = 0; a < access.axes.size(); ++a) {
    for (std::size_t d = 0; d < num_dims; ++d) c[d] += strides[a] * access.axes[a].coeff[d];
  }
  return c;
}

std::int64_t linear_offset(const TensorAccess& access, const std::vector<std::int64_t>& strides) {
  std::int64_t o = 0;
  for (std::size_t a = 0; a < access.axes.size(); ++a) o += strides[a] * access.axes[a].offset;
  return o;
}

namespace {

ProjRoot project(const Root& r, std::size_t from, const std::vector<bool>& mask) {
  ProjRoot p;
  for (std::size_t i = from; i < r.loops.size(); ++i) {
    if (mask[r.loops[i].dim]) {
      Loop l = r.loops[i];
      l.ann = {};
      l.buffers.clear();
      p.loops.push_back(std::move(l));
    }
  }
  for (const auto& c : r.children) p.children.push_back(project(c, 0, mask));
  return p;
}

struct Builder {
  const Graph& graph;
  const Schedule& schedule;
  GraphPlan& plan;
  int next_id = 0;

  RootPlan build(const OpPlan& op, const Root& r) {
    RootPlan out;
    out.name = r.name;
    for (std::size_t i = 0; i < r.loops.size(); ++i) {
      LoopPlan lp;
      lp.loop = r.loops[i];
      for (const auto& b : r.loops[i].buffers) {
        BufferPlan bp;
        bp.kind = b.kind;
        bp.tensor = b.tensor;
        bp.at = r.loops[i].label;
        if (b.writes()) {
          bp.slot = static_cast<int>(op.output_slot());
        } else {
          const auto& ins = op.op->inputs;
          bp.slot = static_cast<int>(std::find(ins.begin(), ins.end(), b.tensor) - ins.begin());
        }
        if (!b.fused_op.empty()) bp.fused = &graph.op(b.fused_op);
        const TensorAccess& acc = op.access[bp.slot];
        bp.box = buffer_box(acc, inner_ranges(r, i, op.op->dims.size()), b.pad);
        bp.strides = row_major(bp.box.padded);
        bp.walk = project(r, i + 1, acc.dim_mask(op.op->dims.size()));
        bp.id = next_id++;
        lp.buffers.push_back(std::move(bp));
      }
      out.loops.push_back(std::move(lp));
    }
    for (const auto& c : r.children) out.children.push_back(build(op, c));
    return out;
  }
};

void collect(const RootPlan& r, std::vector<const BufferPlan*>& out) {
  for (const auto& l : r.loops) {
    for (const auto& b : l.buffers) out[b.id] = &b;
  }
  for (const auto& c : r.children) collect(c, out);
}

}  // namespace

GraphPlan make_plan(const Graph& graph, const Schedule& schedule) {
  if (schedule.graph_name != graph.name) {
    throw Error("lowering", "schedule was built for graph '" + schedule.graph_name + "', not '" +
                                graph.name + "'");
  }
  GraphPlan plan;
  Builder builder{graph, schedule, plan};
  // Intermediates of a fused pair only ever live in the fusion buffers.
  for (const auto& n : schedule.nests) {
    if (schedule.fused_away.count(n.op_id)) continue;
    for_each_root(n.root, [&](const Root& r) {
      for (const auto& l : r.loops) {
        for (const auto& b : l.buffers) {
          if (b.kind == BufferKind::fuse_consumer || b.kind == BufferKind::fuse_producer) {
            plan.elided.insert(b.tensor);
          }
        }
      }
    });
  }
  for (const auto& op : graph.nodes) {
    if (schedule.fused_away.count(op.id)) continue;
    OpPlan p;
    p.op = &op;
    p.access = op.input_accesses();
    p.access.push_back(op.output_access());
    p.zero_output = op.has_reduction();
    plan.ops.push_back(std::move(p));
  }
  for (auto& p : plan.ops) p.root = builder.build(p, schedule.nest(p.op->id).root);
  for (const auto& op : graph.nodes) {
    const auto& name = op.output.name;
    if (!graph.is_output(name) && !plan.elided.count(name)) plan.intermediates.push_back(op.output);
  }
  plan.buffers.resize(builder.next_id);
  for (const auto& p : plan.ops) collect(p.root, plan.buffers);
  return plan;
}

}  // namespace schedkit::lower
