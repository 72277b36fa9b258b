// SPDX-License-Identifier: Apache-2.0
#include "schedkit/backend_interp.hpp"

#include <algorithm>
#include <map>

#include "lowering.hpp"
#include "schedkit/error.hpp"

namespace schedkit {

TensorMap Module::execute(const TensorMap& inputs) const {
  check_inputs(graph(), inputs);
  TensorMap outputs;
  std::vector<void*> params;
  for (const auto& spec : graph().inputs) {
    params.push_back(const_cast<void*>(inputs.find(spec.name)->second.data()));
  }
  for (const auto& name : graph().outputs) {
    outputs.emplace(name, Tensor(graph().tensor(name)));
  }
  for (const auto& name : graph().outputs) params.push_back(outputs.find(name)->second.data());
  invoke(params.data());
  return outputs;
}

namespace {

struct Program {
  lower::GraphPlan plan;
  std::vector<TraceTensor> tensors;
  std::map<std::string, std::uint32_t, std::less<>> ids;
};

using lower::axis_value;

// Storage of every materialized tensor during one call.
struct Storage {
  std::map<std::string, void*, std::less<>> ptr;
};

template <class T, bool Trace>
class OpRunner {
 public:
  OpRunner(const Graph& graph, const lower::OpPlan& plan, const Storage& storage,
           const Program& impl, const TraceSink* sink)
      : graph_(graph), plan_(plan), op_(*plan.op), storage_(storage), impl_(impl), sink_(sink),
        dim_(op_.dims.size(), 0), stack_(plan.access.size()) {
    for (std::size_t s = 0; s < plan.access.size(); ++s) {
      const std::string& name = s + 1 == plan.access.size() ? op_.output.name : op_.inputs[s];
      const auto strides = lower::row_major(graph.tensor(name).shape);
      Ctx c;
      c.ptr = tensor_ptr(name);
      c.strides = strides;
      c.origin.assign(strides.size(), 0);
      c.coef = lower::linear_coef(plan.access[s], strides, dim_.size());
      c.idx = lower::linear_offset(plan.access[s], strides);
      c.tid = impl.ids.find(name)->second;
      stack_[s].push_back(std::move(c));
    }
    scratch_.resize(impl.plan.buffers.size());
  }

  void run() {
    if (plan_.zero_output) {
      Ctx& out = stack_.back().back();
      if (out.ptr) {
        const std::int64_t n = graph_.tensor(op_.output.name).num_elements();
        std::fill(out.ptr, out.ptr + n, T{0});
        if constexpr (Trace) {
          for (std::int64_t i = 0; i < n; ++i) (*sink_)({out.tid, i, true});
        }
      }
    }
    root(plan_.root, 0);
  }

 private:
  struct Ctx {
    T* ptr = nullptr;
    std::vector<std::int64_t> strides;
    std::vector<std::int64_t> origin;
    std::vector<std::int64_t> coef;
    std::int64_t idx = 0;
    std::uint32_t tid = 0;
  };

  T* tensor_ptr(const std::string& name) const {
    auto it = storage_.ptr.find(name);
    return it == storage_.ptr.end() ? nullptr : static_cast<T*>(it->second);
  }

  void advance(int d, std::int64_t v) {
    dim_[d] += v;
    for (auto& s : stack_) s.back().idx += s.back().coef[d] * v;
  }

  void emit(std::uint32_t tid, std::int64_t idx, bool write) {
    if constexpr (Trace) (*sink_)({tid, idx, write});
  }

  bool input_in_range() const {
    const auto& in = graph_.tensor(op_.inputs[0]).shape;
    for (std::size_t a = 0; a < in.size(); ++a) {
      const std::int64_t v = axis_value(plan_.access[0].axes[a], dim_);
      if (v < 0 || v >= in[a]) return false;
    }
    return true;
  }

  void body() {
    Ctx& out = stack_.back().back();
    switch (op_.kind) {
      case OpKind::matmul:
      case OpKind::conv2d: {
        const Ctx& a = stack_[0].back();
        const Ctx& b = stack_[1].back();
        emit(a.tid, a.idx, false);
        emit(b.tid, b.idx, false);
        emit(out.tid, out.idx, false);
        out.ptr[out.idx] += a.ptr[a.idx] * b.ptr[b.idx];
        emit(out.tid, out.idx, true);
        break;
      }
      case OpKind::relu: {
        const Ctx& a = stack_[0].back();
        emit(a.tid, a.idx, false);
        const T v = a.ptr[a.idx];
        out.ptr[out.idx] = v > T{0} ? v : T{0};
        emit(out.tid, out.idx, true);
        break;
      }
      case OpKind::transpose: {
        const Ctx& a = stack_[0].back();
        emit(a.tid, a.idx, false);
        out.ptr[out.idx] = a.ptr[a.idx];
        emit(out.tid, out.idx, true);
        break;
      }
      case OpKind::padding: {
        const Ctx& a = stack_[0].back();
        T v{0};
        if (input_in_range()) {
          emit(a.tid, a.idx, false);
          v = a.ptr[a.idx];
        }
        out.ptr[out.idx] = v;
        emit(out.tid, out.idx, true);
        break;
      }
    }
  }

  // Innermost loop without buffers: a tight strided loop.
  void inner(const Loop& l) {
    const int d = l.dim;
    const std::int64_t n = l.trip();
    Ctx& out = stack_.back().back();
    T* o = out.ptr + out.idx;
    const std::int64_t so = out.coef[d] * l.step;
    switch (op_.kind) {
      case OpKind::matmul:
      case OpKind::conv2d: {
        const Ctx& a = stack_[0].back();
        const Ctx& b = stack_[1].back();
        const T* pa = a.ptr + a.idx;
        const T* pb = b.ptr + b.idx;
        const std::int64_t sa = a.coef[d] * l.step, sb = b.coef[d] * l.step;
        for (std::int64_t t = 0; t < n; ++t) {
          *o += *pa * *pb;
          o += so;
          pa += sa;
          pb += sb;
        }
        return;
      }
      case OpKind::relu:
      case OpKind::transpose: {
        const Ctx& a = stack_[0].back();
        const T* pa = a.ptr + a.idx;
        const std::int64_t sa = a.coef[d] * l.step;
        const bool relu = op_.kind == OpKind::relu;
        for (std::int64_t t = 0; t < n; ++t) {
          const T v = *pa;
          *o = relu ? (v > T{0} ? v : T{0}) : v;
          o += so;
          pa += sa;
        }
        return;
      }
      case OpKind::padding:
        break;
    }
    for (std::int64_t t = 0; t < n; ++t) {
      body();
      advance(d, l.step);
    }
    advance(d, -n * l.step);
  }

  void root(const lower::RootPlan& r, std::size_t i) {
    if (i == r.loops.size()) {
      if (r.children.empty()) {
        body();
      } else {
        for (const auto& c : r.children) root(c, 0);
      }
      return;
    }
    const lower::LoopPlan& lp = r.loops[i];
    const Loop& l = lp.loop;
    advance(l.dim, l.lower);
    if (!Trace && lp.buffers.empty() && i + 1 == r.loops.size() && r.children.empty() &&
        op_.kind != OpKind::padding) {
      inner(l);
      advance(l.dim, -l.lower);
      return;
    }
    const std::int64_t n = l.trip();
    for (std::int64_t t = 0; t < n; ++t) {
      for (const auto& b : lp.buffers) enter(b);
      root(r, i + 1);
      for (auto it = lp.buffers.rbegin(); it != lp.buffers.rend(); ++it) leave(*it);
      advance(l.dim, l.step);
    }
    advance(l.dim, -(l.lower + n * l.step));
  }

  // Visits every point of a projected walk with dim_ holding its dim values.
  template <class F>
  void walk(const lower::ProjRoot& p, std::size_t i, F&& f) {
    if (i == p.loops.size()) {
      if (p.children.empty()) {
        f();
      } else {
        for (const auto& c : p.children) walk(c, 0, f);
      }
      return;
    }
    const Loop& l = p.loops[i];
    for (std::int64_t v = l.lower; v < l.upper; v += l.step) {
      dim_[l.dim] += v;
      walk(p, i + 1, f);
      dim_[l.dim] -= v;
    }
  }

  std::int64_t index_in(const Ctx& c, const TensorAccess& acc) const {
    std::int64_t idx = 0;
    for (std::size_t a = 0; a < acc.axes.size(); ++a) {
      idx += c.strides[a] * (axis_value(acc.axes[a], dim_) - c.origin[a]);
    }
    return idx;
  }

  void enter(const lower::BufferPlan& b) {
    const TensorAccess& acc = plan_.access[b.slot];
    auto& buf = scratch_[b.id];
    if (buf.empty()) buf.assign(static_cast<std::size_t>(b.elements()), T{0});
    Ctx c;
    c.ptr = buf.data();
    c.strides = b.strides;
    c.coef = lower::linear_coef(acc, b.strides, dim_.size());
    c.tid = static_cast<std::uint32_t>(impl_.ids.size() + b.id);
    c.idx = 0;
    for (std::size_t a = 0; a < acc.axes.size(); ++a) {
      c.origin.push_back(axis_value(acc.axes[a], dim_) + b.box.origin_min[a]);
      c.idx -= b.strides[a] * b.box.origin_min[a];
    }
    const Ctx& src = stack_[b.slot].back();
    const bool guarded = op_.guarded_input() && b.slot == 0;

    switch (b.kind) {
      case BufferKind::pack:
      case BufferKind::write:
        walk(b.walk, 0, [&] {
          if (guarded && !input_in_range()) return;
          const std::int64_t from = index_in(src, acc), to = index_in(c, acc);
          emit(src.tid, from, false);
          c.ptr[to] = src.ptr[from];
          emit(c.tid, to, true);
        });
        break;
      case BufferKind::fuse_consumer:
        walk(b.walk, 0, [&] {
          const std::int64_t to = index_in(c, acc);
          c.ptr[to] = T{0};
          emit(c.tid, to, true);
        });
        break;
      case BufferKind::fuse_producer:
        fill_producer(b, c, acc);
        break;
    }
    stack_[b.slot].push_back(std::move(c));
  }

  // Computes the inlined elementwise producer for every element the
  // iteration reads.
  void fill_producer(const lower::BufferPlan& b, Ctx& c, const TensorAccess& acc) {
    const OpNode& p = *b.fused;
    const TensorSpec& xs = graph_.tensor(p.inputs[0]);
    const auto xstr = lower::row_major(xs.shape);
    const T* x = tensor_ptr(p.inputs[0]);
    const std::uint32_t xid = impl_.ids.find(p.inputs[0])->second;
    const TensorAccess pin = p.input_accesses()[0];
    std::vector<std::int64_t> e(acc.axes.size());
    walk(b.walk, 0, [&] {
      for (std::size_t a = 0; a < e.size(); ++a) e[a] = axis_value(acc.axes[a], dim_);
      std::int64_t from = 0;
      bool inside = true;
      for (std::size_t a = 0; a < pin.axes.size(); ++a) {
        const std::int64_t v = axis_value(pin.axes[a], e);
        inside &= v >= 0 && v < xs.shape[a];
        from += xstr[a] * v;
      }
      T v{0};
      if (inside) {
        emit(xid, from, false);
        v = x[from];
        if (p.kind == OpKind::relu) v = v > T{0} ? v : T{0};
      }
      const std::int64_t to = index_in(c, acc);
      c.ptr[to] = v;
      emit(c.tid, to, true);
    });
  }

  void leave(const lower::BufferPlan& b) {
    const TensorAccess& acc = plan_.access[b.slot];
    auto& st = stack_[b.slot];
    Ctx c = std::move(st.back());
    st.pop_back();
    if (b.kind == BufferKind::write) {
      Ctx& dst = st.back();
      walk(b.walk, 0, [&] {
        const std::int64_t from = index_in(c, acc), to = index_in(dst, acc);
        emit(c.tid, from, false);
        dst.ptr[to] = c.ptr[from];
        emit(dst.tid, to, true);
      });
    } else if (b.kind == BufferKind::fuse_consumer) {
      const OpNode& consumer = *b.fused;
      T* out = tensor_ptr(consumer.output.name);
      const std::uint32_t oid = impl_.ids.find(consumer.output.name)->second;
      const auto ostr = lower::row_major(consumer.output.shape);
      walk(b.walk, 0, [&] {
        const std::int64_t from = index_in(c, acc);
        std::int64_t to = 0;
        for (std::size_t a = 0; a < acc.axes.size(); ++a) to += ostr[a] * axis_value(acc.axes[a], dim_);
        emit(c.tid, from, false);
        const T v = c.ptr[from];
        out[to] = v > T{0} ? v : T{0};
        emit(oid, to, true);
      });
    }
  }

  const Graph& graph_;
  const lower::OpPlan& plan_;
  const OpNode& op_;
  const Storage& storage_;
  const Program& impl_;
  const TraceSink* sink_;
  std::vector<std::int64_t> dim_;
  std::vector<std::vector<Ctx>> stack_;
  std::vector<std::vector<T>> scratch_;
};

template <bool Trace>
void run_graph(const Graph& graph, const Program& impl, void* const* params,
               const TraceSink* sink) {
  Storage storage;
  std::size_t p = 0;
  for (const auto& spec : graph.inputs) storage.ptr[spec.name] = params[p++];
  for (const auto& name : graph.outputs) storage.ptr[name] = params[p++];
  std::vector<std::vector<std::uint32_t>> owned;
  for (const auto& t : impl.plan.intermediates) {
    owned.emplace_back(static_cast<std::size_t>(t.num_elements()), 0u);
    storage.ptr[t.name] = owned.back().data();
  }
  for (const auto& op : impl.plan.ops) {
    if (op.op->output.dtype == DType::float32) {
      OpRunner<float, Trace>(graph, op, storage, impl, sink).run();
    } else {
      OpRunner<std::int32_t, Trace>(graph, op, storage, impl, sink).run();
    }
  }
}

}  // namespace

struct InterpModule::Impl : Program {};

InterpModule::InterpModule(const Graph& graph, const Schedule& schedule)
    : graph_(&graph), schedule_(schedule), impl_(std::make_unique<Impl>()) {
  impl_->plan = lower::make_plan(graph, schedule);
  auto add = [&](const TensorSpec& t) {
    impl_->ids.emplace(t.name, static_cast<std::uint32_t>(impl_->tensors.size()));
    impl_->tensors.push_back({t.name, t.num_elements(), dtype_size(t.dtype)});
  };
  for (const auto& t : graph.inputs) add(t);
  for (const auto& op : graph.nodes) add(op.output);
  for (const auto* b : impl_->plan.buffers) {
    impl_->tensors.push_back({b->tensor + "@" + b->at + "#" + std::to_string(b->id), b->elements(),
                              dtype_size(graph.tensor(b->tensor).dtype)});
  }
}

InterpModule::~InterpModule() = default;
InterpModule::InterpModule(InterpModule&&) noexcept = default;

void InterpModule::invoke(void* const* params) const {
  run_graph<false>(*graph_, *impl_, params, nullptr);
}

void InterpModule::invoke_traced(void* const* params, const TraceSink& sink) const {
  run_graph<true>(*graph_, *impl_, params, &sink);
}

TensorMap InterpModule::execute_traced(const TensorMap& inputs, const TraceSink& sink) const {
  check_inputs(*graph_, inputs);
  TensorMap outputs;
  std::vector<void*> params;
  for (const auto& spec : graph_->inputs) {
    params.push_back(const_cast<void*>(inputs.find(spec.name)->second.data()));
  }
  for (const auto& name : graph_->outputs) outputs.emplace(name, Tensor(graph_->tensor(name)));
  for (const auto& name : graph_->outputs) params.push_back(outputs.find(name)->second.data());
  invoke_traced(params.data(), sink);
  return outputs;
}

const std::vector<TraceTensor>& InterpModule::trace_tensors() const { return impl_->tensors; }

InterpModule compile_interp(const Graph& graph, const Schedule& schedule) {
  return InterpModule(graph, schedule);
}

}  // namespace schedkit
