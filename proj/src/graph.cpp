// SPDX-License-Identifier: Apache-2.0
#include "schedkit/graph.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "schedkit/error.hpp"
#include "util.hpp"

namespace schedkit {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw Error("graph", msg); }

std::vector<std::string> default_dim_names(OpKind kind, std::size_t rank) {
  switch (kind) {
    case OpKind::matmul:
      return {"I", "J", "K"};
    case OpKind::conv2d:
      return {"H", "W", "F", "KH", "KW", "C"};
    default: {
      std::vector<std::string> names;
      for (std::size_t i = 0; i < rank; ++i) names.push_back("D" + std::to_string(i));
      return names;
    }
  }
}

AffineIndex axis(std::size_t ndims, std::initializer_list<std::pair<int, std::int64_t>> terms,
                 std::int64_t offset = 0) {
  AffineIndex a;
  a.coeff.assign(ndims, 0);
  for (auto [d, c] : terms) a.coeff[d] = c;
  a.offset = offset;
  return a;
}

}  // namespace

std::size_t dtype_size(DType) { return 4; }

std::string_view to_string(DType dtype) {
  return dtype == DType::float32 ? "float32" : "int32";
}

DType parse_dtype(std::string_view name) {
  if (name == "float32") return DType::float32;
  if (name == "int32") return DType::int32;
  fail("unknown dtype '" + std::string(name) + "'");
}

std::int64_t TensorSpec::num_elements() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::vector<std::int64_t> TensorSpec::strides() const {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) s[i] = s[i + 1] * shape[i + 1];
  return s;
}

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::padding: return "padding";
    case OpKind::transpose: return "transpose";
  }
  return "?";
}

OpKind parse_op_kind(std::string_view name) {
  for (OpKind k : {OpKind::matmul, OpKind::conv2d, OpKind::relu, OpKind::padding,
                   OpKind::transpose}) {
    if (to_string(k) == name) return k;
  }
  if (name == "mm") return OpKind::matmul;
  fail("unknown op kind '" + std::string(name) + "'");
}

std::vector<bool> TensorAccess::dim_mask(std::size_t num_dims) const {
  std::vector<bool> mask(num_dims, false);
  for (const auto& a : axes) {
    for (std::size_t d = 0; d < num_dims; ++d) {
      if (a.coeff[d] != 0) mask[d] = true;
    }
  }
  return mask;
}

int OpNode::dim_index(std::string_view name) const {
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

bool OpNode::has_reduction() const {
  return std::any_of(dims.begin(), dims.end(),
                     [](const IterDim& d) { return d.cls == DimClass::reduction; });
}

std::int64_t OpNode::flops() const {
  std::int64_t points = 1;
  for (const auto& d : dims) points *= d.extent;
  switch (kind) {
    case OpKind::matmul:
    case OpKind::conv2d: return 2 * points;
    case OpKind::relu: return points;
    default: return 0;
  }
}

TensorAccess OpNode::output_access() const {
  TensorAccess acc{output.name, {}};
  const std::size_t n = dims.size();
  for (std::size_t a = 0; a < output.shape.size(); ++a) {
    acc.axes.push_back(axis(n, {{static_cast<int>(a), 1}}));
  }
  return acc;
}

std::vector<TensorAccess> OpNode::input_accesses() const {
  const std::size_t n = dims.size();
  std::vector<TensorAccess> out;
  switch (kind) {
    case OpKind::matmul:
      // dims: I, J, K
      out.push_back({inputs[0], {axis(n, {{0, 1}}), axis(n, {{2, 1}})}});
      out.push_back({inputs[1], {axis(n, {{2, 1}}), axis(n, {{1, 1}})}});
      break;
    case OpKind::conv2d:
      // dims: H, W, F, KH, KW, C
      out.push_back({inputs[0],
                     {axis(n, {{0, attrs.stride[0]}, {3, 1}}),
                      axis(n, {{1, attrs.stride[1]}, {4, 1}}), axis(n, {{5, 1}})}});
      out.push_back({inputs[1],
                     {axis(n, {{3, 1}}), axis(n, {{4, 1}}), axis(n, {{5, 1}}),
                      axis(n, {{2, 1}})}});
      break;
    case OpKind::relu: {
      TensorAccess acc{inputs[0], {}};
      for (std::size_t a = 0; a < n; ++a) acc.axes.push_back(axis(n, {{static_cast<int>(a), 1}}));
      out.push_back(acc);
      break;
    }
    case OpKind::padding: {
      TensorAccess acc{inputs[0], {}};
      for (std::size_t a = 0; a < n; ++a) {
        acc.axes.push_back(axis(n, {{static_cast<int>(a), 1}}, -attrs.pad_low[a]));
      }
      out.push_back(acc);
      break;
    }
    case OpKind::transpose: {
      TensorAccess acc{inputs[0], std::vector<AffineIndex>(n)};
      for (std::size_t a = 0; a < n; ++a) {
        acc.axes[attrs.perm[a]] = axis(n, {{static_cast<int>(a), 1}});
      }
      out.push_back(acc);
      break;
    }
  }
  return out;
}

const TensorSpec& Graph::tensor(std::string_view name) const {
  for (const auto& t : inputs) {
    if (t.name == name) return t;
  }
  for (const auto& op : nodes) {
    if (op.output.name == name) return op.output;
  }
  fail("unknown tensor '" + std::string(name) + "'");
}

const OpNode* Graph::find_op(std::string_view id) const {
  for (const auto& op : nodes) {
    if (op.id == id) return &op;
  }
  return nullptr;
}

const OpNode& Graph::op(std::string_view id) const {
  if (const OpNode* op = find_op(id)) return *op;
  fail("unknown op '" + std::string(id) + "'");
}

const OpNode* Graph::producer_of(std::string_view tensor) const {
  for (const auto& op : nodes) {
    if (op.output.name == tensor) return &op;
  }
  return nullptr;
}

std::vector<const OpNode*> Graph::consumers_of(std::string_view tensor) const {
  std::vector<const OpNode*> out;
  for (const auto& op : nodes) {
    if (std::find(op.inputs.begin(), op.inputs.end(), tensor) != op.inputs.end()) {
      out.push_back(&op);
    }
  }
  return out;
}

bool Graph::is_input(std::string_view tensor) const {
  return std::any_of(inputs.begin(), inputs.end(),
                     [&](const TensorSpec& t) { return t.name == tensor; });
}

bool Graph::is_output(std::string_view tensor) const {
  return std::find(outputs.begin(), outputs.end(), tensor) != outputs.end();
}

std::int64_t Graph::flops() const {
  std::int64_t total = 0;
  for (const auto& op : nodes) total += op.flops();
  return total;
}

std::vector<TensorSpec> Graph::abi_params() const {
  std::vector<TensorSpec> params = inputs;
  for (const auto& name : outputs) params.push_back(tensor(name));
  return params;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

OpNode make_node(const OpDesc& d, const std::map<std::string, TensorSpec>& known) {
  OpNode op;
  op.id = d.id;
  op.kind = parse_op_kind(d.kind);
  op.inputs = d.inputs;
  op.attrs = d.attrs;

  const std::size_t want_inputs =
      (op.kind == OpKind::matmul || op.kind == OpKind::conv2d) ? 2 : 1;
  if (op.inputs.size() != want_inputs) {
    fail("op '" + op.id + "' expects " + std::to_string(want_inputs) + " inputs, got " +
         std::to_string(op.inputs.size()));
  }
  std::vector<TensorSpec> in;
  for (const auto& name : op.inputs) {
    auto it = known.find(name);
    if (it == known.end()) fail("op '" + op.id + "' reads unknown tensor '" + name + "'");
    in.push_back(it->second);
  }
  const DType dtype = in[0].dtype;
  for (const auto& t : in) {
    if (t.dtype != dtype) fail("op '" + op.id + "' mixes dtypes");
  }

  std::vector<std::int64_t> out_shape;
  std::vector<IterDim> dims;
  switch (op.kind) {
    case OpKind::matmul: {
      if (in[0].shape.size() != 2 || in[1].shape.size() != 2) {
        fail("matmul '" + op.id + "' expects rank-2 operands");
      }
      if (in[0].shape[1] != in[1].shape[0]) {
        fail("matmul '" + op.id + "' shape mismatch: " + util::join(in[0].shape, "x") +
             " * " + util::join(in[1].shape, "x"));
      }
      out_shape = {in[0].shape[0], in[1].shape[1]};
      dims = {{"", in[0].shape[0], DimClass::parallel},
              {"", in[1].shape[1], DimClass::parallel},
              {"", in[0].shape[1], DimClass::reduction}};
      break;
    }
    case OpKind::conv2d: {
      if (in[0].shape.size() != 3 || in[1].shape.size() != 4) {
        fail("conv2d '" + op.id + "' expects input (H,W,C) and weights (KH,KW,C,F)");
      }
      if (op.attrs.stride.empty()) op.attrs.stride = {1, 1};
      if (op.attrs.stride.size() != 2 || op.attrs.stride[0] < 1 || op.attrs.stride[1] < 1) {
        fail("conv2d '" + op.id + "' needs two strides >= 1");
      }
      const auto& x = in[0].shape;
      const auto& w = in[1].shape;
      if (x[2] != w[2]) fail("conv2d '" + op.id + "' channel mismatch");
      if (x[0] < w[0] || x[1] < w[1]) fail("conv2d '" + op.id + "' kernel larger than input");
      const std::int64_t oh = (x[0] - w[0]) / op.attrs.stride[0] + 1;
      const std::int64_t ow = (x[1] - w[1]) / op.attrs.stride[1] + 1;
      out_shape = {oh, ow, w[3]};
      dims = {{"", oh, DimClass::parallel},     {"", ow, DimClass::parallel},
              {"", w[3], DimClass::parallel},   {"", w[0], DimClass::reduction},
              {"", w[1], DimClass::reduction}, {"", x[2], DimClass::reduction}};
      break;
    }
    case OpKind::relu:
      out_shape = in[0].shape;
      break;
    case OpKind::padding: {
      const std::size_t r = in[0].shape.size();
      if (op.attrs.pad_low.size() != r || op.attrs.pad_high.size() != r) {
        fail("padding '" + op.id + "' needs low/high pads for each of " + std::to_string(r) +
             " dims");
      }
      for (std::size_t i = 0; i < r; ++i) {
        if (op.attrs.pad_low[i] < 0 || op.attrs.pad_high[i] < 0) {
          fail("padding '" + op.id + "' has a negative pad");
        }
        out_shape.push_back(in[0].shape[i] + op.attrs.pad_low[i] + op.attrs.pad_high[i]);
      }
      break;
    }
    case OpKind::transpose: {
      const std::size_t r = in[0].shape.size();
      if (op.attrs.perm.empty()) {
        for (std::size_t i = 0; i < r; ++i) op.attrs.perm.push_back(static_cast<int>(r - 1 - i));
      }
      std::vector<int> sorted = op.attrs.perm;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted.size() != r || sorted[i] != static_cast<int>(i)) {
          fail("transpose '" + op.id + "' has an invalid permutation");
        }
      }
      for (int p : op.attrs.perm) out_shape.push_back(in[0].shape[p]);
      break;
    }
  }
  if (op.is_elementwise()) {
    for (auto e : out_shape) dims.push_back({"", e, DimClass::parallel});
  }

  auto names = d.dim_names.empty() ? default_dim_names(op.kind, dims.size()) : d.dim_names;
  if (names.size() != dims.size()) {
    fail("op '" + op.id + "' declares " + std::to_string(names.size()) + " dim names, needs " +
         std::to_string(dims.size()));
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (!util::is_identifier(names[i])) fail("invalid dim name '" + names[i] + "'");
    if (!seen.insert(names[i]).second) fail("duplicate dim name '" + names[i] + "'");
    dims[i].name = names[i];
  }
  op.dims = std::move(dims);
  op.output = TensorSpec{d.output.empty() ? d.id : d.output, out_shape, dtype};
  return op;
}

}  // namespace

Graph build_graph(const GraphDesc& desc) {
  Graph g;
  g.name = desc.name;
  if (!util::is_identifier(desc.name)) {
    fail("graph name '" + desc.name + "' is not a valid C identifier");
  }

  std::map<std::string, TensorSpec> known;
  for (const auto& t : desc.tensors) {
    if (!util::is_identifier(t.name)) fail("invalid tensor name '" + t.name + "'");
    if (t.shape.empty()) fail("tensor '" + t.name + "' has an empty shape");
    for (auto e : t.shape) {
      if (e < 1) fail("tensor '" + t.name + "' has a non-positive extent");
    }
    if (!known.emplace(t.name, t).second) fail("duplicate tensor name '" + t.name + "'");
    g.inputs.push_back(t);
  }

  std::set<std::string> ids;
  std::map<std::string, std::size_t> producer;  // output tensor -> op index
  for (std::size_t i = 0; i < desc.ops.size(); ++i) {
    const auto& op = desc.ops[i];
    if (!util::is_identifier(op.id)) fail("invalid op id '" + op.id + "'");
    if (!ids.insert(op.id).second) fail("duplicate op id '" + op.id + "'");
    const std::string out = op.output.empty() ? op.id : op.output;
    if (!util::is_identifier(out)) fail("invalid tensor name '" + out + "'");
    if (known.count(out) || !producer.emplace(out, i).second) {
      fail("duplicate tensor name '" + out + "'");
    }
  }

  // Kahn's algorithm, stable with respect to declaration order.
  const std::size_t n = desc.ops.size();
  std::vector<std::vector<std::size_t>> users(n);
  std::vector<int> pending(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& in : desc.ops[i].inputs) {
      if (known.count(in)) continue;
      auto it = producer.find(in);
      if (it == producer.end()) {
        fail("op '" + desc.ops[i].id + "' reads unknown tensor '" + in + "'");
      }
      users[it->second].push_back(i);
      ++pending[i];
    }
  }
  std::vector<bool> done(n, false);
  for (std::size_t emitted = 0; emitted < n; ++emitted) {
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!done[i] && pending[i] == 0) {
        pick = i;
        break;
      }
    }
    if (pick == n) fail("graph '" + desc.name + "' contains a cycle");
    done[pick] = true;
    for (auto u : users[pick]) --pending[u];
    OpNode node = make_node(desc.ops[pick], known);
    known.emplace(node.output.name, node.output);
    g.nodes.push_back(std::move(node));
  }

  if (desc.outputs.empty()) {
    for (const auto& op : g.nodes) {
      if (g.consumers_of(op.output.name).empty()) g.outputs.push_back(op.output.name);
    }
  } else {
    for (const auto& name : desc.outputs) {
      if (!g.producer_of(name)) fail("graph output '" + name + "' is not produced by any op");
      g.outputs.push_back(name);
    }
  }
  if (g.nodes.empty()) fail("graph '" + desc.name + "' has no ops");
  return g;
}

GraphDesc parse_graph_desc(const nlohmann::json& doc) {
  try {
    GraphDesc desc;
    desc.name = doc.at("name").get<std::string>();
    for (const auto& t : doc.at("tensors")) {
      desc.tensors.push_back(TensorSpec{t.at("name").get<std::string>(),
                                        t.at("shape").get<std::vector<std::int64_t>>(),
                                        parse_dtype(t.value("dtype", "float32"))});
    }
    for (const auto& o : doc.at("ops")) {
      OpDesc op;
      op.id = o.at("id").get<std::string>();
      op.kind = o.at("kind").get<std::string>();
      op.inputs = o.at("inputs").get<std::vector<std::string>>();
      op.output = o.value("output", std::string{});
      if (o.contains("attrs")) {
        const auto& a = o.at("attrs");
        op.dim_names = a.value("dims", std::vector<std::string>{});
        op.attrs.stride = a.value("stride", std::vector<std::int64_t>{});
        op.attrs.pad_low = a.value("low", std::vector<std::int64_t>{});
        op.attrs.pad_high = a.value("high", std::vector<std::int64_t>{});
        op.attrs.perm = a.value("perm", std::vector<int>{});
      }
      desc.ops.push_back(std::move(op));
    }
    desc.outputs = doc.value("outputs", std::vector<std::string>{});
    return desc;
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed graph document: ") + e.what());
  }
}

Graph parse_graph(const nlohmann::json& doc) { return build_graph(parse_graph_desc(doc)); }

nlohmann::json graph_to_json(const Graph& graph) {
  nlohmann::ordered_json doc;
  doc["name"] = graph.name;
  doc["tensors"] = nlohmann::ordered_json::array();
  for (const auto& t : graph.inputs) {
    doc["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", to_string(t.dtype)}});
  }
  doc["ops"] = nlohmann::ordered_json::array();
  for (const auto& op : graph.nodes) {
    nlohmann::ordered_json o;
    o["id"] = op.id;
    o["kind"] = to_string(op.kind);
    o["inputs"] = op.inputs;
    o["output"] = op.output.name;
    nlohmann::ordered_json attrs;
    std::vector<std::string> names;
    for (const auto& d : op.dims) names.push_back(d.name);
    attrs["dims"] = names;
    if (op.kind == OpKind::conv2d) attrs["stride"] = op.attrs.stride;
    if (op.kind == OpKind::padding) {
      attrs["low"] = op.attrs.pad_low;
      attrs["high"] = op.attrs.pad_high;
    }
    if (op.kind == OpKind::transpose) attrs["perm"] = op.attrs.perm;
    o["attrs"] = attrs;
    doc["ops"].push_back(o);
  }
  doc["outputs"] = graph.outputs;
  return nlohmann::json::parse(doc.dump());
}

// ---------------------------------------------------------------------------
// Builder

std::string GraphBuilder::tensor(std::string name, std::vector<std::int64_t> shape, DType dtype) {
  desc_.tensors.push_back(TensorSpec{name, std::move(shape), dtype});
  return name;
}

std::string GraphBuilder::add(OpDesc op) {
  std::string out = op.output.empty() ? op.id : op.output;
  desc_.ops.push_back(std::move(op));
  return out;
}

std::string GraphBuilder::matmul(std::string id, std::string a, std::string b,
                                 std::vector<std::string> dim_names) {
  return add(OpDesc{std::move(id), "matmul", {std::move(a), std::move(b)}, {},
                    std::move(dim_names), {}});
}

std::string GraphBuilder::conv2d(std::string id, std::string in, std::string weights,
                                 std::vector<std::int64_t> stride,
                                 std::vector<std::string> dim_names) {
  OpAttrs attrs;
  attrs.stride = std::move(stride);
  return add(OpDesc{std::move(id), "conv2d", {std::move(in), std::move(weights)}, {},
                    std::move(dim_names), attrs});
}

std::string GraphBuilder::relu(std::string id, std::string in,
                               std::vector<std::string> dim_names) {
  return add(OpDesc{std::move(id), "relu", {std::move(in)}, {}, std::move(dim_names), {}});
}

std::string GraphBuilder::padding(std::string id, std::string in, std::vector<std::int64_t> low,
                                  std::vector<std::int64_t> high) {
  OpAttrs attrs;
  attrs.pad_low = std::move(low);
  attrs.pad_high = std::move(high);
  return add(OpDesc{std::move(id), "padding", {std::move(in)}, {}, {}, attrs});
}

std::string GraphBuilder::transpose(std::string id, std::string in, std::vector<int> perm) {
  OpAttrs attrs;
  attrs.perm = std::move(perm);
  return add(OpDesc{std::move(id), "transpose", {std::move(in)}, {}, {}, attrs});
}

// ---------------------------------------------------------------------------
// Tensor values

Tensor::Tensor(TensorSpec spec) : spec_(std::move(spec)) {
  if (spec_.dtype == DType::float32) {
    data_ = std::vector<float>(spec_.num_elements(), 0.0f);
  } else {
    data_ = std::vector<std::int32_t>(spec_.num_elements(), 0);
  }
}

void* Tensor::data() {
  return std::visit([](auto& v) -> void* { return v.data(); }, data_);
}

const void* Tensor::data() const {
  return std::visit([](const auto& v) -> const void* { return v.data(); }, data_);
}

double Tensor::at(std::int64_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, data_);
}

void Tensor::set(std::int64_t i, double value) {
  std::visit([&](auto& v) { v[i] = static_cast<typename std::decay_t<decltype(v)>::value_type>(value); },
             data_);
}

void check_inputs(const Graph& graph, const TensorMap& inputs) {
  for (const auto& spec : graph.inputs) {
    auto it = inputs.find(spec.name);
    if (it == inputs.end()) fail("missing input tensor '" + spec.name + "'");
    if (it->second.spec().shape != spec.shape) {
      fail("input '" + spec.name + "' has shape " + util::join(it->second.spec().shape, "x") +
           ", expected " + util::join(spec.shape, "x"));
    }
    if (it->second.dtype() != spec.dtype) {
      fail("input '" + spec.name + "' has dtype " + std::string(to_string(it->second.dtype())) +
           ", expected " + std::string(to_string(spec.dtype)));
    }
  }
}

// ---------------------------------------------------------------------------
// Reference executor

namespace {

template <class T>
void ref_matmul(const OpNode& op, std::span<const T> a, std::span<const T> b, std::span<T> c) {
  const std::int64_t m = op.dims[0].extent, n = op.dims[1].extent, k = op.dims[2].extent;
  std::fill(c.begin(), c.end(), T{0});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t r = 0; r < k; ++r) c[i * n + j] += a[i * k + r] * b[r * n + j];
}

template <class T>
void ref_conv2d(const OpNode& op, const TensorSpec& xs, std::span<const T> x, std::span<const T> w,
                std::span<T> y) {
  const std::int64_t oh = op.dims[0].extent, ow = op.dims[1].extent, nf = op.dims[2].extent;
  const std::int64_t kh = op.dims[3].extent, kw = op.dims[4].extent, nc = op.dims[5].extent;
  const std::int64_t sh = op.attrs.stride[0], sw = op.attrs.stride[1];
  const std::int64_t xw = xs.shape[1];
  std::fill(y.begin(), y.end(), T{0});
  for (std::int64_t h = 0; h < oh; ++h)
    for (std::int64_t v = 0; v < ow; ++v)
      for (std::int64_t f = 0; f < nf; ++f)
        for (std::int64_t p = 0; p < kh; ++p)
          for (std::int64_t q = 0; q < kw; ++q)
            for (std::int64_t c = 0; c < nc; ++c)
              y[(h * ow + v) * nf + f] += x[((h * sh + p) * xw + (v * sw + q)) * nc + c] *
                                          w[((p * kw + q) * nc + c) * nf + f];
}

/// Visits every multi-index of `shape` in row-major order.
template <class F>
void for_each_index(const std::vector<std::int64_t>& shape, F&& f) {
  std::vector<std::int64_t> idx(shape.size(), 0);
  const std::int64_t total =
      std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
  for (std::int64_t n = 0; n < total; ++n) {
    f(idx, n);
    for (int a = static_cast<int>(shape.size()) - 1; a >= 0; --a) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
}

template <class T>
void ref_elementwise(const OpNode& op, const TensorSpec& xs, std::span<const T> x, std::span<T> y) {
  const auto xstr = xs.strides();
  for_each_index(op.output.shape, [&](const std::vector<std::int64_t>& idx, std::int64_t lin) {
    switch (op.kind) {
      case OpKind::relu:
        y[lin] = x[lin] > T{0} ? x[lin] : T{0};
        break;
      case OpKind::transpose: {
        std::int64_t src = 0;
        for (std::size_t a = 0; a < idx.size(); ++a) src += idx[a] * xstr[op.attrs.perm[a]];
        y[lin] = x[src];
        break;
      }
      case OpKind::padding: {
        std::int64_t src = 0;
        bool inside = true;
        for (std::size_t a = 0; a < idx.size(); ++a) {
          const std::int64_t s = idx[a] - op.attrs.pad_low[a];
          if (s < 0 || s >= xs.shape[a]) inside = false;
          src += s * xstr[a];
        }
        y[lin] = inside ? x[src] : T{0};
        break;
      }
      default:
        break;
    }
  });
}

template <class T>
void ref_op(const OpNode& op, const Graph& g, const TensorMap& values, Tensor& out) {
  auto y = out.as<T>();
  const Tensor& x0 = values.find(op.inputs[0])->second;
  if (op.kind == OpKind::matmul) {
    ref_matmul<T>(op, x0.as<T>(), values.find(op.inputs[1])->second.as<T>(), y);
  } else if (op.kind == OpKind::conv2d) {
    ref_conv2d<T>(op, g.tensor(op.inputs[0]), x0.as<T>(),
                  values.find(op.inputs[1])->second.as<T>(), y);
  } else {
    ref_elementwise<T>(op, g.tensor(op.inputs[0]), x0.as<T>(), y);
  }
}

}  // namespace

TensorMap reference_execute(const Graph& graph, const TensorMap& inputs) {
  check_inputs(graph, inputs);
  TensorMap values;
  for (const auto& spec : graph.inputs) values.emplace(spec.name, inputs.find(spec.name)->second);
  for (const auto& op : graph.nodes) {
    Tensor out(op.output);
    if (op.output.dtype == DType::float32) {
      ref_op<float>(op, graph, values, out);
    } else {
      ref_op<std::int32_t>(op, graph, values, out);
    }
    values.emplace(op.output.name, std::move(out));
  }
  TensorMap result;
  for (const auto& name : graph.outputs) result.emplace(name, values.find(name)->second);
  return result;
}

}  // namespace schedkit
