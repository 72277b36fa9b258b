// SPDX-License-Identifier: Apache-2.0
//
// Tensor operator graphs with canonical iteration spaces, plus the naive
// reference executor every backend is checked against.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace schedkit {

enum class DType { float32, int32 };

std::size_t dtype_size(DType dtype);
std::string_view to_string(DType dtype);
DType parse_dtype(std::string_view name);

struct TensorSpec {
  std::string name;
  std::vector<std::int64_t> shape;
  DType dtype = DType::float32;

  std::int64_t num_elements() const;
  /// Row-major element strides.
  std::vector<std::int64_t> strides() const;
  std::size_t size_bytes() const { return num_elements() * dtype_size(dtype); }
};

enum class OpKind { matmul, conv2d, relu, padding, transpose };

std::string_view to_string(OpKind kind);
OpKind parse_op_kind(std::string_view name);

enum class DimClass { parallel, reduction };

struct IterDim {
  std::string name;
  std::int64_t extent = 1;
  DimClass cls = DimClass::parallel;
};

/// One tensor axis index written as an affine form over the op's dims:
/// sum(coeff[d] * dim[d]) + offset. Coefficients are non-negative for every
/// supported operator.
struct AffineIndex {
  std::vector<std::int64_t> coeff;
  std::int64_t offset = 0;
};

struct TensorAccess {
  std::string tensor;
  std::vector<AffineIndex> axes;

  /// Dims that appear with a non-zero coefficient.
  std::vector<bool> dim_mask(std::size_t num_dims) const;
};

struct OpAttrs {
  std::vector<std::int64_t> stride;    // conv2d: (sh, sw)
  std::vector<std::int64_t> pad_low;   // padding
  std::vector<std::int64_t> pad_high;  // padding
  std::vector<int> perm;               // transpose: out.shape[a] = in.shape[perm[a]]
};

struct OpNode {
  std::string id;
  OpKind kind = OpKind::relu;
  std::vector<std::string> inputs;  // tensor names (producer outputs included)
  TensorSpec output;
  OpAttrs attrs;
  std::vector<IterDim> dims;  // canonical order

  int dim_index(std::string_view name) const;  // -1 when absent
  bool has_reduction() const;
  bool is_elementwise() const { return kind != OpKind::matmul && kind != OpKind::conv2d; }
  /// Analytic FLOP count: 2 per multiply-accumulate, 1 per relu element.
  std::int64_t flops() const;

  TensorAccess output_access() const;
  std::vector<TensorAccess> input_accesses() const;
  /// padding reads its input only where the shifted index is in range.
  bool guarded_input() const { return kind == OpKind::padding; }
};

struct Graph {
  std::string name;
  std::vector<TensorSpec> inputs;
  std::vector<OpNode> nodes;  // topological order
  std::vector<std::string> outputs;

  const TensorSpec& tensor(std::string_view name) const;
  const OpNode& op(std::string_view id) const;
  const OpNode* find_op(std::string_view id) const;
  const OpNode* producer_of(std::string_view tensor) const;
  std::vector<const OpNode*> consumers_of(std::string_view tensor) const;
  bool is_input(std::string_view tensor) const;
  bool is_output(std::string_view tensor) const;
  std::int64_t flops() const;
  /// Entry-point parameter order: inputs, then outputs.
  std::vector<TensorSpec> abi_params() const;
};

/// Raw, unvalidated graph description (the JSON document's shape).
struct OpDesc {
  std::string id;
  std::string kind;
  std::vector<std::string> inputs;
  std::string output;  // defaults to the op id
  std::vector<std::string> dim_names;
  OpAttrs attrs;
};

struct GraphDesc {
  std::string name;
  std::vector<TensorSpec> tensors;
  std::vector<OpDesc> ops;
  std::vector<std::string> outputs;  // empty: every unconsumed op output
};

Graph build_graph(const GraphDesc& desc);
GraphDesc parse_graph_desc(const nlohmann::json& doc);
Graph parse_graph(const nlohmann::json& doc);
nlohmann::json graph_to_json(const Graph& graph);

/// Fluent builder mirroring the python-style front end.
class GraphBuilder {
 public:
  explicit GraphBuilder(std::string name) { desc_.name = std::move(name); }

  std::string tensor(std::string name, std::vector<std::int64_t> shape,
                     DType dtype = DType::float32);
  std::string matmul(std::string id, std::string a, std::string b,
                     std::vector<std::string> dim_names = {});
  std::string conv2d(std::string id, std::string in, std::string weights,
                     std::vector<std::int64_t> stride = {1, 1},
                     std::vector<std::string> dim_names = {});
  std::string relu(std::string id, std::string in, std::vector<std::string> dim_names = {});
  std::string padding(std::string id, std::string in, std::vector<std::int64_t> low,
                      std::vector<std::int64_t> high);
  std::string transpose(std::string id, std::string in, std::vector<int> perm = {});

  const GraphDesc& desc() const { return desc_; }
  Graph build() const { return build_graph(desc_); }

 private:
  std::string add(OpDesc op);
  GraphDesc desc_;
};

/// Dense tensor value, row-major.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorSpec spec);

  const TensorSpec& spec() const { return spec_; }
  DType dtype() const { return spec_.dtype; }
  std::int64_t size() const { return spec_.num_elements(); }

  template <class T>
  std::span<T> as() {
    return std::get<std::vector<T>>(data_);
  }
  template <class T>
  std::span<const T> as() const {
    return std::get<std::vector<T>>(data_);
  }
  void* data();
  const void* data() const;
  double at(std::int64_t i) const;
  void set(std::int64_t i, double v);
  bool operator==(const Tensor& other) const { return data_ == other.data_; }

 private:
  TensorSpec spec_;
  std::variant<std::vector<float>, std::vector<std::int32_t>> data_;
};

using TensorMap = std::map<std::string, Tensor, std::less<>>;

/// Naive canonical-order execution of the whole graph. Returns the graph
/// outputs. Accumulation happens in the output dtype.
TensorMap reference_execute(const Graph& graph, const TensorMap& inputs);

/// Checks names, shapes and dtypes of `inputs` against the graph.
void check_inputs(const Graph& graph, const TensorMap& inputs);

}  // namespace schedkit
