// SPDX-License-Identifier: Apache-2.0
//
// Reference backend: walks the transformed loop nests directly.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "schedkit/module.hpp"
#include "schedkit/scheduler.hpp"

namespace schedkit {

/// One element access. `tensor` indexes InterpModule::trace_tensors().
struct TraceEvent {
  std::uint32_t tensor = 0;
  std::int64_t index = 0;
  bool write = false;
};

struct TraceTensor {
  std::string name;  // scratch buffers are named "<tensor>@<loop>#<n>"
  std::int64_t elements = 0;
  std::size_t element_size = 4;
};

using TraceSink = std::function<void(const TraceEvent&)>;

class InterpModule final : public Module {
 public:
  InterpModule(const Graph& graph, const Schedule& schedule);
  ~InterpModule() override;
  InterpModule(InterpModule&&) noexcept;

  const Graph& graph() const override { return *graph_; }
  std::string backend() const override { return "interp"; }
  void invoke(void* const* params) const override;

  /// Same as invoke, reporting every element access to `sink` in program
  /// order (scratch buffers included).
  void invoke_traced(void* const* params, const TraceSink& sink) const;
  TensorMap execute_traced(const TensorMap& inputs, const TraceSink& sink) const;

  const std::vector<TraceTensor>& trace_tensors() const;
  const Schedule& schedule() const { return schedule_; }

 private:
  struct Impl;
  const Graph* graph_;
  Schedule schedule_;
  std::unique_ptr<Impl> impl_;
};

InterpModule compile_interp(const Graph& graph, const Schedule& schedule);

}  // namespace schedkit
