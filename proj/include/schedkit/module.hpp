// SPDX-License-Identifier: Apache-2.0
//
// Executable result of compiling a scheduled graph, common to all backends.
#pragma once

#include <string>

#include "schedkit/graph.hpp"

namespace schedkit {

class Module {
 public:
  virtual ~Module() = default;

  virtual const Graph& graph() const = 0;
  virtual std::string backend() const = 0;

  /// Entry-point call: one contiguous buffer per graph input, then one per
  /// graph output, in Graph::abi_params order.
  virtual void invoke(void* const* params) const = 0;

  /// Checks the inputs, allocates the outputs and calls invoke.
  TensorMap execute(const TensorMap& inputs) const;
};

}  // namespace schedkit
