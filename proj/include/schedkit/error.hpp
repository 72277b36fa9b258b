// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace schedkit {

/// Base error for every pipeline stage. The message is prefixed with the
/// module that raised it, e.g. "scheduler: unknown root 'J[3]'".
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(module + ": " + what), module_(std::move(module)) {}

  const std::string& module() const { return module_; }

 private:
  std::string module_;
};

/// Raised when no usable C compiler can be found.
class ToolchainError : public Error {
 public:
  explicit ToolchainError(const std::string& what) : Error("backend_c", what) {}
};

}  // namespace schedkit
