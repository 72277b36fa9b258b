// SPDX-License-Identifier: Apache-2.0
//
// C export: emits a standalone C99 translation unit for a scheduled graph,
// builds it into a shared library with the system compiler and loads it.
//
// The entry symbol is the graph name and takes one contiguous pointer per
// graph input, then per graph output. `sk_invoke_<graph>(void* const*)` is
// the same entry behind a pointer-array trampoline.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "schedkit/module.hpp"
#include "schedkit/scheduler.hpp"

namespace schedkit {

/// Scratch buffers above this many bytes are heap allocated.
inline constexpr std::int64_t kStackScratchBytes = 64 * 1024;

std::string emit_c(const Graph& graph, const Schedule& schedule);

struct Toolchain {
  std::string cc = "cc";
  std::vector<std::string> flags{"-O2", "-fopenmp-simd", "-DSK_USE_OMP_SIMD"};
  std::vector<std::string> parallel_flags{"-fopenmp"};

  /// SCHEDKIT_CC replaces the compiler, SCHEDKIT_CFLAGS (whitespace
  /// separated) replaces `flags`.
  static Toolchain from_env();
  /// Whether `cc` can be run.
  bool available() const;
};

class CModule final : public Module {
 public:
  ~CModule() override;
  CModule(CModule&&) noexcept;

  const Graph& graph() const override { return *graph_; }
  std::string backend() const override { return "c"; }
  void invoke(void* const* params) const override;

  const std::string& source() const { return source_; }
  /// Full compiler command line used to build the library.
  const std::string& command() const { return command_; }
  /// Address of the typed entry point.
  void* entry() const { return entry_; }

 private:
  friend CModule compile_c(const Graph&, const std::string&, const Toolchain&);
  CModule() = default;

  const Graph* graph_ = nullptr;
  std::string source_;
  std::string command_;
  void* handle_ = nullptr;
  void* entry_ = nullptr;
  void (*invoke_)(void* const*) = nullptr;
};

/// Throws ToolchainError when the compiler is missing and Error with the
/// compiler's diagnostics when the build fails.
CModule compile_c(const Graph& graph, const std::string& source,
                  const Toolchain& toolchain = Toolchain::from_env());
CModule compile_c(const Graph& graph, const Schedule& schedule,
                  const Toolchain& toolchain = Toolchain::from_env());

}  // namespace schedkit
