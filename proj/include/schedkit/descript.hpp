// SPDX-License-Identifier: Apache-2.0
//
// Declarative loop-structure descriptions. Keys declare loops in target
// order: `D` is the outermost loop of dim D, `D#N` a tile of size N along D,
// `D[A:B]` the region [A,B) of a split along D with its own inner
// description. Values are annotation lists or, for regions, nested maps.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "schedkit/scheduler.hpp"

namespace schedkit {

struct DescriptEntry {
  enum class Kind { dim, tile, region };
  Kind kind = Kind::dim;
  std::string key;
  std::string dim;
  std::int64_t size = 0;   // tile
  std::int64_t lower = 0;  // region
  std::int64_t upper = 0;  // region
  std::vector<std::string> annotations;  // subset of unroll, vectorize, parallel
  std::vector<DescriptEntry> children;   // region only
};

using DescriptTree = std::vector<DescriptEntry>;

struct Descript {
  std::string root;               // empty: the scheduler's default root
  std::vector<std::string> dims;  // optional dims declaration
  DescriptTree tree;
};

/// Accepts either a bare description map or {"root","dims","descript"}.
Descript parse_descript(const nlohmann::ordered_json& doc);
DescriptTree parse_descript_tree(const nlohmann::ordered_json& map);

/// Drives `sch` so that the root's loop structure becomes the described one.
/// Returns the primitives it applied (no-op calls are not emitted).
std::vector<Primitive> apply_descript(Scheduler& sch, const Descript& d);

/// Primitive log realizing `tree` under `root` of a fresh scheduler on `graph`.
std::vector<Primitive> infer_schedule(const Graph& graph, const DescriptTree& tree,
                                      const std::string& root = {});

}  // namespace schedkit
