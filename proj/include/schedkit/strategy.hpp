// SPDX-License-Identifier: Apache-2.0
//
// Token strategies: a string over {T,P,R,U,O,W,B,F} read outer to inner
// defines a schedule template for one op and a sparse grid of tile and
// option choices that can be sampled and turned into primitive calls.
//
//   T  tile all dims            P  tile the parallel dims
//   R  tile the reduction dims  U  tile all dims, free order
//   O  tile all dims ordered Pdims_1, Rdims, Pdims_2..p
//   W  optional write buffer    B  optional packs of the inputs
//   F  optional fusion of an elementwise consumer
//
// A sample is a flat integer vector: for every dim (op order) one factor per
// tile level of that dim (outer to inner), then one permutation index per U
// token, then one value per W/B/F token (B is a bitmask over the inputs).
// The tile of a level is the product of its factor and all inner factors.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "schedkit/scheduler.hpp"

namespace schedkit {

using Sample = std::vector<std::int64_t>;

struct StrategyOptions {
  bool vector_constraint = true;  // innermost tile of the last parallel dim: multiple of the width
  bool parallelize = false;       // parallelize the parallel loops of the first level
  int vector_width = 8;
  std::int64_t max_unroll = 256;     // bound on the product of unroll factors
  std::int64_t cache_budget = 32768;  // bytes, for default_schedule level 2
};

/// One slot of the design space.
struct StrategySlot {
  enum class Kind { tile, order, write, pack, fuse };
  Kind kind = Kind::tile;
  std::string name;   // tile label, or the token letter for option slots
  int dim = -1;       // tile only
  int level = -1;     // token index among tiling tokens (option slots: preceding one)
  std::int64_t max = 0;  // order/option slots: values in [0, max]
};

class Strategy {
 public:
  const std::string& tokens() const { return tokens_; }
  const std::string& op_id() const { return op_id_; }
  const StrategyOptions& options() const { return options_; }
  const std::vector<StrategySlot>& slots() const { return slots_; }
  std::size_t size() const { return slots_.size(); }

  /// Throws when a slot is out of range or a tile does not divide its extent.
  void check(const Sample& s) const;
  /// Tile size of every tile slot (same order as the tile slots).
  std::vector<std::int64_t> tiles(const Sample& s) const;
  /// Primitive calls realizing `s`, with the op's nest as root.
  std::vector<Primitive> primitives(const Sample& s,
                                    const std::vector<std::string>& dim_names = {}) const;

 private:
  friend Strategy make_strategy(const Graph&, const std::string&, const std::string&,
                                StrategyOptions);
  struct Level {
    char token = 'T';
    std::vector<int> dims;  // in the token's order (U: identity, permuted by the sample)
    int order_slot = -1;
  };
  struct Option {
    char token = 'W';
    int after_level = -1;
    int slot = 0;
  };

  std::vector<std::int64_t> decode_tiles(const Sample& s) const;
  std::string loop_label(int dim, int level, const std::vector<std::string>& names) const;
  std::vector<int> level_dims(const Level& l, const Sample& s) const;
  std::vector<int> pdims() const;
  friend Sample default_schedule(const Strategy&, int);
  friend std::vector<Sample> sample(const Strategy&, int, std::uint64_t);

  std::string tokens_;
  std::string op_id_;
  StrategyOptions options_;
  OpNode op_;
  std::vector<IterDim> dims_;
  std::vector<std::string> inputs_;   // packable inputs (bit order of B)
  std::string fuse_consumer_;         // empty: F slots are fixed to 0
  std::vector<Level> levels_;
  std::vector<Option> options_slots_;
  std::vector<StrategySlot> slots_;
  std::vector<std::vector<int>> dim_levels_;  // per dim: levels containing it
  std::vector<int> dim_slot_;                 // per dim: first tile slot
};

Strategy make_strategy(const Graph& graph, const std::string& tokens, const std::string& op_id,
                       StrategyOptions options = {});

/// `num` uniform points of the grid; a pure function of its arguments.
std::vector<Sample> sample(const Strategy& strategy, int num, std::uint64_t seed);

/// Applies the primitives of `s` to the scheduler.
void generate(const Strategy& strategy, Scheduler& sch, const Sample& s);

/// 0: naive, 1: vector-width innermost tile, 2: register tile plus a cache
/// tile whose inner working set fits options().cache_budget, with every W
/// slot set.
Sample default_schedule(const Strategy& strategy, int opt_level);

nlohmann::json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j);

}  // namespace schedkit
