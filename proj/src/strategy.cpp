// SPDX-License-Identifier: Apache-2.0
#include "schedkit/strategy.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "schedkit/error.hpp"
#include "util.hpp"

namespace schedkit {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw Error("strategy", msg); }

std::vector<std::int64_t> divisors(std::int64_t n) {
  std::vector<std::int64_t> out;
  for (std::int64_t d = 1; d <= n; ++d) {
    if (n % d == 0) out.push_back(d);
  }
  return out;
}

std::int64_t factorial(std::size_t n) {
  std::int64_t f = 1;
  for (std::size_t i = 2; i <= n; ++i) f *= static_cast<std::int64_t>(i);
  return f;
}

// Lehmer decoding of a permutation index.
std::vector<int> nth_permutation(std::vector<int> items, std::int64_t index) {
  std::vector<int> out;
  while (!items.empty()) {
    const std::int64_t f = factorial(items.size() - 1);
    const auto k = static_cast<std::size_t>(index / f);
    index %= f;
    out.push_back(items[k]);
    items.erase(items.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

std::int64_t pick(std::mt19937_64& rng, std::int64_t n) {
  return static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n));
}

}  // namespace

Strategy make_strategy(const Graph& graph, const std::string& tokens, const std::string& op_id,
                       StrategyOptions options) {
  if (tokens.empty()) fail("empty token string");
  const OpNode* op = graph.find_op(op_id);
  if (!op) fail("graph " + util::quote(graph.name) + " has no op " + util::quote(op_id));
  if (options.vector_width < 1) fail("vector width must be positive");

  Strategy s;
  s.tokens_ = tokens;
  s.op_id_ = op_id;
  s.options_ = options;
  s.op_ = *op;
  s.dims_ = op->dims;
  std::vector<int> pd, rd, all;
  for (std::size_t d = 0; d < s.dims_.size(); ++d) {
    (s.dims_[d].cls == DimClass::parallel ? pd : rd).push_back(static_cast<int>(d));
    all.push_back(static_cast<int>(d));
  }

  bool reduction_seen = false;
  bool write_seen = false;
  std::vector<std::pair<char, int>> opts;
  for (char t : tokens) {
    Strategy::Level level;
    level.token = t;
    switch (t) {
      case 'T':
      case 'U':
        level.dims = all;
        break;
      case 'P':
        level.dims = pd;
        break;
      case 'R':
        if (rd.empty()) fail("token 'R' on op " + util::quote(op_id) + " without reduction dims");
        level.dims = rd;
        break;
      case 'O':
        if (!pd.empty()) level.dims.push_back(pd.front());
        level.dims.insert(level.dims.end(), rd.begin(), rd.end());
        if (pd.size() > 1) level.dims.insert(level.dims.end(), pd.begin() + 1, pd.end());
        break;
      case 'W':
      case 'B':
      case 'F': {
        const int after = static_cast<int>(s.levels_.size()) - 1;
        if (after < 0) fail(std::string("token '") + t + "' needs a preceding tiling token");
        if (t == 'F') {
          if (reduction_seen) fail("token 'F' must precede every reduction tiling");
          if (write_seen) fail("token 'F' cannot be nested in a write buffer");
        }
        write_seen |= t == 'W';
        opts.emplace_back(t, after);
        continue;
      }
      default:
        fail(std::string("token '") + t + "' is not one of T,P,R,U,O,W,B,F");
    }
    if (level.dims.empty()) fail(std::string("token '") + t + "' tiles no dim");
    for (int d : level.dims) reduction_seen |= s.dims_[d].cls == DimClass::reduction;
    s.levels_.push_back(level);
  }

  // Packable inputs: read through a single operand slot.
  for (const auto& in : op->inputs) {
    if (std::count(op->inputs.begin(), op->inputs.end(), in) == 1) s.inputs_.push_back(in);
  }
  const auto consumers = graph.consumers_of(op->output.name);
  if (consumers.size() == 1 && consumers[0]->kind == OpKind::relu &&
      !graph.is_output(op->output.name)) {
    s.fuse_consumer_ = consumers[0]->id;
  }

  s.dim_levels_.assign(s.dims_.size(), {});
  for (std::size_t l = 0; l < s.levels_.size(); ++l) {
    for (int d : s.levels_[l].dims) s.dim_levels_[d].push_back(static_cast<int>(l));
  }
  s.dim_slot_.assign(s.dims_.size(), 0);
  for (std::size_t d = 0; d < s.dims_.size(); ++d) {
    s.dim_slot_[d] = static_cast<int>(s.slots_.size());
    const auto& lv = s.dim_levels_[d];
    for (std::size_t k = 1; k < lv.size(); ++k) {
      StrategySlot slot;
      slot.kind = StrategySlot::Kind::tile;
      slot.name = s.dims_[d].name + std::to_string(k);
      slot.dim = static_cast<int>(d);
      slot.level = lv[k];
      slot.max = s.dims_[d].extent;
      s.slots_.push_back(slot);
    }
  }
  for (std::size_t l = 0; l < s.levels_.size(); ++l) {
    if (s.levels_[l].token != 'U') continue;
    s.levels_[l].order_slot = static_cast<int>(s.slots_.size());
    s.slots_.push_back({StrategySlot::Kind::order, "U", -1, static_cast<int>(l),
                        factorial(s.levels_[l].dims.size()) - 1});
  }
  for (const auto& [t, after] : opts) {
    StrategySlot slot;
    slot.name = std::string(1, t);
    slot.level = after;
    if (t == 'W') {
      slot.kind = StrategySlot::Kind::write;
      slot.max = 1;
    } else if (t == 'B') {
      slot.kind = StrategySlot::Kind::pack;
      slot.max = (std::int64_t{1} << s.inputs_.size()) - 1;
    } else {
      slot.kind = StrategySlot::Kind::fuse;
      slot.max = s.fuse_consumer_.empty() ? 0 : 1;
    }
    s.options_slots_.push_back({t, after, static_cast<int>(s.slots_.size())});
    s.slots_.push_back(slot);
  }
  return s;
}

std::vector<int> Strategy::pdims() const {
  std::vector<int> out;
  for (std::size_t d = 0; d < dims_.size(); ++d) {
    if (dims_[d].cls == DimClass::parallel) out.push_back(static_cast<int>(d));
  }
  return out;
}

void Strategy::check(const Sample& s) const {
  if (s.size() != slots_.size()) {
    fail("sample has " + std::to_string(s.size()) + " entries, the space has " +
         std::to_string(slots_.size()));
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& slot = slots_[i];
    if (slot.kind == StrategySlot::Kind::tile) {
      if (s[i] < 1) fail("tile factor " + std::to_string(s[i]) + " of " + slot.name);
    } else if (s[i] < 0 || s[i] > slot.max) {
      fail("entry " + std::to_string(i) + " (" + slot.name + ") out of range [0," +
           std::to_string(slot.max) + "]");
    }
  }
  for (std::size_t d = 0; d < dims_.size(); ++d) {
    std::int64_t prod = 1;
    for (std::size_t k = 1; k < dim_levels_[d].size(); ++k) prod *= s[dim_slot_[d] + k - 1];
    if (dims_[d].extent % prod != 0) {
      fail("tiles of dim " + util::quote(dims_[d].name) + " multiply to " + std::to_string(prod) +
           ", which does not divide " + std::to_string(dims_[d].extent));
    }
  }
}

std::vector<std::int64_t> Strategy::decode_tiles(const Sample& s) const {
  std::vector<std::int64_t> tiles(slots_.size(), 0);
  for (std::size_t d = 0; d < dims_.size(); ++d) {
    std::int64_t prod = 1;
    for (std::size_t k = dim_levels_[d].size(); k-- > 1;) {
      const std::size_t i = dim_slot_[d] + k - 1;
      prod *= s[i];
      tiles[i] = prod;
    }
  }
  return tiles;
}

std::vector<std::int64_t> Strategy::tiles(const Sample& s) const {
  check(s);
  std::vector<std::int64_t> out;
  const auto all = decode_tiles(s);
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].kind == StrategySlot::Kind::tile) out.push_back(all[i]);
  }
  return out;
}

std::string Strategy::loop_label(int dim, int level, const std::vector<std::string>& names) const {
  const auto& lv = dim_levels_[dim];
  const auto k = std::find(lv.begin(), lv.end(), level) - lv.begin();
  return k == 0 ? names[dim] : names[dim] + std::to_string(k);
}

std::vector<int> Strategy::level_dims(const Level& l, const Sample& s) const {
  if (l.order_slot < 0) return l.dims;
  return nth_permutation(l.dims, s[l.order_slot]);
}

std::vector<Primitive> Strategy::primitives(const Sample& s,
                                            const std::vector<std::string>& dim_names) const {
  check(s);
  std::vector<std::string> names = dim_names;
  if (names.empty()) {
    for (const auto& d : dims_) names.push_back(d.name);
  }
  if (names.size() != dims_.size()) fail("dim name count does not match op " + util::quote(op_id_));
  const auto tile = decode_tiles(s);
  const std::string& root = op_id_;
  std::vector<Primitive> out;

  for (std::size_t d = 0; d < dims_.size(); ++d) {
    if (dim_levels_[d].size() < 2) continue;
    OrderedSizes tiles;
    for (std::size_t k = 1; k < dim_levels_[d].size(); ++k) {
      tiles.emplace_back(names[d] + std::to_string(k), tile[dim_slot_[d] + k - 1]);
    }
    out.push_back(StripMineSpec{root, names[d], tiles});
  }

  // Loop order and the trip count of every loop.
  struct Placed {
    std::string label;
    int dim;
    int level;
    int k;  // position among the dim's levels
    std::int64_t trip;
  };
  std::vector<Placed> order;
  std::vector<std::string> last_of_level(levels_.size());
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    for (int d : level_dims(levels_[l], s)) {
      const auto& lv = dim_levels_[d];
      const int k = static_cast<int>(std::find(lv.begin(), lv.end(), static_cast<int>(l)) - lv.begin());
      const std::int64_t outer = k == 0 ? dims_[d].extent : tile[dim_slot_[d] + k - 1];
      const std::int64_t inner = k + 1 < static_cast<int>(lv.size()) ? tile[dim_slot_[d] + k] : 1;
      order.push_back({loop_label(d, static_cast<int>(l), names), d, static_cast<int>(l), k,
                       outer / inner});
      last_of_level[l] = order.back().label;
    }
  }
  for (std::size_t d = 0; d < dims_.size(); ++d) {
    if (dim_levels_[d].empty()) order.push_back({names[d], static_cast<int>(d), -1, 0, dims_[d].extent});
  }
  std::vector<std::string> perm;
  for (const auto& p : order) perm.push_back(p.label);
  out.push_back(InterchangeSpec{root, perm});

  std::set<std::string> buffered;
  for (const auto& o : options_slots_) {
    const std::int64_t v = s[o.slot];
    if (v == 0) continue;
    const std::string& at = last_of_level[o.after_level];
    buffered.insert(at);
    if (o.token == 'W') {
      out.push_back(BufferSpec{root, at, ""});
    } else if (o.token == 'B') {
      for (std::size_t i = 0; i < inputs_.size(); ++i) {
        if (v >> i & 1) out.push_back(PackSpec{root, at, inputs_[i], {}});
      }
    } else {
      out.push_back(FuseSpec{root, op_id_, fuse_consumer_, at});
    }
  }

  if (options_.parallelize) {
    std::vector<std::string> par;
    for (const auto& p : order) {
      if (p.level != 0 || dims_[p.dim].cls != DimClass::parallel) break;
      par.push_back(p.label);
    }
    if (!par.empty()) out.push_back(ParallelizeSpec{root, par});
  }

  std::string vectorized;
  const auto pd = pdims();
  if (options_.vector_constraint && !pd.empty()) {
    const Placed& last = order.back();
    if (last.dim == pd.back() && last.k > 0 && last.trip % options_.vector_width == 0 &&
        !buffered.count(last.label)) {
      vectorized = last.label;
      out.push_back(VectorizeSpec{root, {vectorized}});
    }
  }

  // Full unroll of every dim's innermost tile, innermost first under the
  // product bound, listed in loop order.
  std::set<std::string> chosen;
  std::int64_t product = 1;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const bool innermost_tile = it->k > 0 && it->k + 1 == static_cast<int>(dim_levels_[it->dim].size());
    if (!innermost_tile || it->trip <= 1 || it->label == vectorized) continue;
    if (product * it->trip > options_.max_unroll) continue;
    product *= it->trip;
    chosen.insert(it->label);
  }
  OrderedSizes unrolls;
  for (const auto& p : order) {
    if (chosen.count(p.label)) unrolls.emplace_back(p.label, p.trip);
  }
  if (!unrolls.empty()) out.push_back(UnrollSpec{root, unrolls});
  return out;
}

std::vector<Sample> sample(const Strategy& st, int num, std::uint64_t seed) {
  std::vector<Sample> out;
  std::mt19937_64 rng(seed);
  const auto pd = st.pdims();
  for (int n = 0; n < num; ++n) {
    Sample s(st.slots_.size(), 0);
    for (std::size_t d = 0; d < st.dims_.size(); ++d) {
      const std::size_t count = st.dim_levels_[d].size() > 0 ? st.dim_levels_[d].size() - 1 : 0;
      if (count == 0) continue;
      const std::size_t first = st.dim_slot_[d];
      std::int64_t remaining = st.dims_[d].extent;
      std::size_t end = first + count;
      if (st.options_.vector_constraint && !pd.empty() && static_cast<int>(d) == pd.back()) {
        std::vector<std::int64_t> c;
        for (auto v : divisors(remaining)) {
          if (v % st.options_.vector_width == 0) c.push_back(v);
        }
        if (c.empty()) c = divisors(remaining);
        s[end - 1] = c[pick(rng, static_cast<std::int64_t>(c.size()))];
        remaining /= s[end - 1];
        --end;
      }
      for (std::size_t i = first; i < end; ++i) {
        const auto c = divisors(remaining);
        s[i] = c[pick(rng, static_cast<std::int64_t>(c.size()))];
        remaining /= s[i];
      }
    }
    for (std::size_t i = 0; i < st.slots_.size(); ++i) {
      if (st.slots_[i].kind != StrategySlot::Kind::tile) s[i] = pick(rng, st.slots_[i].max + 1);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void generate(const Strategy& strategy, Scheduler& sch, const Sample& s) {
  std::vector<std::string> names;
  for (const auto& d : sch.nest_of_root(strategy.op_id()).dims) names.push_back(d.name);
  for (const auto& p : strategy.primitives(s, names)) sch.apply(p);
}

Sample default_schedule(const Strategy& st, int opt_level) {
  if (opt_level < 0 || opt_level > 2) fail("opt level " + std::to_string(opt_level) + " not in 0..2");
  const std::size_t nd = st.dims_.size();
  const int w = st.options_.vector_width;
  // Tile value per dim and level position (index 0 unused: the base loop).
  std::vector<std::vector<std::int64_t>> tile(nd);
  for (std::size_t d = 0; d < nd; ++d) tile[d].assign(st.dim_levels_[d].size(), 1);
  auto has_tiles = [&](int d) { return st.dim_levels_[d].size() > 1; };
  auto set_innermost = [&](int d, std::int64_t v) {
    if (!has_tiles(d) || st.dims_[d].extent % v != 0) return false;
    for (std::size_t k = 1; k < tile[d].size(); ++k) tile[d][k] = v;
    return true;
  };
  const auto pd = st.pdims();
  if (opt_level >= 1 && !pd.empty()) {
    if (opt_level < 2 || !set_innermost(pd.back(), 2 * w)) set_innermost(pd.back(), w);
  }
  if (opt_level >= 2 && st.levels_.size() >= 2) {
    if (pd.size() >= 2) set_innermost(pd[pd.size() - 2], 4);
    const int m2 = static_cast<int>(st.levels_.size()) - 2;
    // Span of every dim over one iteration at the entry of level m2.
    auto span = [&](int d) -> std::int64_t {
      const auto& lv = st.dim_levels_[d];
      if (lv.empty()) return st.dims_[d].extent;
      for (std::size_t k = 0; k < lv.size(); ++k) {
        if (lv[k] >= m2) return k == 0 ? st.dims_[d].extent : tile[d][k];
      }
      return 1;
    };
    auto working_set = [&] {
      std::int64_t bytes = 0;
      std::vector<TensorAccess> acc = st.op_.input_accesses();
      acc.push_back(st.op_.output_access());
      for (const auto& a : acc) {
        std::int64_t n = 1;
        for (const auto& ax : a.axes) {
          std::int64_t e = 1;
          for (std::size_t d = 0; d < ax.coeff.size(); ++d) e += ax.coeff[d] * (span(static_cast<int>(d)) - 1);
          n *= e;
        }
        bytes += n * static_cast<std::int64_t>(dtype_size(st.op_.output.dtype));
      }
      return bytes;
    };
    bool grew = true;
    while (grew) {
      grew = false;
      for (int d : st.levels_[m2].dims) {
        const auto& lv = st.dim_levels_[d];
        const std::size_t k = std::find(lv.begin(), lv.end(), m2) - lv.begin();
        if (k == 0) continue;
        const std::int64_t inner = k + 1 < lv.size() ? tile[d][k + 1] : 1;
        std::int64_t next = 0;
        for (auto v : divisors(st.dims_[d].extent)) {
          if (v > tile[d][k] && v % inner == 0) {
            next = v;
            break;
          }
        }
        if (next == 0) continue;
        const auto saved = tile[d];
        for (std::size_t j = 1; j <= k; ++j) tile[d][j] = std::max(tile[d][j], next);
        if (working_set() <= st.options_.cache_budget) {
          grew = true;
        } else {
          tile[d] = saved;
        }
      }
    }
  }
  Sample s(st.slots_.size(), 0);
  // Level 2 also accumulates into write buffers so the register tile stays local.
  if (opt_level >= 2) {
    for (const auto& o : st.options_slots_) {
      if (o.token == 'W') s[o.slot] = 1;
    }
  }
  for (std::size_t d = 0; d < nd; ++d) {
    for (std::size_t k = 1; k < tile[d].size(); ++k) {
      const std::int64_t inner = k + 1 < tile[d].size() ? tile[d][k + 1] : 1;
      s[st.dim_slot_[d] + k - 1] = tile[d][k] / inner;
    }
  }
  st.check(s);
  return s;
}

nlohmann::json sample_to_json(const Sample& s) { return nlohmann::json(s); }

Sample sample_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error("strategy", "a sample must be a JSON array of integers");
  Sample s;
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw Error("strategy", "a sample must be a JSON array of integers");
    s.push_back(v.get<std::int64_t>());
  }
  return s;
}

}  // namespace schedkit
