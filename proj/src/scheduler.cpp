// SPDX-License-Identifier: Apache-2.0
#include "schedkit/scheduler.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "schedkit/error.hpp"
#include "util.hpp"

namespace schedkit {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw Error("scheduler", msg); }

using util::quote;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

// ---------------------------------------------------------------------------
// Footprints

DimRanges inner_ranges(const Root& root, std::size_t loop, std::size_t num_dims) {
  DimRanges out{std::vector<std::int64_t>(num_dims, 0), std::vector<std::int64_t>(num_dims, 0)};
  bool first = true;
  std::vector<std::int64_t> lo(num_dims, 0), hi(num_dims, 0);

  std::function<void(const Root&, std::size_t)> walk = [&](const Root& r, std::size_t from) {
    for (std::size_t i = from; i < r.loops.size(); ++i) {
      lo[r.loops[i].dim] += r.loops[i].lower;
      hi[r.loops[i].dim] += r.loops[i].last();
    }
    if (r.children.empty()) {
      for (std::size_t d = 0; d < num_dims; ++d) {
        out.min[d] = first ? lo[d] : std::min(out.min[d], lo[d]);
        out.max[d] = first ? hi[d] : std::max(out.max[d], hi[d]);
      }
      first = false;
    } else {
      for (const auto& c : r.children) walk(c, 0);
    }
    for (std::size_t i = from; i < r.loops.size(); ++i) {
      lo[r.loops[i].dim] -= r.loops[i].lower;
      hi[r.loops[i].dim] -= r.loops[i].last();
    }
  };
  walk(root, loop + 1);
  return out;
}

std::int64_t BufferBox::elements() const {
  std::int64_t n = 1;
  for (auto e : padded) n *= e;
  return n;
}

BufferBox buffer_box(const TensorAccess& access, const DimRanges& ranges,
                     const std::vector<std::int64_t>& pad) {
  BufferBox box;
  for (std::size_t a = 0; a < access.axes.size(); ++a) {
    const auto& ax = access.axes[a];
    std::int64_t lo = 0, hi = 0;
    for (std::size_t d = 0; d < ax.coeff.size(); ++d) {
      lo += ax.coeff[d] * ranges.min[d];
      hi += ax.coeff[d] * ranges.max[d];
    }
    box.origin_min.push_back(lo);
    box.extent.push_back(hi - lo + 1);
    box.padded.push_back(hi - lo + 1 + (a < pad.size() ? pad[a] : 0));
  }
  return box;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::ordered_json sizes_json(const OrderedSizes& s) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : s) j[k] = v;
  return j;
}

OrderedSizes sizes_from(const nlohmann::ordered_json& j) {
  OrderedSizes s;
  for (auto it = j.begin(); it != j.end(); ++it) s.emplace_back(it.key(), it.value().get<std::int64_t>());
  return s;
}

std::string py_list(const std::vector<std::string>& v) {
  std::vector<std::string> q;
  for (const auto& s : v) q.push_back(quote(s));
  return "[" + util::join(q, ", ") + "]";
}

std::string py_dict(const OrderedSizes& s) {
  std::vector<std::string> q;
  for (const auto& [k, v] : s) q.push_back(quote(k) + ": " + std::to_string(v));
  return "{" + util::join(q, ", ") + "}";
}

}  // namespace

nlohmann::ordered_json primitive_to_json(const Primitive& p) {
  return std::visit(
      overloaded{
          [](const DimsSpec& s) {
            return nlohmann::ordered_json{{"primitive", "dims"}, {"root", s.root}, {"names", s.names}};
          },
          [](const SplitSpec& s) {
            return nlohmann::ordered_json{{"primitive", "split"}, {"root", s.root}, {"dim", s.dim},
                                          {"segments", sizes_json(s.segments)}};
          },
          [](const StripMineSpec& s) {
            return nlohmann::ordered_json{{"primitive", "strip_mine"}, {"root", s.root},
                                          {"dim", s.dim}, {"tiles", sizes_json(s.tiles)}};
          },
          [](const InterchangeSpec& s) {
            return nlohmann::ordered_json{{"primitive", "interchange"}, {"root", s.root},
                                          {"permutation", s.permutation}};
          },
          [](const UnrollSpec& s) {
            return nlohmann::ordered_json{{"primitive", "unroll"}, {"root", s.root},
                                          {"unrolls", sizes_json(s.unrolls)}};
          },
          [](const VectorizeSpec& s) {
            return nlohmann::ordered_json{{"primitive", "vectorize"}, {"root", s.root}, {"axes", s.axes}};
          },
          [](const ParallelizeSpec& s) {
            return nlohmann::ordered_json{{"primitive", "parallelize"}, {"root", s.root}, {"axes", s.axes}};
          },
          [](const PackSpec& s) {
            return nlohmann::ordered_json{{"primitive", "pack"}, {"root", s.root}, {"at", s.at},
                                          {"operand", s.operand}, {"pad", s.pad}};
          },
          [](const BufferSpec& s) {
            return nlohmann::ordered_json{{"primitive", "buffer_at"}, {"root", s.root}, {"at", s.at},
                                          {"operand", s.operand}};
          },
          [](const FuseSpec& s) {
            return nlohmann::ordered_json{{"primitive", "fuse"},     {"root", s.root},
                                          {"producer", s.producer}, {"consumer", s.consumer},
                                          {"at", s.at}};
          },
      },
      p);
}

Primitive primitive_from_json(const nlohmann::ordered_json& j) {
  try {
    const auto kind = j.at("primitive").get<std::string>();
    const auto root = j.value("root", std::string{});
    if (kind == "dims") return DimsSpec{root, j.at("names").get<std::vector<std::string>>()};
    if (kind == "split") return SplitSpec{root, j.at("dim"), sizes_from(j.at("segments"))};
    if (kind == "strip_mine") return StripMineSpec{root, j.at("dim"), sizes_from(j.at("tiles"))};
    if (kind == "interchange") {
      return InterchangeSpec{root, j.at("permutation").get<std::vector<std::string>>()};
    }
    if (kind == "unroll") return UnrollSpec{root, sizes_from(j.at("unrolls"))};
    if (kind == "vectorize") return VectorizeSpec{root, j.at("axes").get<std::vector<std::string>>()};
    if (kind == "parallelize") {
      return ParallelizeSpec{root, j.at("axes").get<std::vector<std::string>>()};
    }
    if (kind == "pack") {
      return PackSpec{root, j.at("at"), j.at("operand"),
                      j.value("pad", std::vector<std::int64_t>{})};
    }
    if (kind == "buffer_at") return BufferSpec{root, j.at("at"), j.value("operand", std::string{})};
    if (kind == "fuse") return FuseSpec{root, j.at("producer"), j.at("consumer"), j.at("at")};
    fail("unknown primitive " + quote(kind));
  } catch (const nlohmann::ordered_json::exception& e) {
    fail(std::string("malformed primitive record: ") + e.what());
  }
}

std::string describe(const Primitive& p) {
  return std::visit(
      overloaded{
          [](const DimsSpec& s) { return "dims = " + py_list(s.names); },
          [](const SplitSpec& s) {
            return "split(root=" + quote(s.root) + ", dim=" + quote(s.dim) +
                   ", segments=" + py_dict(s.segments) + ")";
          },
          [](const StripMineSpec& s) {
            return "strip_mine(root=" + quote(s.root) + ", dim=" + quote(s.dim) +
                   ", tiles=" + py_dict(s.tiles) + ")";
          },
          [](const InterchangeSpec& s) {
            return "interchange(root=" + quote(s.root) + ", permutation=" + py_list(s.permutation) +
                   ")";
          },
          [](const UnrollSpec& s) {
            return "unroll(root=" + quote(s.root) + ", unrolls=" + py_dict(s.unrolls) + ")";
          },
          [](const VectorizeSpec& s) {
            return "vectorize(root=" + quote(s.root) + ", axes=" + py_list(s.axes) + ")";
          },
          [](const ParallelizeSpec& s) {
            return "parallelize(root=" + quote(s.root) + ", axes=" + py_list(s.axes) + ")";
          },
          [](const PackSpec& s) {
            return "pack(root=" + quote(s.root) + ", at=" + quote(s.at) + ", operand=" +
                   quote(s.operand) + ", pad=[" + util::join(s.pad, ", ") + "])";
          },
          [](const BufferSpec& s) {
            return "buffer_at(root=" + quote(s.root) + ", at=" + quote(s.at) +
                   (s.operand.empty() ? "" : ", operand=" + quote(s.operand)) + ")";
          },
          [](const FuseSpec& s) {
            return "fuse(root=" + quote(s.root) + ", producer=" + quote(s.producer) +
                   ", consumer=" + quote(s.consumer) + ", at=" + quote(s.at) + ")";
          },
      },
      p);
}

// ---------------------------------------------------------------------------
// Schedule

const LoopNest& Schedule::nest(const std::string& op_id) const {
  for (const auto& n : nests) {
    if (n.op_id == op_id) return n;
  }
  fail("no nest for op " + quote(op_id));
}

nlohmann::ordered_json Schedule::to_json() const {
  nlohmann::ordered_json doc;
  doc["graph"] = graph_name;
  doc["default_root"] = default_root;
  doc["primitives"] = nlohmann::ordered_json::array();
  for (const auto& p : log) doc["primitives"].push_back(primitive_to_json(p));
  return doc;
}

std::string Schedule::digest() const {
  nlohmann::ordered_json prims = nlohmann::ordered_json::array();
  for (const auto& p : log) prims.push_back(primitive_to_json(p));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(util::fnv1a(prims.dump())));
  return buf;
}

std::string Schedule::render() const {
  std::string out;
  for (const auto& n : nests) {
    if (!fused_away.count(n.op_id)) out += schedkit::render(n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scheduler

Scheduler::Scheduler(const Graph& graph, std::string default_root, SchedulerConfig config)
    : graph_(&graph), config_(config), default_root_(std::move(default_root)) {
  if (config_.vector_width < 1) fail("vector width must be >= 1");
  for (const auto& op : graph.nodes) nests_.push_back(initial_nest(op));
  if (default_root_.empty()) default_root_ = graph.nodes.front().id;
  if (!graph.find_op(default_root_)) fail("default root " + quote(default_root_) + " is not an op");
}

Scheduler::Located Scheduler::locate(const std::string& name) {
  for (auto& n : nests_) {
    if (Root* r = find_root(n.root, name)) {
      if (fused_away_.count(n.op_id)) fail("op " + quote(n.op_id) + " has been fused away");
      return {&n, &graph_->op(n.op_id), r};
    }
  }
  fail("unknown root " + quote(name));
}

bool Scheduler::has_root(const std::string& name) const { return root_name_used(name); }

const LoopNest& Scheduler::nest_of_root(const std::string& name) const {
  for (const auto& n : nests_) {
    if (find_root(n.root, name)) return n;
  }
  fail("unknown root " + quote(name));
}

const Root& Scheduler::root(const std::string& name) const {
  return *find_root(nest_of_root(name).root, name);
}

std::vector<std::string> Scheduler::root_names() const {
  std::vector<std::string> out;
  for (const auto& n : nests_) {
    if (fused_away_.count(n.op_id)) continue;
    for_each_root(n.root, [&](const Root& r) { out.push_back(r.name); });
  }
  return out;
}

bool Scheduler::root_name_used(const std::string& name) const {
  for (const auto& n : nests_) {
    if (find_root(n.root, name)) return true;
  }
  return false;
}

int Scheduler::op_dim(const Located& at, const std::string& name) const {
  const int d = at.op->dim_index(name);
  if (d < 0) fail("op " + quote(at.op->id) + " has no dim " + quote(name));
  return d;
}

std::size_t Scheduler::loop_index(const Root& r, const std::string& label) const {
  for (std::size_t i = 0; i < r.loops.size(); ++i) {
    if (r.loops[i].label == label) return i;
  }
  fail("no loop " + quote(label) + " under root " + quote(r.name));
}

std::vector<const Loop*> Scheduler::enclosing(const LoopNest& nest, const Root& r,
                                              std::size_t idx) const {
  std::vector<const Loop*> out;
  for (const Root* p : root_path(nest.root, r.name)) {
    const std::size_t end = p == &r ? idx : p->loops.size();
    for (std::size_t i = 0; i < end; ++i) out.push_back(&p->loops[i]);
  }
  return out;
}

void Scheduler::check_label_free(const LoopNest& nest, const Root& r,
                                 const std::string& label) const {
  if (!util::is_identifier(label)) fail("loop name " + quote(label) + " is not an identifier");
  auto clash = [&](const Root& x) {
    for (const auto& l : x.loops) {
      if (l.label == label) fail("loop name " + quote(label) + " already used");
    }
  };
  for (const Root* p : root_path(nest.root, r.name)) clash(*p);
  for_each_root(r, [&](const Root& x) { clash(x); });
}

namespace {

// True when every body of the nest runs under `r` (only single-segment
// splits above it).
bool covers_all_bodies(const LoopNest& nest, const Root& r) {
  const auto path = root_path(nest.root, r.name);
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (path[i]->children.size() != 1) return false;
  }
  return true;
}

void check_single_read(const OpNode& op, const std::string& tensor) {
  if (std::count(op.inputs.begin(), op.inputs.end(), tensor) > 1) {
    fail("op " + quote(op.id) + " reads " + quote(tensor) + " through more than one access");
  }
}

}  // namespace

void Scheduler::set_dims(std::vector<std::string> names, std::string root) {
  root = resolve(root);
  Located at = locate(root);
  std::vector<std::string> have, want = names;
  for (const auto& d : at.op->dims) have.push_back(d.name);
  std::sort(have.begin(), have.end());
  std::sort(want.begin(), want.end());
  if (have != want) {
    fail("dims " + py_list(names) + " do not match the dims of " + quote(at.op->id) + " (" +
         util::join(have, ", ") + ")");
  }
  dims_ = names;
  log_.push_back(DimsSpec{root, std::move(names)});
}

std::vector<std::string> Scheduler::split_at(
    Located at, std::size_t pos, const std::vector<std::pair<std::string, std::int64_t>>& starts) {
  Root& r = *at.root;
  if (!r.children.empty()) fail("root " + quote(r.name) + " is already split");
  const Loop x = r.loops[pos];
  std::vector<std::string> names;
  std::vector<Root> children;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    Root c;
    c.name = starts[s].first;
    c.has_header = true;
    c.loops.assign(r.loops.begin() + pos, r.loops.end());
    c.loops[0].lower = starts[s].second;
    c.loops[0].upper = s + 1 < starts.size() ? starts[s + 1].second : x.upper;
    children.push_back(std::move(c));
    names.push_back(starts[s].first);
  }
  r.loops.erase(r.loops.begin() + pos, r.loops.end());
  if (pos == 0) r.has_header = false;
  r.children = std::move(children);
  return names;
}

std::vector<std::string> Scheduler::split(std::string root, std::string dim,
                                          OrderedSizes segments) {
  root = resolve(root);
  Located at = locate(root);
  const int d = op_dim(at, dim);
  Root& r = *at.root;
  if (!r.children.empty()) fail("root " + quote(root) + " is already split");
  std::size_t pos = r.loops.size();
  for (std::size_t i = 0; i < r.loops.size(); ++i) {
    if (r.loops[i].dim == d && r.loops[i].base) pos = i;
  }
  if (pos == r.loops.size()) {
    fail("dim " + quote(dim) + " has no loop of its own under root " + quote(root));
  }
  for (const Loop* l : enclosing(*at.nest, r, r.loops.size())) {
    if (l->dim == d && l->ann.vectorize) fail("dim " + quote(dim) + " is already vectorized");
  }
  const Loop& x = r.loops[pos];
  if (segments.empty()) fail("split needs at least one segment");
  if (segments.front().second != x.lower) {
    fail("first segment of " + quote(dim) + " must start at " + std::to_string(x.lower));
  }
  std::set<std::string> seen;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& [name, start] = segments[s];
    if (name.empty() || root_name_used(name) || !seen.insert(name).second) {
      fail("root name " + quote(name) + " is empty or already used");
    }
    if (start >= x.upper || start < x.lower) {
      fail("segment start " + std::to_string(start) + " outside [" + std::to_string(x.lower) +
           "," + std::to_string(x.upper) + ")");
    }
    if (s > 0 && start <= segments[s - 1].second) fail("segment starts must be strictly increasing");
    if ((start - x.lower) % x.step != 0) {
      fail("segment start " + std::to_string(start) + " is not aligned to step " +
           std::to_string(x.step));
    }
  }
  auto names = split_at(at, pos, segments);
  log_.push_back(SplitSpec{root, std::move(dim), std::move(segments)});
  return names;
}

std::vector<std::string> Scheduler::strip_mine(std::string root, std::string dim,
                                               OrderedSizes tiles) {
  root = resolve(root);
  Located at = locate(root);
  const int d = op_dim(at, dim);
  if (tiles.empty()) fail("strip_mine needs at least one tile");

  // The finest loop of the dim chain on the path (step 1) is the one to tile.
  const Loop* finest = nullptr;
  for (const Loop* l : enclosing(*at.nest, *at.root, at.root->loops.size())) {
    if (l->dim == d && (!finest || l->step < finest->step)) finest = l;
  }
  std::size_t pos = at.root->loops.size();
  for (std::size_t i = 0; i < at.root->loops.size(); ++i) {
    if (&at.root->loops[i] == finest) pos = i;
  }
  bool below = false;
  for (const auto& c : at.root->children) {
    for_each_root(c, [&](const Root& x) {
      for (const auto& l : x.loops) below |= l.dim == d && (!finest || l.step < finest->step);
    });
  }
  if (pos == at.root->loops.size() || below) {
    fail("the innermost loop of dim " + quote(dim) + " is not under root " + quote(root));
  }
  std::set<std::string> seen;
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const auto& [name, size] = tiles[t];
    if (size < 1) fail("tile " + quote(name) + " has size " + std::to_string(size));
    if (!seen.insert(name).second) fail("duplicate tile name " + quote(name));
    check_label_free(*at.nest, *at.root, name);
    if (t > 0 && tiles[t - 1].second % size != 0) {
      fail("tile " + quote(name) + " of size " + std::to_string(size) + " does not divide " +
           std::to_string(tiles[t - 1].second));
    }
  }
  const Loop& x = at.root->loops[pos];
  const std::int64_t span = x.upper - x.lower;
  const std::int64_t outer = tiles.front().second;
  if (outer > span) {
    fail("tile " + quote(tiles.front().first) + " of size " + std::to_string(outer) +
         " exceeds the extent " + std::to_string(span) + " of " + quote(x.label));
  }

  std::vector<std::string> created;
  Root* target = at.root;
  if (span % outer != 0) {
    if (!x.base) {
      fail("tile size " + std::to_string(outer) + " does not divide the span " +
           std::to_string(span) + " of " + quote(x.label));
    }
    // Epilogue: split off the tail so every loop keeps a static trip count.
    std::string main_name, tail_name;
    for (int k = 0;; ++k) {
      main_name = dim + "[" + std::to_string(k) + "]";
      tail_name = dim + "[" + std::to_string(k + 1) + "]";
      if (!root_name_used(main_name) && !root_name_used(tail_name)) break;
    }
    const std::int64_t main_end = x.upper - span % outer;
    created = split_at(at, pos, {{main_name, x.lower}, {tail_name, main_end}});
    target = &at.root->children.front();
    pos = 0;
  }

  Loop& tiled = target->loops[pos];
  const std::size_t insert_at = pos + 1;
  std::vector<Loop> fresh;
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    Loop l;
    l.label = tiles[t].first;
    l.dim = d;
    l.base = false;
    l.lower = 0;
    l.upper = tiles[t].second;
    l.step = t + 1 < tiles.size() ? tiles[t + 1].second : tiled.step;
    fresh.push_back(l);
  }
  tiled.step *= outer;
  target->loops.insert(target->loops.begin() + insert_at, fresh.begin(), fresh.end());
  log_.push_back(StripMineSpec{root, std::move(dim), std::move(tiles)});
  return created;
}

void Scheduler::interchange(std::string root, std::vector<std::string> permutation) {
  root = resolve(root);
  Located at = locate(root);
  Root& r = *at.root;
  const std::size_t ff = r.first_free();
  const std::size_t nloops = r.loops.size() - ff;
  if (permutation.size() != nloops + r.children.size()) {
    std::vector<std::string> expect;
    for (std::size_t i = ff; i < r.loops.size(); ++i) expect.push_back(r.loops[i].label);
    for (const auto& c : r.children) expect.push_back(c.name);
    fail("permutation of root " + quote(root) + " must list exactly " + py_list(expect));
  }
  std::set<std::string> seen;
  std::vector<Loop> reordered;
  for (std::size_t k = 0; k < permutation.size(); ++k) {
    const auto& label = permutation[k];
    if (!seen.insert(label).second) fail("duplicate label " + quote(label) + " in permutation");
    if (k >= nloops) {
      if (label != r.children[k - nloops].name) {
        fail("split roots of " + quote(root) + " must come last, in segment order");
      }
      continue;
    }
    bool found = false;
    for (std::size_t i = ff; i < r.loops.size(); ++i) {
      if (r.loops[i].label == label) {
        reordered.push_back(r.loops[i]);
        found = true;
      }
    }
    if (!found) {
      bool elsewhere = false;
      for_each_root(at.nest->root, [&](const Root& x) {
        if (x.name == label) elsewhere = true;
        for (const auto& l : x.loops) elsewhere |= l.label == label;
      });
      fail(elsewhere ? "label " + quote(label) + " does not belong to root " + quote(root)
                     : "unknown loop " + quote(label));
    }
  }
  std::copy(reordered.begin(), reordered.end(), r.loops.begin() + ff);
  log_.push_back(InterchangeSpec{root, std::move(permutation)});
}

void Scheduler::unroll(std::string root, OrderedSizes unrolls) {
  root = resolve(root);
  Located at = locate(root);
  for (const auto& [label, factor] : unrolls) {
    Loop& l = at.root->loops[loop_index(*at.root, label)];
    if (factor < 1) fail("unroll factor of " + quote(label) + " must be >= 1");
    if (l.trip() % factor != 0) {
      fail("unroll factor " + std::to_string(factor) + " does not divide the trip count " +
           std::to_string(l.trip()) + " of " + quote(label));
    }
  }
  for (const auto& [label, factor] : unrolls) {
    at.root->loops[loop_index(*at.root, label)].ann.unroll = factor;
  }
  log_.push_back(UnrollSpec{root, std::move(unrolls)});
}

void Scheduler::vectorize(std::string root, std::vector<std::string> axes) {
  root = resolve(root);
  Located at = locate(root);
  for (const auto& label : axes) {
    Loop& l = at.root->loops[loop_index(*at.root, label)];
    if (at.op->dims[l.dim].cls == DimClass::reduction) {
      fail("cannot vectorize reduction loop " + quote(label));
    }
    if (l.trip() % config_.vector_width != 0) {
      fail("trip count " + std::to_string(l.trip()) + " of " + quote(label) +
           " is not a multiple of the vector width " + std::to_string(config_.vector_width));
    }
  }
  for (const auto& label : axes) at.root->loops[loop_index(*at.root, label)].ann.vectorize = true;
  log_.push_back(VectorizeSpec{root, std::move(axes)});
}

void Scheduler::parallelize(std::string root, std::vector<std::string> axes) {
  root = resolve(root);
  Located at = locate(root);
  std::set<std::string> wanted(axes.begin(), axes.end());
  for (const auto& label : axes) {
    const std::size_t idx = loop_index(*at.root, label);
    const Loop& l = at.root->loops[idx];
    if (at.op->dims[l.dim].cls == DimClass::reduction) {
      fail("cannot parallelize reduction loop " + quote(label));
    }
    for (const Loop* outer : enclosing(*at.nest, *at.root, idx)) {
      if (!outer->ann.parallel && !wanted.count(outer->label)) {
        fail("parallel loop " + quote(label) + " is not in the outermost band (enclosed by " +
             quote(outer->label) + ")");
      }
    }
  }
  for (const auto& label : axes) at.root->loops[loop_index(*at.root, label)].ann.parallel = true;
  log_.push_back(ParallelizeSpec{root, std::move(axes)});
}

void Scheduler::pack(PackSpec spec) {
  spec.root = resolve(spec.root);
  Located at = locate(spec.root);
  Loop& l = at.root->loops[loop_index(*at.root, spec.at)];
  const auto& ins = at.op->inputs;
  if (std::find(ins.begin(), ins.end(), spec.operand) == ins.end()) {
    fail("op " + quote(at.op->id) + " does not read " + quote(spec.operand));
  }
  check_single_read(*at.op, spec.operand);
  const std::size_t rank = graph_->tensor(spec.operand).shape.size();
  if (spec.pad.empty()) spec.pad.assign(rank, 0);
  if (spec.pad.size() != rank) fail("pad needs one entry per axis of " + quote(spec.operand));
  for (auto p : spec.pad) {
    if (p < 0) fail("pad must be non-negative");
  }
  l.buffers.push_back(BufferOp{BufferKind::pack, spec.operand, spec.pad, {}});
  log_.push_back(std::move(spec));
}

void Scheduler::buffer_at(BufferSpec spec) {
  spec.root = resolve(spec.root);
  Located at = locate(spec.root);
  Loop& l = at.root->loops[loop_index(*at.root, spec.at)];
  const std::string operand = spec.operand.empty() ? at.op->output.name : spec.operand;
  if (operand != at.op->output.name) {
    fail("op " + quote(at.op->id) + " does not write " + quote(operand));
  }
  l.buffers.push_back(BufferOp{BufferKind::write, operand, {}, {}});
  log_.push_back(std::move(spec));
}

void Scheduler::fuse(FuseSpec spec) {
  spec.root = resolve(spec.root);
  Located at = locate(spec.root);
  const OpNode* producer = graph_->find_op(spec.producer);
  const OpNode* consumer = graph_->find_op(spec.consumer);
  if (!producer || !consumer) fail("fuse references an unknown op");
  const auto& cin = consumer->inputs;
  if (std::find(cin.begin(), cin.end(), producer->output.name) == cin.end()) {
    fail("no edge from " + quote(producer->id) + " to " + quote(consumer->id));
  }
  const std::string& mid = producer->output.name;
  if (graph_->is_output(mid) || graph_->consumers_of(mid).size() != 1) {
    fail("intermediate " + quote(mid) + " is needed outside the fused pair");
  }
  if (fused_away_.count(producer->id) || fused_away_.count(consumer->id)) {
    fail("op already fused");
  }
  const std::size_t idx = loop_index(*at.root, spec.at);
  Loop& l = at.root->loops[idx];
  if ((at.op == producer || at.op == consumer) && !covers_all_bodies(*at.nest, *at.root)) {
    fail("fused loop " + quote(spec.at) + " does not enclose every split root of " +
         quote(at.op->id));
  }

  if (at.op == producer) {
    if (consumer->kind != OpKind::relu) {
      fail("unsupported op pair: consumer fusion needs an elementwise relu consumer, got " +
           std::string(to_string(consumer->kind)));
    }
    auto outer = enclosing(*at.nest, *at.root, idx);
    outer.push_back(&l);
    for (const Loop* o : outer) {
      if (producer->dims[o->dim].cls == DimClass::reduction) {
        fail("dim mismatch: fused loop " + quote(spec.at) + " is inside reduction loop " +
             quote(o->label) + " which " + quote(consumer->id) + " does not share");
      }
    }
    l.buffers.push_back(BufferOp{BufferKind::fuse_consumer, mid, {}, consumer->id});
    fused_away_.insert(consumer->id);
  } else if (at.op == consumer) {
    check_single_read(*consumer, mid);
    if (!producer->is_elementwise()) {
      fail("unsupported op pair: producer fusion needs an elementwise producer, got " +
           std::string(to_string(producer->kind)));
    }
    for (const auto& in : producer->inputs) {
      if (const OpNode* p = graph_->producer_of(in); p && fused_away_.count(p->id)) {
        fail("unsupported op pair: producer input " + quote(in) + " is itself fused away");
      }
    }
    l.buffers.push_back(BufferOp{BufferKind::fuse_producer, mid, {}, producer->id});
    fused_away_.insert(producer->id);
  } else {
    fail("root " + quote(spec.root) + " belongs to neither " + quote(producer->id) + " nor " +
         quote(consumer->id));
  }
  log_.push_back(std::move(spec));
}

void Scheduler::apply(const Primitive& p) {
  std::visit(overloaded{
                 [&](const DimsSpec& s) { set_dims(s.names, s.root); },
                 [&](const SplitSpec& s) { split(s.root, s.dim, s.segments); },
                 [&](const StripMineSpec& s) { strip_mine(s.root, s.dim, s.tiles); },
                 [&](const InterchangeSpec& s) { interchange(s.root, s.permutation); },
                 [&](const UnrollSpec& s) { unroll(s.root, s.unrolls); },
                 [&](const VectorizeSpec& s) { vectorize(s.root, s.axes); },
                 [&](const ParallelizeSpec& s) { parallelize(s.root, s.axes); },
                 [&](const PackSpec& s) { pack(s); },
                 [&](const BufferSpec& s) { buffer_at(s); },
                 [&](const FuseSpec& s) { fuse(s); },
             },
             p);
}

Schedule Scheduler::schedule() const {
  for (const auto& nest : nests_) {
    if (fused_away_.count(nest.op_id)) continue;
    const OpNode& op = graph_->op(nest.op_id);

    std::vector<const Loop*> path;
    std::function<void(const Root&)> check = [&](const Root& r) {
      const std::size_t depth = path.size();
      for (std::size_t i = 0; i < r.loops.size(); ++i) {
        const Loop& l = r.loops[i];
        const auto where = quote(l.label) + " (root " + quote(r.name) + ")";
        if (l.ann.unroll > 1 && l.trip() % l.ann.unroll != 0) {
          fail("unroll factor " + std::to_string(l.ann.unroll) + " does not divide the trip count " +
               std::to_string(l.trip()) + " of " + where);
        }
        if (l.ann.vectorize) {
          if (i + 1 != r.loops.size() || !r.children.empty()) {
            fail("vectorized loop " + where + " is not innermost");
          }
          if (l.trip() % config_.vector_width != 0) {
            fail("trip count " + std::to_string(l.trip()) + " of vectorized loop " + where +
                 " is not a multiple of the vector width " + std::to_string(config_.vector_width));
          }
          if (!l.buffers.empty()) fail("vectorized loop " + where + " carries a buffer");
        }
        if (l.ann.parallel) {
          for (const Loop* o : path) {
            if (!o->ann.parallel) {
              fail("parallel loop " + where + " is enclosed by sequential loop " +
                   quote(o->label));
            }
          }
        }
        for (std::size_t b = 0; b < l.buffers.size(); ++b) {
          const BufferOp& buf = l.buffers[b];
          TensorAccess access;
          if (buf.writes()) {
            access = op.output_access();
          } else {
            for (const auto& a : op.input_accesses()) {
              if (a.tensor == buf.tensor) access = a;
            }
          }
          const auto box = buffer_box(access, inner_ranges(r, i, op.dims.size()), buf.pad);
          const std::int64_t bytes =
              box.elements() * static_cast<std::int64_t>(dtype_size(op.output.dtype));
          if (bytes > config_.local_memory_bytes) {
            fail("buffer for " + quote(buf.tensor) + " at " + where + " needs " +
                 std::to_string(bytes) + " bytes, above the local memory bound of " +
                 std::to_string(config_.local_memory_bytes));
          }
          if (buf.kind == BufferKind::fuse_consumer) {
            for (const Loop* o : path) {
              if (op.dims[o->dim].cls == DimClass::reduction) {
                fail("dim mismatch: fused consumer " + quote(buf.fused_op) + " at " + where +
                     " is inside reduction loop " + quote(o->label));
              }
            }
            if (op.dims[l.dim].cls == DimClass::reduction) {
              fail("dim mismatch: fused consumer " + quote(buf.fused_op) + " at reduction loop " + where);
            }
            auto outer_writes = [&](const Loop& o, std::size_t upto) {
              for (std::size_t k = 0; k < upto; ++k) {
                if (o.buffers[k].kind == BufferKind::write) {
                  fail("write buffer at " + quote(o.label) + " encloses the fused consumer " +
                       quote(buf.fused_op));
                }
              }
            };
            for (const Loop* o : path) outer_writes(*o, o->buffers.size());
            outer_writes(l, b);
          }
          if (buf.kind == BufferKind::pack) {
            // A pack of an inlined intermediate must sit inside its producer fusion.
            const OpNode* p = graph_->producer_of(buf.tensor);
            if (p && fused_away_.count(p->id)) {
              bool inside = false;
              auto scan = [&](const Loop& o, std::size_t upto) {
                for (std::size_t k = 0; k < upto; ++k) {
                  inside |= o.buffers[k].kind == BufferKind::fuse_producer &&
                            o.buffers[k].tensor == buf.tensor;
                }
              };
              for (const Loop* o : path) scan(*o, o->buffers.size());
              scan(l, b);
              if (!inside) {
                fail("pack of " + quote(buf.tensor) + " at " + where +
                     " is outside the fusion that computes it");
              }
            }
          }
        }
        path.push_back(&l);
      }
      for (const auto& c : r.children) check(c);
      path.resize(depth);
    };
    check(nest.root);
  }

  Schedule s;
  s.graph_name = graph_->name;
  s.default_root = default_root_;
  s.config = config_;
  s.log = log_;
  s.nests = nests_;
  s.dims = dims_;
  s.fused_away = fused_away_;
  return s;
}

Schedule apply(const Graph& graph, const std::vector<Primitive>& log, std::string default_root,
               SchedulerConfig config) {
  Scheduler sch(graph, std::move(default_root), config);
  for (const auto& p : log) sch.apply(p);
  return sch.schedule();
}

Schedule parse_schedule(const Graph& graph, const nlohmann::ordered_json& doc,
                        SchedulerConfig config) {
  if (!doc.is_object() || !doc.contains("primitives")) {
    fail("schedule document needs a \"primitives\" array");
  }
  if (doc.contains("graph") && doc.at("graph").get<std::string>() != graph.name) {
    fail("schedule targets graph " + quote(doc.at("graph").get<std::string>()) + ", not " +
         quote(graph.name));
  }
  std::vector<Primitive> log;
  for (const auto& p : doc.at("primitives")) log.push_back(primitive_from_json(p));
  return apply(graph, log, doc.value("default_root", std::string{}), config);
}

}  // namespace schedkit
