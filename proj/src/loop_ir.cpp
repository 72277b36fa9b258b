// SPDX-License-Identifier: Apache-2.0
#include "schedkit/loop_ir.hpp"

#include <sstream>

#include "schedkit/error.hpp"
#include "util.hpp"

namespace schedkit {

LoopNest initial_nest(const OpNode& op) {
  LoopNest nest;
  nest.op_id = op.id;
  nest.dims = op.dims;
  nest.root.name = op.id;
  for (std::size_t d = 0; d < op.dims.size(); ++d) {
    Loop l;
    l.label = op.dims[d].name;
    l.dim = static_cast<int>(d);
    l.lower = 0;
    l.upper = op.dims[d].extent;
    nest.root.loops.push_back(l);
  }
  return nest;
}

namespace {

bool elided(const Loop& l) {
  return !l.base && l.trip() == 1 && l.ann.empty() && l.buffers.empty();
}

std::string annotations(const Annotations& a) {
  std::vector<std::string> parts;
  if (a.unroll > 1 && !a.vectorize) parts.push_back("unroll(" + std::to_string(a.unroll) + ")");
  if (a.vectorize) parts.push_back("vectorize");
  if (a.parallel) parts.push_back("parallel");
  if (parts.empty()) return "";
  return " {" + util::join(parts, ",") + "}";
}

std::string buffer_line(const BufferOp& b) {
  switch (b.kind) {
    case BufferKind::pack: {
      std::string s = "pack " + b.tensor;
      bool padded = false;
      for (auto p : b.pad) padded |= p != 0;
      if (padded) s += " pad=[" + util::join(b.pad, ",") + "]";
      return s;
    }
    case BufferKind::write: return "buffer " + b.tensor;
    case BufferKind::fuse_producer: return "fuse-producer " + b.fused_op + " " + b.tensor;
    case BufferKind::fuse_consumer: return "fuse-consumer " + b.fused_op + " " + b.tensor;
  }
  return "";
}

void render_root(const Root& r, const std::string& op_id, int depth, std::ostringstream& os) {
  auto pad = [&](int d) { return std::string(2 * d, ' '); };
  os << pad(depth) << "root " << r.name << '\n';
  for (const auto& l : r.loops) {
    if (elided(l)) continue;
    os << pad(depth) << "for " << l.label << " in [" << l.lower << ',' << l.upper << ") step "
       << l.step << annotations(l.ann) << '\n';
    ++depth;
    for (const auto& b : l.buffers) os << pad(depth) << buffer_line(b) << '\n';
  }
  if (r.children.empty()) {
    os << pad(depth) << op_id << '\n';
  } else {
    for (const auto& c : r.children) render_root(c, op_id, depth, os);
  }
}

}  // namespace

std::string render(const LoopNest& nest) {
  std::ostringstream os;
  render_root(nest.root, nest.op_id, 0, os);
  return os.str();
}

namespace {

struct PointWalker {
  std::vector<std::int64_t> value;
  std::vector<std::vector<std::int64_t>>& out;
  std::size_t max_points;

  void root(const Root& r, std::size_t i) {
    if (i == r.loops.size()) {
      if (r.children.empty()) {
        if (out.size() >= max_points) {
          throw Error("loop_ir", "iteration space exceeds " + std::to_string(max_points) +
                                     " points");
        }
        out.push_back(value);
      } else {
        for (const auto& c : r.children) root(c, 0);
      }
      return;
    }
    const Loop& l = r.loops[i];
    for (std::int64_t v = l.lower; v < l.upper; v += l.step) {
      value[l.dim] += v;
      root(r, i + 1);
      value[l.dim] -= v;
    }
  }
};

}  // namespace

std::vector<std::vector<std::int64_t>> enumerate_points(const LoopNest& nest,
                                                        std::size_t max_points) {
  std::vector<std::vector<std::int64_t>> out;
  PointWalker w{std::vector<std::int64_t>(nest.dims.size(), 0), out, max_points};
  w.root(nest.root, 0);
  return out;
}

Root* find_root(Root& tree, const std::string& name) {
  if (tree.name == name) return &tree;
  for (auto& c : tree.children) {
    if (Root* r = find_root(c, name)) return r;
  }
  return nullptr;
}

const Root* find_root(const Root& tree, const std::string& name) {
  return find_root(const_cast<Root&>(tree), name);
}

namespace {
bool path_to(const Root& r, const std::string& name, std::vector<const Root*>& path) {
  path.push_back(&r);
  if (r.name == name) return true;
  for (const auto& c : r.children) {
    if (path_to(c, name, path)) return true;
  }
  path.pop_back();
  return false;
}
}  // namespace

std::vector<const Root*> root_path(const Root& tree, const std::string& name) {
  std::vector<const Root*> path;
  if (!path_to(tree, name, path)) path.clear();
  return path;
}

void for_each_root(const Root& tree, const std::function<void(const Root&)>& f) {
  f(tree);
  for (const auto& c : tree.children) for_each_root(c, f);
}

void for_each_root(Root& tree, const std::function<void(Root&)>& f) {
  f(tree);
  for (auto& c : tree.children) for_each_root(c, f);
}

}  // namespace schedkit
