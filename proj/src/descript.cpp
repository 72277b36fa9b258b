// SPDX-License-Identifier: Apache-2.0
#include "schedkit/descript.hpp"

#include <algorithm>
#include <map>
#include <regex>
#include <set>

#include "schedkit/error.hpp"
#include "util.hpp"

namespace schedkit {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw Error("descript", msg); }

using util::quote;

const std::regex kDim(R"(^([A-Za-z_][A-Za-z0-9_]*)$)");
const std::regex kTile(R"(^([A-Za-z_][A-Za-z0-9_]*)#([0-9]+)$)");
const std::regex kRegion(R"(^([A-Za-z_][A-Za-z0-9_]*)\[([0-9]+):([0-9]+)\]$)");

std::int64_t to_int(const std::string& s, const std::string& key) {
  try {
    return std::stoll(s);
  } catch (const std::exception&) {
    fail("number out of range in " + quote(key));
  }
}

DescriptEntry parse_entry(const std::string& key, const nlohmann::ordered_json& value) {
  DescriptEntry e;
  e.key = key;
  std::smatch m;
  if (std::regex_match(key, m, kDim)) {
    e.kind = DescriptEntry::Kind::dim;
    e.dim = m[1];
  } else if (std::regex_match(key, m, kTile)) {
    e.kind = DescriptEntry::Kind::tile;
    e.dim = m[1];
    e.size = to_int(m[2], key);
    if (e.size < 1) fail("tile size must be >= 1 in " + quote(key));
  } else if (std::regex_match(key, m, kRegion)) {
    e.kind = DescriptEntry::Kind::region;
    e.dim = m[1];
    e.lower = to_int(m[2], key);
    e.upper = to_int(m[3], key);
    if (e.lower >= e.upper) fail("empty region " + quote(key));
  } else {
    fail("malformed key " + quote(key));
  }

  if (e.kind == DescriptEntry::Kind::region) {
    if (!value.is_object()) fail("region " + quote(key) + " needs a nested map");
    e.children = parse_descript_tree(value);
    return e;
  }
  if (!value.is_array()) fail("value of " + quote(key) + " must be a list of annotations");
  std::set<std::string> seen;
  for (const auto& a : value) {
    if (!a.is_string()) fail("annotations of " + quote(key) + " must be strings");
    const auto s = a.get<std::string>();
    if (s != "unroll" && s != "vectorize" && s != "parallel") {
      fail("unknown annotation " + quote(s) + " on " + quote(key));
    }
    if (seen.insert(s).second) e.annotations.push_back(s);
  }
  return e;
}

void check_regions(const DescriptTree& tree) {
  const DescriptEntry* first = nullptr;
  for (std::size_t i = 0; i < tree.size(); ++i) {
    const auto& e = tree[i];
    if (e.kind != DescriptEntry::Kind::region) {
      if (first) fail("loop " + quote(e.key) + " declared after the split regions");
      continue;
    }
    if (!first) {
      first = &e;
      continue;
    }
    if (e.dim != first->dim) {
      fail("split regions over two dims (" + quote(first->dim) + ", " + quote(e.dim) + ")");
    }
    if (e.lower != tree[i - 1].upper) {
      fail("region " + quote(e.key) + " does not start where " + quote(tree[i - 1].key) +
           " ends");
    }
  }
}

}  // namespace

DescriptTree parse_descript_tree(const nlohmann::ordered_json& map) {
  if (!map.is_object()) fail("description must be a map");
  DescriptTree tree;
  for (auto it = map.begin(); it != map.end(); ++it) {
    tree.push_back(parse_entry(it.key(), it.value()));
  }
  check_regions(tree);
  return tree;
}

Descript parse_descript(const nlohmann::ordered_json& doc) {
  Descript d;
  if (doc.is_object() && doc.contains("descript")) {
    d.root = doc.value("root", std::string{});
    if (doc.contains("dims")) {
      if (!doc.at("dims").is_array()) fail("\"dims\" must be a list");
      for (const auto& n : doc.at("dims")) {
        if (!n.is_string()) fail("\"dims\" must be a list of names");
        d.dims.push_back(n.get<std::string>());
      }
    }
    d.tree = parse_descript_tree(doc.at("descript"));
  } else {
    d.tree = parse_descript_tree(doc);
  }
  return d;
}

namespace {

class Inferrer {
 public:
  Inferrer(Scheduler& sch) : sch_(sch) {}

  std::vector<Primitive> run(const std::string& root, const DescriptTree& tree) {
    const std::size_t start = sch_.log().size();
    scope(root, tree, -1);
    return {sch_.log().begin() + static_cast<std::ptrdiff_t>(start), sch_.log().end()};
  }

 private:
  const OpNode& op_of(const std::string& root) const {
    return sch_.graph().op(sch_.nest_of_root(root).op_id);
  }

  int dim_of(const OpNode& op, const DescriptEntry& e) const {
    const int d = op.dim_index(e.dim);
    if (d < 0) fail("op " + quote(op.id) + " has no dim " + quote(e.dim) + " (key " + quote(e.key) + ")");
    return d;
  }

  // Loops of dim d from the top of the nest down to `root`.
  std::vector<const Loop*> dim_chain(const std::string& root, int d) const {
    std::vector<const Loop*> out;
    for (const Root* r : root_path(sch_.nest_of_root(root).root, root)) {
      for (const auto& l : r->loops) {
        if (l.dim == d) out.push_back(&l);
      }
    }
    return out;
  }

  bool label_used(const std::string& root, const std::string& label) const {
    const auto& nest = sch_.nest_of_root(root);
    for (const Root* r : root_path(nest.root, root)) {
      for (const auto& l : r->loops) {
        if (l.label == label) return true;
      }
    }
    bool found = false;
    for_each_root(sch_.root(root), [&](const Root& r) {
      for (const auto& l : r.loops) found |= l.label == label;
    });
    return found;
  }

  void scope(const std::string& root, const DescriptTree& tree, int header_dim) {
    const OpNode& op = op_of(root);

    // Labels of the declared loops, in declaration order.
    std::vector<std::string> declared;
    std::map<std::string, std::string> label_of_key;
    std::set<int> bare;
    const DescriptEntry* region = nullptr;

    // Tiles first, grouped per dim in order of first appearance.
    std::vector<int> tile_dims;
    std::map<int, OrderedSizes> tiles;
    std::set<std::string> fresh;
    for (const auto& e : tree) {
      const int d = dim_of(op, e);
      if (e.kind == DescriptEntry::Kind::region) {
        if (!region) region = &e;
        continue;
      }
      if (e.kind == DescriptEntry::Kind::dim) {
        if (d == header_dim) {
          fail("dim " + quote(e.dim) + " is the split dim of this region; its loop is the region itself");
        }
        if (!bare.insert(d).second) fail("dim " + quote(e.dim) + " declared twice");
        bool own = false;
        for (const auto& l : sch_.root(root).loops) own |= l.dim == d && l.base;
        if (!own) fail("outermost loop of " + quote(e.dim) + " is already placed by an enclosing scope");
        continue;
      }
      if (!tiles.count(d)) tile_dims.push_back(d);
      tiles[d].emplace_back(e.key, e.size);
    }
    // Tiles of one dim nest by size, whatever their declared order.
    for (int d : tile_dims) {
      auto& t = tiles[d];
      std::stable_sort(t.begin(), t.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
      for (auto& [key, size] : t) {
        std::string label;
        for (int k = 1;; ++k) {
          label = op.dims[d].name + std::to_string(k);
          if (!label_used(root, label) && !fresh.count(label)) break;
        }
        fresh.insert(label);
        label_of_key[key] = label;
        key = label;
      }
    }
    if (region && bare.count(dim_of(op, *region))) {
      fail("dim " + quote(region->dim) + " is both declared and split in the same scope");
    }

    for (int d : tile_dims) {
      const auto chain = dim_chain(root, d);
      const Loop* finest = nullptr;
      for (const Loop* l : chain) {
        if (!finest || l->step < finest->step) finest = l;
      }
      const std::int64_t span = finest->upper - finest->lower;
      const auto& t = tiles[d];
      if (t.front().second > span || span % t.front().second != 0) {
        fail("tile " + quote(op.dims[d].name + "#" + std::to_string(t.front().second)) +
             " does not divide the extent " + std::to_string(span) + " of " +
             quote(op.dims[d].name) + " under " + quote(root) + "; split the dim first");
      }
      sch_.strip_mine(root, op.dims[d].name, t);
    }

    // Target order of the root's free loops.
    const Root& r = sch_.root(root);
    for (const auto& e : tree) {
      if (e.kind == DescriptEntry::Kind::dim) {
        declared.push_back(loop_label(r, dim_of(op, e)));
        label_of_key[e.key] = declared.back();
      } else if (e.kind == DescriptEntry::Kind::tile) {
        declared.push_back(label_of_key[e.key]);
      }
    }
    std::vector<std::string> order = declared;
    if (region && dim_of(op, *region) != header_dim) {
      order.push_back(loop_label(r, dim_of(op, *region)));
    }
    std::vector<std::string> current;
    for (std::size_t i = r.first_free(); i < r.loops.size(); ++i) {
      current.push_back(r.loops[i].label);
      if (std::find(order.begin(), order.end(), r.loops[i].label) == order.end()) {
        order.push_back(r.loops[i].label);
      }
    }
    if (order != current) {
      for (const auto& c : r.children) order.push_back(c.name);
      sch_.interchange(root, order);
    }

    // Split, then annotate this scope, then recurse.
    std::vector<std::string> region_roots;
    if (region) {
      const int d = dim_of(op, *region);
      OrderedSizes segments;
      int k = 0;
      for (const auto& e : tree) {
        if (e.kind != DescriptEntry::Kind::region) continue;
        std::string name;
        do {
          name = e.dim + "[" + std::to_string(k++) + "]";
        } while (sch_.has_root(name));
        segments.emplace_back(name, e.lower);
      }
      const Loop& base = sch_.root(root).loops[index_of(sch_.root(root), loop_label(sch_.root(root), d))];
      const auto& last = tree.back();
      if (tree[tree.size() - segments.size()].lower != base.lower || last.upper != base.upper) {
        fail("split regions of " + quote(region->dim) + " must cover [" + std::to_string(base.lower) +
             ":" + std::to_string(base.upper) + "]");
      }
      region_roots = sch_.split(root, region->dim, segments);
    }

    OrderedSizes unrolls;
    std::vector<std::string> vectorized, parallel;
    const Root& done = sch_.root(root);
    for (const auto& e : tree) {
      if (e.kind == DescriptEntry::Kind::region) continue;
      const std::string& label = label_of_key[e.key];
      for (const auto& a : e.annotations) {
        if (a == "unroll") {
          const std::int64_t trip = done.loops[index_of(done, label)].trip();
          if (trip > 1) unrolls.emplace_back(label, trip);
        } else if (a == "vectorize") {
          vectorized.push_back(label);
        } else {
          parallel.push_back(label);
        }
      }
    }
    if (!unrolls.empty()) sch_.unroll(root, unrolls);
    if (!vectorized.empty()) sch_.vectorize(root, vectorized);
    if (!parallel.empty()) sch_.parallelize(root, parallel);

    std::size_t next = 0;
    for (const auto& e : tree) {
      if (e.kind != DescriptEntry::Kind::region) continue;
      scope(region_roots[next++], e.children, dim_of(op, e));
    }
  }

  static std::size_t index_of(const Root& r, const std::string& label) {
    for (std::size_t i = 0; i < r.loops.size(); ++i) {
      if (r.loops[i].label == label) return i;
    }
    fail("no loop " + quote(label) + " under " + quote(r.name));
  }

  // The base loop of dim d owned by r.
  static std::string loop_label(const Root& r, int d) {
    for (const auto& l : r.loops) {
      if (l.dim == d && l.base) return l.label;
    }
    fail("root " + quote(r.name) + " does not own the outermost loop of that dim");
  }

  Scheduler& sch_;
};

}  // namespace

std::vector<Primitive> apply_descript(Scheduler& sch, const Descript& d) {
  const std::string root = d.root.empty() ? sch.default_root() : d.root;
  if (!d.dims.empty()) sch.set_dims(d.dims, root);
  return Inferrer(sch).run(root, d.tree);
}

std::vector<Primitive> infer_schedule(const Graph& graph, const DescriptTree& tree,
                                      const std::string& root) {
  Scheduler sch(graph, root);
  return Inferrer(sch).run(sch.default_root(), tree);
}

}  // namespace schedkit
