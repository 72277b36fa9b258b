// SPDX-License-Identifier: Apache-2.0
#include "schedkit/backend_c.hpp"

#include <dlfcn.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "lowering.hpp"
#include "schedkit/error.hpp"
#include "util.hpp"

namespace schedkit {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw Error("backend_c", msg); }

// Symbolic integer expression: sum of coef * variable plus a constant.
struct Affine {
  std::vector<std::pair<std::string, std::int64_t>> terms;
  std::int64_t c = 0;

  void add(const std::string& var, std::int64_t k) {
    if (k == 0) return;
    for (auto it = terms.begin(); it != terms.end(); ++it) {
      if (it->first == var) {
        it->second += k;
        if (it->second == 0) terms.erase(it);
        return;
      }
    }
    terms.emplace_back(var, k);
  }
  void add(const Affine& o, std::int64_t k) {
    for (const auto& [v, x] : o.terms) add(v, x * k);
    c += o.c * k;
  }

  std::string str() const {
    std::string s;
    for (const auto& [v, k] : terms) {
      if (s.empty()) {
        s = k == 1 ? v : k == -1 ? "-" + v : std::to_string(k) + "*" + v;
      } else {
        const std::int64_t a = k < 0 ? -k : k;
        s += (k < 0 ? " - " : " + ") + (a == 1 ? v : std::to_string(a) + "*" + v);
      }
    }
    if (s.empty()) return std::to_string(c);
    if (c > 0) s += " + " + std::to_string(c);
    if (c < 0) s += " - " + std::to_string(-c);
    return s;
  }
};

const std::set<std::string>& c_keywords() {
  static const std::set<std::string> k{
      "auto",     "break",    "case",     "char",   "const",    "continue", "default",  "do",
      "double",   "else",     "enum",     "extern", "float",    "for",      "goto",     "if",
      "inline",   "int",      "long",     "register", "restrict", "return", "short",    "signed",
      "sizeof",   "static",   "struct",   "switch", "typedef",  "union",    "unsigned", "void",
      "volatile", "while",    "_Bool",    "_Complex", "_Imaginary", "main",  "malloc",   "free",
      "memset",   "memcpy",   "int64_t",  "int32_t", "NULL"};
  return k;
}

bool usable_name(const std::string& s) {
  return util::is_identifier(s) && !c_keywords().count(s) && s.rfind("sk_", 0) != 0 &&
         s.rfind("t_", 0) != 0;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
  return out;
}

const char* c_type(DType t) { return t == DType::float32 ? "float" : "int32_t"; }

struct Names {
  std::map<std::string, std::string> tensor;  // graph tensor -> C identifier
};

class OpEmitter {
 public:
  OpEmitter(const Graph& graph, const lower::GraphPlan& plan, const lower::OpPlan& op,
            const Names& names, std::ostringstream& os)
      : graph_(graph), plan_(plan), p_(op), op_(*op.op), names_(names), os_(os),
        type_(c_type(op.op->output.dtype)), dim_(op.op->dims.size()) {}

  /// Tensors the op function takes, in parameter order.
  std::vector<std::string> params() const {
    std::vector<std::string> out;
    auto add = [&](const std::string& t) {
      if (plan_.elided.count(t)) return;
      if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
    };
    for (const auto& in : op_.inputs) add(in);
    add(op_.output.name);
    for (const auto* b : plan_.buffers) {
      if (!b->fused || !owns(*b)) continue;
      if (b->kind == BufferKind::fuse_consumer) add(b->fused->output.name);
      if (b->kind == BufferKind::fuse_producer) add(b->fused->inputs[0]);
    }
    return out;
  }

  void emit(const std::string& fn) {
    const auto ps = params();
    std::vector<std::string> decl;
    for (const auto& t : ps) {
      const bool written = t == op_.output.name || is_fused_output(t);
      decl.push_back(std::string(written ? "" : "const ") + c_type(graph_.tensor(t).dtype) +
                     "* restrict " + names_.tensor.at(t));
    }
    os_ << "/* " << to_string(op_.kind) << " " << op_.id << " */\n";
    os_ << "static void " << fn << "(" << util::join(decl, ", ") << ") {\n";
    depth_ = 1;
    if (p_.zero_output && !plan_.elided.count(op_.output.name)) {
      line("memset(" + names_.tensor.at(op_.output.name) + ", 0, " +
           std::to_string(op_.output.num_elements()) + " * sizeof(" + type_ + "));");
    }
    for (std::size_t s = 0; s < p_.access.size(); ++s) {
      const std::string& t = s == p_.output_slot() ? op_.output.name : op_.inputs[s];
      Ctx c;
      if (!plan_.elided.count(t)) c.name = names_.tensor.at(t);
      c.strides = lower::row_major(graph_.tensor(t).shape);
      c.origin.assign(c.strides.size(), Affine{});
      stack_.push_back({c});
    }
    root(p_.root, 0);
    os_ << "}\n\n";
  }

 private:
  struct Ctx {
    std::string name;
    std::vector<std::int64_t> strides;
    std::vector<Affine> origin;
  };

  bool owns(const lower::BufferPlan& b) const {
    bool found = false;
    std::function<void(const lower::RootPlan&)> walk = [&](const lower::RootPlan& r) {
      for (const auto& l : r.loops) {
        for (const auto& x : l.buffers) found |= &x == &b;
      }
      for (const auto& c : r.children) walk(c);
    };
    walk(p_.root);
    return found;
  }

  bool is_fused_output(const std::string& t) const {
    for (const auto* b : plan_.buffers) {
      if (b->kind == BufferKind::fuse_consumer && b->fused->output.name == t && owns(*b)) return true;
    }
    return false;
  }

  void line(const std::string& s) { os_ << std::string(2 * depth_, ' ') << s << '\n'; }
  void open(const std::string& s) {
    line(s);
    ++depth_;
  }
  void close() {
    --depth_;
    line("}");
  }

  std::string var(const std::string& label) {
    auto it = vars_.find(label);
    if (it != vars_.end()) return it->second;
    std::string v = usable_name(label) ? label : "sk_l" + std::to_string(vars_.size()) + "_" + sanitize(label);
    return vars_.emplace(label, v).first->second;
  }

  Affine axis(const AffineIndex& ax) const {
    Affine a;
    a.c = ax.offset;
    for (std::size_t d = 0; d < ax.coeff.size(); ++d) a.add(dim_[d], ax.coeff[d]);
    return a;
  }

  std::string index(const Ctx& c, const TensorAccess& acc) const {
    Affine idx;
    for (std::size_t a = 0; a < acc.axes.size(); ++a) {
      idx.add(axis(acc.axes[a]), c.strides[a]);
      idx.add(c.origin[a], -c.strides[a]);
    }
    return c.name + "[" + idx.str() + "]";
  }

  std::string guard() const {
    const auto& shape = graph_.tensor(op_.inputs[0]).shape;
    std::vector<std::string> parts;
    for (std::size_t a = 0; a < shape.size(); ++a) {
      const std::string v = axis(p_.access[0].axes[a]).str();
      parts.push_back(v + " >= 0 && " + v + " < " + std::to_string(shape[a]));
    }
    return util::join(parts, " && ");
  }

  void body() {
    const Ctx& out = stack_.back().back();
    const std::string o = index(out, p_.access.back());
    auto in = [&](std::size_t s) { return index(stack_[s].back(), p_.access[s]); };
    switch (op_.kind) {
      case OpKind::matmul:
      case OpKind::conv2d:
        line(o + " += " + in(0) + " * " + in(1) + ";");
        break;
      case OpKind::relu:
        line(o + " = " + in(0) + " > 0 ? " + in(0) + " : 0;");
        break;
      case OpKind::transpose:
        line(o + " = " + in(0) + ";");
        break;
      case OpKind::padding:
        line(o + " = (" + guard() + ") ? " + in(0) + " : 0;");
        break;
    }
  }

  void root(const lower::RootPlan& r, std::size_t i) {
    if (i == r.loops.size()) {
      if (r.children.empty()) {
        body();
      } else {
        for (const auto& c : r.children) {
          line("/* " + c.name + " */");
          root(c, 0);
        }
      }
      return;
    }
    const lower::LoopPlan& lp = r.loops[i];
    const Loop& l = lp.loop;
    const std::int64_t trip = l.trip();
    std::int64_t unroll = l.ann.vectorize ? 1 : std::max<std::int64_t>(1, l.ann.unroll);
    if (trip % unroll != 0) unroll = 1;
    const bool fully = trip == 1 || (unroll == trip && !l.ann.parallel);
    if (fully) {
      for (std::int64_t t = 0; t < trip; ++t) {
        dim_[l.dim].c += l.lower + t * l.step;
        iteration(r, i);
        dim_[l.dim].c -= l.lower + t * l.step;
      }
      return;
    }
    const std::string v = var(l.label);
    if (l.ann.vectorize) line("SK_VECTORIZE");
    if (l.ann.parallel && !in_parallel_) {
      line("SK_PARALLEL");
      used_parallel_ = true;
    }
    const bool was = in_parallel_;
    in_parallel_ |= l.ann.parallel;
    const std::int64_t step = l.step * unroll;
    open("for (int64_t " + v + " = " + std::to_string(l.lower) + "; " + v + " < " +
         std::to_string(l.upper) + "; " + (step == 1 ? v + "++" : v + " += " + std::to_string(step)) +
         ") {");
    for (std::int64_t u = 0; u < unroll; ++u) {
      dim_[l.dim].add(v, 1);
      dim_[l.dim].c += u * l.step;
      iteration(r, i);
      dim_[l.dim].c -= u * l.step;
      dim_[l.dim].add(v, -1);
    }
    close();
    in_parallel_ = was;
  }

  void iteration(const lower::RootPlan& r, std::size_t i) {
    const auto& bufs = r.loops[i].buffers;
    if (bufs.empty()) {
      root(r, i + 1);
      return;
    }
    open("{");
    for (const auto& b : bufs) enter(b);
    root(r, i + 1);
    for (auto it = bufs.rbegin(); it != bufs.rend(); ++it) leave(*it);
    close();
  }

  template <class F>
  void walk(const lower::ProjRoot& p, std::size_t i, int id, F&& f) {
    if (i == p.loops.size()) {
      if (p.children.empty()) {
        f();
      } else {
        for (const auto& c : p.children) walk(c, 0, id, f);
      }
      return;
    }
    const Loop& l = p.loops[i];
    if (l.trip() == 1) {
      dim_[l.dim].c += l.lower;
      walk(p, i + 1, id, f);
      dim_[l.dim].c -= l.lower;
      return;
    }
    const std::string v = "sk_f" + std::to_string(id) + "_" + std::to_string(walk_depth_++);
    open("for (int64_t " + v + " = " + std::to_string(l.lower) + "; " + v + " < " +
         std::to_string(l.upper) + "; " +
         (l.step == 1 ? v + "++" : v + " += " + std::to_string(l.step)) + ") {");
    dim_[l.dim].add(v, 1);
    walk(p, i + 1, id, f);
    dim_[l.dim].add(v, -1);
    close();
    --walk_depth_;
  }

  std::string buffer_name(const lower::BufferPlan& b) const { return "sk_b" + std::to_string(b.id); }

  void enter(const lower::BufferPlan& b) {
    const TensorAccess& acc = p_.access[b.slot];
    const std::string name = buffer_name(b);
    const std::int64_t bytes = b.elements() * static_cast<std::int64_t>(dtype_size(op_.output.dtype));
    line("/* " + buffer_comment(b) + " */");
    if (bytes > kStackScratchBytes) {
      line(type_ + "* restrict " + name + " = (" + type_ + "*)malloc(" + std::to_string(bytes) + ");");
    } else {
      line(type_ + " " + name + "[" + std::to_string(b.elements()) + "];");
    }
    Ctx c;
    c.name = name;
    c.strides = b.strides;
    for (std::size_t a = 0; a < acc.axes.size(); ++a) {
      const std::string o = "sk_o" + std::to_string(b.id) + "_" + std::to_string(a);
      Affine e = axis(acc.axes[a]);
      e.c += b.box.origin_min[a];
      line("const int64_t " + o + " = " + e.str() + ";");
      Affine ov;
      ov.add(o, 1);
      c.origin.push_back(ov);
    }
    const Ctx src = stack_[b.slot].back();
    const bool guarded = op_.guarded_input() && b.slot == 0;
    walk_depth_ = 0;
    switch (b.kind) {
      case BufferKind::pack:
      case BufferKind::write:
        walk(b.walk, 0, b.id, [&] {
          const std::string s = index(c, acc) + " = " + index(src, acc) + ";";
          line(guarded ? "if (" + guard() + ") " + s : s);
        });
        break;
      case BufferKind::fuse_consumer:
        walk(b.walk, 0, b.id, [&] { line(index(c, acc) + " = 0;"); });
        break;
      case BufferKind::fuse_producer:
        walk(b.walk, 0, b.id, [&] { line(index(c, acc) + " = " + producer_value(b, acc) + ";"); });
        break;
    }
    stack_[b.slot].push_back(c);
  }

  // The inlined elementwise producer evaluated at the element `acc` reaches.
  std::string producer_value(const lower::BufferPlan& b, const TensorAccess& acc) const {
    const OpNode& p = *b.fused;
    const TensorSpec& xs = graph_.tensor(p.inputs[0]);
    const auto xstr = lower::row_major(xs.shape);
    const TensorAccess pin = p.input_accesses()[0];
    std::vector<Affine> e;
    for (const auto& ax : acc.axes) e.push_back(axis(ax));
    Affine idx;
    std::vector<std::string> conds;
    for (std::size_t a = 0; a < pin.axes.size(); ++a) {
      Affine v;
      v.c = pin.axes[a].offset;
      for (std::size_t d = 0; d < pin.axes[a].coeff.size(); ++d) v.add(e[d], pin.axes[a].coeff[d]);
      idx.add(v, xstr[a]);
      if (p.guarded_input()) {
        conds.push_back(v.str() + " >= 0 && " + v.str() + " < " + std::to_string(xs.shape[a]));
      }
    }
    std::string x = names_.tensor.at(p.inputs[0]) + "[" + idx.str() + "]";
    if (p.kind == OpKind::relu) x = "(" + x + " > 0 ? " + x + " : 0)";
    if (conds.empty()) return x;
    return "(" + util::join(conds, " && ") + ") ? " + x + " : 0";
  }

  void leave(const lower::BufferPlan& b) {
    const TensorAccess& acc = p_.access[b.slot];
    auto& st = stack_[b.slot];
    const Ctx c = st.back();
    st.pop_back();
    walk_depth_ = 0;
    if (b.kind == BufferKind::write) {
      const Ctx& dst = st.back();
      walk(b.walk, 0, b.id, [&] { line(index(dst, acc) + " = " + index(c, acc) + ";"); });
    } else if (b.kind == BufferKind::fuse_consumer) {
      Ctx out;
      out.name = names_.tensor.at(b.fused->output.name);
      out.strides = lower::row_major(b.fused->output.shape);
      out.origin.assign(out.strides.size(), Affine{});
      walk(b.walk, 0, b.id, [&] {
        const std::string v = index(c, acc);
        line(index(out, acc) + " = " + v + " > 0 ? " + v + " : 0;");
      });
    }
    const std::int64_t bytes = b.elements() * static_cast<std::int64_t>(dtype_size(op_.output.dtype));
    if (bytes > kStackScratchBytes) line("free(" + buffer_name(b) + ");");
  }

  std::string buffer_comment(const lower::BufferPlan& b) const {
    switch (b.kind) {
      case BufferKind::pack: return "pack " + b.tensor + " at " + b.at;
      case BufferKind::write: return "buffer " + b.tensor + " at " + b.at;
      case BufferKind::fuse_producer: return "fuse-producer " + b.fused->id + " at " + b.at;
      case BufferKind::fuse_consumer: return "fuse-consumer " + b.fused->id + " at " + b.at;
    }
    return "";
  }

 public:
  bool used_parallel() const { return used_parallel_; }

 private:
  const Graph& graph_;
  const lower::GraphPlan& plan_;
  const lower::OpPlan& p_;
  const OpNode& op_;
  const Names& names_;
  std::ostringstream& os_;
  std::string type_;
  std::vector<Affine> dim_;
  std::vector<std::vector<Ctx>> stack_;
  std::map<std::string, std::string> vars_;
  int depth_ = 0;
  int walk_depth_ = 0;
  bool in_parallel_ = false;
  bool used_parallel_ = false;
};

const char* kPrelude = R"SK(#include <stdint.h>
#include <stdlib.h>
#include <string.h>

#if defined(SK_USE_OMP_SIMD)
#define SK_VECTORIZE _Pragma("omp simd")
#elif defined(__clang__)
#define SK_VECTORIZE _Pragma("clang loop vectorize(enable) interleave(enable)")
#elif defined(__GNUC__)
#define SK_VECTORIZE _Pragma("GCC ivdep")
#else
#define SK_VECTORIZE
#endif

#if defined(_OPENMP)
#define SK_PARALLEL _Pragma("omp parallel for")
#else
#define SK_PARALLEL
#endif

)SK";

}  // namespace

std::string emit_c(const Graph& graph, const Schedule& schedule) {
  if (!usable_name(graph.name)) {
    fail("graph name " + util::quote(graph.name) + " is not a valid C identifier");
  }
  const lower::GraphPlan plan = lower::make_plan(graph, schedule);
  Names names;
  std::set<std::string> used;
  auto name_tensor = [&](const std::string& t) {
    std::string n = "t_" + sanitize(t);
    for (int k = 1; used.count(n); ++k) n = "t_" + sanitize(t) + "_" + std::to_string(k);
    used.insert(n);
    names.tensor[t] = n;
  };
  for (const auto& t : graph.inputs) name_tensor(t.name);
  for (const auto& op : graph.nodes) name_tensor(op.output.name);

  std::ostringstream body;
  std::vector<std::string> fns;
  std::vector<std::vector<std::string>> fn_params;
  bool parallel = false;
  for (std::size_t k = 0; k < plan.ops.size(); ++k) {
    const std::string fn = "sk_op" + std::to_string(k) + "_" + sanitize(plan.ops[k].op->id);
    OpEmitter e(graph, plan, plan.ops[k], names, body);
    e.emit(fn);
    parallel |= e.used_parallel();
    fns.push_back(fn);
    fn_params.push_back(e.params());
  }

  std::ostringstream os;
  os << "/* schedkit: graph " << graph.name << ", schedule " << schedule.digest() << " */\n";
  os << kPrelude;
  if (parallel) os << "#define SK_HAS_PARALLEL 1\n\n";
  os << body.str();

  std::vector<std::string> abi;
  for (const auto& t : graph.inputs) {
    abi.push_back(std::string("const ") + c_type(t.dtype) + "* restrict " + names.tensor.at(t.name));
  }
  for (const auto& o : graph.outputs) {
    abi.push_back(std::string(c_type(graph.tensor(o).dtype)) + "* restrict " + names.tensor.at(o));
  }
  os << "void " << graph.name << "(" << util::join(abi, ", ") << ") {\n";
  for (const auto& t : plan.intermediates) {
    const std::string n = names.tensor.at(t.name);
    os << "  " << c_type(t.dtype) << "* " << n << " = (" << c_type(t.dtype) << "*)malloc("
       << t.num_elements() << " * sizeof(" << c_type(t.dtype) << "));\n";
  }
  for (std::size_t k = 0; k < fns.size(); ++k) {
    std::vector<std::string> args;
    for (const auto& t : fn_params[k]) args.push_back(names.tensor.at(t));
    os << "  " << fns[k] << "(" << util::join(args, ", ") << ");\n";
  }
  for (const auto& t : plan.intermediates) os << "  free(" << names.tensor.at(t.name) << ");\n";
  os << "}\n\n";

  std::vector<std::string> casts;
  std::size_t p = 0;
  for (const auto& t : graph.inputs) {
    casts.push_back(std::string("(const ") + c_type(t.dtype) + "*)params[" + std::to_string(p++) + "]");
  }
  for (const auto& o : graph.outputs) {
    casts.push_back(std::string("(") + c_type(graph.tensor(o).dtype) + "*)params[" +
                    std::to_string(p++) + "]");
  }
  os << "void sk_invoke_" << graph.name << "(void* const* params) {\n";
  os << "  " << graph.name << "(" << util::join(casts, ", ") << ");\n";
  os << "}\n";
  return os.str();
}

Toolchain Toolchain::from_env() {
  Toolchain t;
  if (const char* cc = std::getenv("SCHEDKIT_CC"); cc && *cc) t.cc = cc;
  if (const char* f = std::getenv("SCHEDKIT_CFLAGS")) {
    t.flags.clear();
    std::istringstream is(f);
    for (std::string w; is >> w;) t.flags.push_back(w);
  }
  return t;
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

bool Toolchain::available() const {
  const std::string cmd = shell_quote(cc) + " --version >/dev/null 2>&1";
  return std::system(cmd.c_str()) == 0;
}

CModule::~CModule() {
  if (handle_) dlclose(handle_);
}

CModule::CModule(CModule&& o) noexcept
    : graph_(o.graph_), source_(std::move(o.source_)), command_(std::move(o.command_)),
      handle_(o.handle_), entry_(o.entry_), invoke_(o.invoke_) {
  o.handle_ = nullptr;
}

void CModule::invoke(void* const* params) const { invoke_(params); }

CModule compile_c(const Graph& graph, const std::string& source, const Toolchain& toolchain) {
  if (!toolchain.available()) {
    throw ToolchainError("C compiler " + util::quote(toolchain.cc) + " is not available");
  }
  namespace fs = std::filesystem;
  std::string tmpl = (fs::temp_directory_path() / "schedkit-XXXXXX").string();
  if (!mkdtemp(tmpl.data())) fail("cannot create a temporary directory");
  const fs::path dir(tmpl);
  const fs::path src = dir / (graph.name + ".c");
  const fs::path lib = dir / ("lib" + graph.name + ".so");
  const fs::path log = dir / "cc.log";
  {
    std::ofstream out(src);
    out << source;
  }
  std::vector<std::string> args{toolchain.cc};
  args.insert(args.end(), toolchain.flags.begin(), toolchain.flags.end());
  if (source.find("#define SK_HAS_PARALLEL 1") != std::string::npos) {
    args.insert(args.end(), toolchain.parallel_flags.begin(), toolchain.parallel_flags.end());
  }
  for (const char* a : {"-std=c99", "-shared", "-fPIC", "-o"}) args.emplace_back(a);
  args.push_back(lib.string());
  args.push_back(src.string());
  std::vector<std::string> quoted;
  for (const auto& a : args) quoted.push_back(shell_quote(a));
  const std::string command = util::join(args, " ");
  const std::string cmd = util::join(quoted, " ") + " >" + shell_quote(log.string()) + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc != 0) {
    const std::string diag = read_all(log);
    std::error_code ec;
    fs::remove_all(dir, ec);
    fail("compilation failed (" + command + "):\n" + diag);
  }
  CModule m;
  m.graph_ = &graph;
  m.source_ = source;
  m.command_ = command;
  m.handle_ = dlopen(lib.c_str(), RTLD_NOW | RTLD_LOCAL);
  std::error_code ec;
  if (!m.handle_) {
    const std::string why = dlerror();
    fs::remove_all(dir, ec);
    fail("cannot load " + lib.string() + ": " + why);
  }
  fs::remove_all(dir, ec);
  m.entry_ = dlsym(m.handle_, graph.name.c_str());
  void* inv = dlsym(m.handle_, ("sk_invoke_" + graph.name).c_str());
  if (!m.entry_ || !inv) fail("entry symbol " + util::quote(graph.name) + " not found");
  m.invoke_ = reinterpret_cast<void (*)(void* const*)>(inv);
  return m;
}

CModule compile_c(const Graph& graph, const Schedule& schedule, const Toolchain& toolchain) {
  return compile_c(graph, emit_c(graph, schedule), toolchain);
}

}  // namespace schedkit
