// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "schedkit/backend_c.hpp"
#include "schedkit/backend_interp.hpp"
#include "schedkit/error.hpp"
#include "support/random_schedule.hpp"

using namespace schedkit;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Graph mm_graph() {
  return parse_graph(nlohmann::json::parse(read_file(SCHEDKIT_TEST_DATA "/mm_graph.json")));
}

Schedule reference_schedule(const Graph& g) {
  return parse_schedule(
      g, nlohmann::ordered_json::parse(read_file(SCHEDKIT_TEST_DATA "/mm_graph.schedule.json")));
}

TensorMap random_inputs(const Graph& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> small(-3, 3);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  TensorMap in;
  for (const auto& spec : g.inputs) {
    Tensor t(spec);
    for (std::int64_t i = 0; i < t.size(); ++i) {
      t.set(i, spec.dtype == DType::int32 ? small(rng) : unit(rng));
    }
    in.emplace(spec.name, std::move(t));
  }
  return in;
}

double max_rel_error(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a.at(i) - b.at(i)) / std::max(1e-6, std::abs(b.at(i)));
    worst = std::max(worst, d);
  }
  return worst;
}

#define REQUIRE_TOOLCHAIN()                                       \
  if (!Toolchain::from_env().available()) GTEST_SKIP() << "no C compiler"

Graph small_graph(int which, DType dt) {
  GraphBuilder b("g" + std::to_string(which));
  switch (which) {
    case 0: {
      b.tensor("a", {6, 5}, dt);
      b.tensor("b", {5, 12}, dt);
      const auto m = b.matmul("matmul", "a", "b", {"i", "j", "k"});
      b.relu("relu", m);
      break;
    }
    case 1: {
      b.tensor("x", {7, 6, 2}, dt);
      b.tensor("w", {3, 3, 2, 4}, dt);
      const auto p = b.padding("pad", "x", {1, 1, 0}, {1, 0, 0});
      b.conv2d("conv", p, "w", {2, 1});
      break;
    }
    default: {
      b.tensor("x", {5, 8}, dt);
      b.tensor("y", {5, 3}, dt);
      const auto t = b.transpose("tr", "x");
      const auto r = b.relu("act", t);
      b.matmul("mm", r, "y");
      break;
    }
  }
  return b.build();
}

}  // namespace

TEST(EmitC, ReferenceScheduleMatchesGolden) {
  const Graph g = mm_graph();
  EXPECT_EQ(emit_c(g, reference_schedule(g)), read_file(SCHEDKIT_TEST_DATA "/mm_graph.c"));
}

TEST(EmitC, EmptyScheduleIsTripleLoop) {
  const Graph g = mm_graph();
  const std::string src = emit_c(g, Scheduler(g).schedule());
  const std::string loops =
      "  for (int64_t I = 0; I < 256; I++) {\n"
      "    for (int64_t J = 0; J < 258; J++) {\n"
      "      for (int64_t K = 0; K < 512; K++) {\n"
      "        t_C[258*I + J] += t_A[512*I + K] * t_B[258*K + J];\n";
  EXPECT_NE(src.find(loops), std::string::npos) << src;
  EXPECT_EQ(src.find("SK_VECTORIZE\n  "), std::string::npos);
}

TEST(EmitC, Deterministic) {
  const Graph g = small_graph(1, DType::float32);
  Scheduler sch(g, "conv");
  sch.fuse({"conv", "pad", "conv", "W"});
  EXPECT_EQ(emit_c(g, sch.schedule()), emit_c(g, sch.schedule()));
}

TEST(EmitC, RejectsBadGraphName) {
  GraphBuilder b("float");  // a C keyword
  b.tensor("x", {2});
  b.relu("r", "x");
  const Graph g = b.build();
  EXPECT_THROW(emit_c(g, Scheduler(g).schedule()), Error);
}

TEST(CompileC, MissingToolchain) {
  Toolchain t;
  t.cc = "/nonexistent/schedkit-cc";
  EXPECT_FALSE(t.available());
  const Graph g = mm_graph();
  EXPECT_THROW(compile_c(g, Scheduler(g).schedule(), t), ToolchainError);
}

TEST(CompileC, SurfacesDiagnostics) {
  REQUIRE_TOOLCHAIN();
  const Graph g = mm_graph();
  try {
    compile_c(g, std::string("void mm_graph(void) { undeclared_symbol(); }\n int x = ;\n"));
    FAIL() << "expected a compile error";
  } catch (const ToolchainError&) {
    FAIL() << "wrong error type";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("error"), std::string::npos) << e.what();
  }
}

TEST(CompileC, ReferenceScheduleMatchesInterp) {
  REQUIRE_TOOLCHAIN();
  const Graph g = mm_graph();
  const Schedule s = reference_schedule(g);
  const auto in = random_inputs(g, 1);
  const auto want = compile_interp(g, s).execute(in);
  const CModule m = compile_c(g, s);
  EXPECT_EQ(m.backend(), "c");
  EXPECT_LE(max_rel_error(m.execute(in).at("C"), want.at("C")), 1e-5);
}

TEST(CompileC, TrampolineMatchesTypedCall) {
  REQUIRE_TOOLCHAIN();
  const Graph g = mm_graph();
  const CModule m = compile_c(g, reference_schedule(g));
  const auto in = random_inputs(g, 2);
  const auto via_params = m.execute(in);
  Tensor out(g.tensor("C"));
  using Fn = void (*)(const float*, const float*, float*);
  reinterpret_cast<Fn>(m.entry())(in.at("A").as<float>().data(), in.at("B").as<float>().data(),
                                  out.as<float>().data());
  EXPECT_TRUE(out == via_params.at("C"));
}

TEST(CompileC, HeapScratchAndParallel) {
  REQUIRE_TOOLCHAIN();
  GraphBuilder b("big");
  b.tensor("A", {64, 512});
  b.tensor("B", {512, 64});
  b.matmul("mm", "A", "B");
  const Graph g = b.build();
  Scheduler sch(g);
  sch.strip_mine("mm", "I", {{"I1", 16}});
  sch.interchange("mm", {"I", "I1", "J", "K"});
  sch.pack({"mm", "I", "B", {}});  // 128 KiB
  sch.parallelize("mm", {"I"});
  const Schedule s = sch.schedule();
  const std::string src = emit_c(g, s);
  EXPECT_NE(src.find("malloc(131072)"), std::string::npos);
  EXPECT_NE(src.find("SK_PARALLEL"), std::string::npos);
  const CModule m = compile_c(g, s);
  EXPECT_NE(m.command().find("-fopenmp "), std::string::npos);
  const auto in = random_inputs(g, 3);
  EXPECT_LE(max_rel_error(m.execute(in).at(g.outputs[0]),
                          compile_interp(g, s).execute(in).at(g.outputs[0])),
            1e-5);
}

TEST(CompileC, FusionAndIntermediates) {
  REQUIRE_TOOLCHAIN();
  for (int which = 0; which < 3; ++which) {
    const Graph g = small_graph(which, DType::int32);
    Scheduler sch(g, g.nodes.back().id);
    if (which == 0) sch.fuse({"matmul", "matmul", "relu", "j"});
    if (which == 1) sch.fuse({"conv", "pad", "conv", "W"});
    const Schedule s = sch.schedule();
    const auto in = random_inputs(g, 4);
    const auto want = reference_execute(g, in);
    const auto got = compile_c(g, s).execute(in);
    for (const auto& [name, t] : want) EXPECT_TRUE(got.at(name) == t) << which << "\n" << emit_c(g, s);
  }
}

// Same random legal schedules on both backends (int32: exact).
TEST(CompileC, RandomSchedulesMatchInterp) {
  REQUIRE_TOOLCHAIN();
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    const Graph g = small_graph(static_cast<int>(seed % 3), DType::int32);
    Scheduler sch(g, g.nodes.back().id);
    test_support::RandomScheduler gen(g, 1000 + seed);
    gen.run(sch, 12);
    const Schedule s = sch.schedule();
    const auto in = random_inputs(g, seed);
    const auto want = compile_interp(g, s).execute(in);
    const auto got = compile_c(g, s).execute(in);
    for (const auto& [name, t] : want) {
      ASSERT_TRUE(got.at(name) == t) << "seed " << seed << "\n" << emit_c(g, s);
    }
  }
}
