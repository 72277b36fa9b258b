// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "schedkit/error.hpp"
#include "schedkit/scheduler.hpp"

using namespace schedkit;

namespace {

Graph matmul_graph(std::int64_t i, std::int64_t j, std::int64_t k) {
  GraphBuilder b("mm_graph");
  b.tensor("A", {i, k});
  b.tensor("B", {k, j});
  b.matmul("mm0", "A", "B");
  return b.build();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void apply_reference_sequence(Scheduler& sch) {
  sch.set_dims({"I", "J", "K"});
  sch.split("mm0", "J", {{"J[0]", 0}, {"J[1]", 256}});
  sch.strip_mine("J[0]", "K", {{"K1", 4}});
  sch.strip_mine("J[0]", "J", {{"J1", 16}});
  sch.unroll("J[0]", {{"J1", 16}, {"K1", 4}});
  sch.vectorize("J[0]", {"J1"});
  sch.interchange("mm0", {"I", "J[0]", "J[1]"});
  sch.interchange("J[0]", {"K", "K1", "J1"});
  sch.interchange("J[1]", {"K"});
}

using Points = std::vector<std::vector<std::int64_t>>;

Points sorted(Points p) {
  std::sort(p.begin(), p.end());
  return p;
}

const Loop& loop_named(const Root& r, const std::string& label) {
  for (const auto& l : r.loops) {
    if (l.label == label) return l;
  }
  throw std::runtime_error("no loop " + label);
}

}  // namespace

TEST(Scheduler, ReferenceSequenceMatchesGolden) {
  const Graph g = matmul_graph(256, 258, 512);
  Scheduler sch(g);
  apply_reference_sequence(sch);
  EXPECT_EQ(sch.schedule().render(), read_file(SCHEDKIT_TEST_DATA "/mm_graph.render"));
}

TEST(Scheduler, ScheduleFileMatchesApi) {
  const Graph g = parse_graph(nlohmann::json::parse(read_file(SCHEDKIT_TEST_DATA "/mm_graph.json")));
  const auto doc = nlohmann::ordered_json::parse(read_file(SCHEDKIT_TEST_DATA "/mm_graph.schedule.json"));
  const Schedule from_file = parse_schedule(g, doc);
  Scheduler sch(g);
  apply_reference_sequence(sch);
  const Schedule from_api = sch.schedule();
  EXPECT_EQ(from_file.render(), from_api.render());
  EXPECT_EQ(from_file.digest(), from_api.digest());
  EXPECT_EQ(from_api.to_json(), doc);
}

TEST(Scheduler, ReplayIsByteIdentical) {
  const Graph g = matmul_graph(256, 258, 512);
  Scheduler sch(g);
  apply_reference_sequence(sch);
  const Schedule s = sch.schedule();
  const auto text = s.to_json().dump();
  const Schedule again = parse_schedule(g, nlohmann::ordered_json::parse(text));
  EXPECT_EQ(again.render(), s.render());
  EXPECT_EQ(again.to_json().dump(), text);
}

TEST(SetDims, Validation) {
  const Graph g = matmul_graph(4, 4, 4);
  Scheduler sch(g);
  EXPECT_NO_THROW(sch.set_dims({"I", "J", "K"}));
  EXPECT_THROW(sch.set_dims({"I", "J"}), Error);
  EXPECT_THROW(sch.set_dims({"I", "J", "Q"}), Error);
  const auto before = sch.schedule().render();
  EXPECT_NO_THROW(sch.set_dims({"I", "K", "J"}));
  EXPECT_EQ(sch.schedule().render(), before);
}

TEST(Split, Segments) {
  const Graph g = matmul_graph(4, 4, 512);
  Scheduler sch(g);
  const auto roots = sch.split("mm0", "K", {{"A", 0}, {"B", 128}, {"C", 192}});
  EXPECT_EQ(roots, (std::vector<std::string>{"A", "B", "C"}));
  // Oracle: segment i spans [start_i, start_{i+1}) and the last ends at the extent.
  const std::vector<std::pair<std::int64_t, std::int64_t>> expect{{0, 128}, {128, 192}, {192, 512}};
  for (std::size_t s = 0; s < roots.size(); ++s) {
    const Loop& k = sch.root(roots[s]).loops.front();
    EXPECT_EQ(k.lower, expect[s].first);
    EXPECT_EQ(k.upper, expect[s].second);
  }
}

TEST(Split, SingleSegmentIsIdentity) {
  const Graph g = matmul_graph(4, 4, 4);
  Scheduler sch(g);
  sch.split("mm0", "J", {{"all", 0}});
  Points before = enumerate_points(initial_nest(g.op("mm0")));
  EXPECT_EQ(enumerate_points(sch.schedule().nest("mm0")), before);
}

TEST(Split, Errors) {
  const Graph g = matmul_graph(8, 16, 8);
  Scheduler sch(g);
  EXPECT_THROW(sch.split("mm0", "J", {{"a", 0}, {"b", 8}, {"c", 4}}), Error);
  EXPECT_THROW(sch.split("mm0", "J", {{"a", 1}, {"b", 8}}), Error);
  EXPECT_THROW(sch.split("mm0", "J", {{"a", 0}, {"b", 16}}), Error);
  EXPECT_THROW(sch.split("mm0", "Q", {{"a", 0}}), Error);
  EXPECT_THROW(sch.split("nope", "J", {{"a", 0}}), Error);
  EXPECT_THROW(sch.split("mm0", "J", {{"a", 0}, {"a", 8}}), Error);
  sch.strip_mine("mm0", "J", {{"J1", 8}});
  sch.vectorize("mm0", {"J1"});
  EXPECT_THROW(sch.split("mm0", "J", {{"a", 0}, {"b", 8}}), Error);
}

TEST(Split, PreservesPoints) {
  const Graph g = matmul_graph(3, 7, 5);
  Scheduler sch(g);
  const Points before = sorted(enumerate_points(sch.schedule().nest("mm0")));
  sch.split("mm0", "J", {{"x", 0}, {"y", 2}, {"z", 5}});
  sch.split("y", "K", {{"y0", 0}, {"y1", 1}});
  EXPECT_EQ(sorted(enumerate_points(sch.schedule().nest("mm0"))), before);
}

TEST(StripMine, MainBlockTile) {
  const Graph g = matmul_graph(256, 258, 512);
  Scheduler sch(g);
  sch.split("mm0", "J", {{"J[0]", 0}, {"J[1]", 256}});
  EXPECT_TRUE(sch.strip_mine("J[0]", "J", {{"J1", 16}}).empty());
  const Root& r = sch.root("J[0]");
  EXPECT_EQ(loop_named(r, "J").step, 16);
  EXPECT_EQ(loop_named(r, "J").trip(), 16);
  EXPECT_EQ(loop_named(r, "J1").trip(), 16);
  EXPECT_TRUE(r.children.empty());
}

TEST(StripMine, Epilogue) {
  GraphBuilder b("g");
  b.tensor("x", {10});
  b.relu("r", "x");
  const Graph g = b.build();
  Scheduler sch(g);
  const auto roots = sch.strip_mine("r", "D0", {{"t", 4}});
  ASSERT_EQ(roots, (std::vector<std::string>{"D0[0]", "D0[1]"}));
  // Oracle: 10 = 2 * 4 + 2, main block [0,8) tiled, tail [8,10).
  const Root& main = sch.root("D0[0]");
  EXPECT_EQ(main.loops[0].lower, 0);
  EXPECT_EQ(main.loops[0].upper, 8);
  EXPECT_EQ(main.loops[0].step, 4);
  EXPECT_EQ(loop_named(main, "t").trip(), 4);
  const Root& tail = sch.root("D0[1]");
  EXPECT_EQ(tail.loops[0].lower, 8);
  EXPECT_EQ(tail.loops[0].upper, 10);
  EXPECT_EQ(tail.loops.size(), 1u);
  Points expect;
  for (std::int64_t v = 0; v < 10; ++v) expect.push_back({v});
  EXPECT_EQ(enumerate_points(sch.schedule().nest("r")), expect);
}

TEST(StripMine, NestedTilesAreSpans) {
  GraphBuilder b("g");
  b.tensor("x", {256});
  b.relu("r", "x", {"i"});
  const Graph g = b.build();
  Scheduler sch(g);
  sch.strip_mine("r", "i", {{"i1", 64}, {"i2", 64}, {"i3", 4}});
  const Root& r = sch.root("r");
  EXPECT_EQ(loop_named(r, "i").trip(), 4);
  EXPECT_EQ(loop_named(r, "i1").trip(), 1);
  EXPECT_EQ(loop_named(r, "i2").trip(), 16);
  EXPECT_EQ(loop_named(r, "i3").trip(), 4);
  Points expect;
  for (std::int64_t v = 0; v < 256; ++v) expect.push_back({v});
  EXPECT_EQ(enumerate_points(sch.schedule().nest("r")), expect);
}

TEST(StripMine, Errors) {
  const Graph g = matmul_graph(8, 16, 8);
  Scheduler sch(g);
  EXPECT_THROW(sch.strip_mine("mm0", "J", {{"J1", 0}}), Error);
  EXPECT_THROW(sch.strip_mine("mm0", "Q", {{"Q1", 2}}), Error);
  EXPECT_THROW(sch.strip_mine("nope", "J", {{"J1", 2}}), Error);
  EXPECT_THROW(sch.strip_mine("mm0", "J", {{"J1", 32}}), Error);
  EXPECT_THROW(sch.strip_mine("mm0", "J", {{"J1", 8}, {"J2", 3}}), Error);
  EXPECT_THROW(sch.strip_mine("mm0", "J", {{"I", 4}}), Error);
  sch.strip_mine("mm0", "J", {{"J1", 8}});
  EXPECT_THROW(sch.strip_mine("mm0", "J", {{"J1", 4}}), Error);
  // Tiling a tile must divide its span.
  EXPECT_THROW(sch.strip_mine("mm0", "J", {{"J2", 3}}), Error);
  EXPECT_NO_THROW(sch.strip_mine("mm0", "J", {{"J2", 4}}));

  // The finest loop of the dim moved into split roots.
  Scheduler s2(g);
  s2.strip_mine("mm0", "J", {{"J1", 8}});
  s2.interchange("mm0", {"J", "K", "I", "J1"});
  s2.split("mm0", "K", {{"lo", 0}, {"hi", 3}});
  EXPECT_THROW(s2.strip_mine("mm0", "J", {{"J2", 8}}), Error);
  EXPECT_NO_THROW(s2.strip_mine("lo", "J", {{"J2", 4}}));
}

TEST(Interchange, Basic) {
  const Graph g = matmul_graph(256, 258, 512);
  Scheduler sch(g);
  const auto before = sch.schedule().render();
  sch.interchange("mm0", {"I", "J", "K"});
  EXPECT_EQ(sch.schedule().render(), before);
  EXPECT_THROW(sch.interchange("mm0", {"I", "J"}), Error);
  EXPECT_THROW(sch.interchange("mm0", {"I", "J", "J"}), Error);
  EXPECT_THROW(sch.interchange("mm0", {"I", "J", "Q"}), Error);
}

TEST(Interchange, RootsStaySeparate) {
  const Graph g = matmul_graph(256, 258, 512);
  Scheduler sch(g);
  sch.split("mm0", "J", {{"J[0]", 0}, {"J[1]", 256}});
  sch.strip_mine("J[0]", "K", {{"K1", 4}});
  EXPECT_THROW(sch.interchange("J[1]", {"K1"}), Error);
  EXPECT_THROW(sch.interchange("mm0", {"J[0]", "I", "J[1]"}), Error);
  EXPECT_THROW(sch.interchange("mm0", {"I", "J[1]", "J[0]"}), Error);
  EXPECT_THROW(sch.interchange("J[0]", {"J", "K", "K1"}), Error);
  EXPECT_NO_THROW(sch.interchange("J[0]", {"K1", "K"}));
}

TEST(Unroll, Rules) {
  GraphBuilder b("g");
  b.tensor("x", {4, 6});
  b.relu("r", "x");
  const Graph g = b.build();
  Scheduler sch(g);
  EXPECT_THROW(sch.unroll("r", {{"D0", 3}}), Error);
  EXPECT_THROW(sch.unroll("r", {{"D0", 0}}), Error);
  EXPECT_THROW(sch.unroll("r", {{"Q", 2}}), Error);
  const auto before = sch.schedule().render();
  sch.unroll("r", {{"D0", 1}});
  EXPECT_EQ(sch.schedule().render(), before);
  sch.unroll("r", {{"D0", 4}, {"D1", 3}});
  EXPECT_NE(sch.schedule().render().find("for D1 in [0,6) step 1 {unroll(3)}"), std::string::npos);
}

TEST(Vectorize, Rules) {
  GraphBuilder b("g");
  b.tensor("x", {4, 48});
  b.relu("r", "x");
  const Graph g = b.build();
  {
    Scheduler sch(g);
    sch.strip_mine("r", "D1", {{"v", 12}});
    EXPECT_THROW(sch.vectorize("r", {"v"}), Error);
  }
  {
    Scheduler sch(g);
    sch.strip_mine("r", "D1", {{"v", 8}});
    sch.vectorize("r", {"v"});
    EXPECT_NO_THROW(sch.schedule());
    sch.interchange("r", {"D0", "v", "D1"});
    EXPECT_THROW(sch.schedule(), Error);
  }
  {
    Scheduler sch(g);
    sch.strip_mine("r", "D1", {{"v", 16}});
    sch.vectorize("r", {"v"});
    EXPECT_NO_THROW(sch.schedule());
    sch.strip_mine("r", "D1", {{"w", 8}});
    EXPECT_THROW(sch.schedule(), Error);
  }
  const Graph mm = matmul_graph(8, 8, 16);
  Scheduler sch(mm);
  sch.interchange("mm0", {"I", "J", "K"});
  EXPECT_THROW(sch.vectorize("mm0", {"K"}), Error);
}

TEST(Parallelize, Rules) {
  GraphBuilder b("matmul_relu");
  b.tensor("a", {16, 8});
  b.tensor("b", {8, 32});
  b.matmul("matmul", "a", "b", {"i", "j", "k"});
  const Graph g = b.build();
  Scheduler sch(g);
  sch.strip_mine("matmul", "j", {{"j3", 8}});
  EXPECT_THROW(sch.parallelize("matmul", {"k"}), Error);
  EXPECT_THROW(sch.parallelize("matmul", {"j3"}), Error);
  EXPECT_THROW(sch.parallelize("matmul", {"j"}), Error);
  EXPECT_NO_THROW(sch.parallelize("matmul", {"i", "j"}));
  EXPECT_NO_THROW(sch.schedule());
  sch.interchange("matmul", {"k", "i", "j", "j3"});
  EXPECT_THROW(sch.schedule(), Error);
}

TEST(Pack, Validation) {
  const Graph g = matmul_graph(8, 8, 8);
  Scheduler sch(g);
  EXPECT_THROW(sch.pack({"mm0", "Q", "A", {}}), Error);
  EXPECT_THROW(sch.pack({"mm0", "I", "C", {}}), Error);
  EXPECT_THROW(sch.pack({"mm0", "I", "A", {1}}), Error);
  EXPECT_THROW(sch.pack({"mm0", "I", "A", {0, -1}}), Error);
  EXPECT_THROW(sch.buffer_at({"mm0", "I", "A"}), Error);
  EXPECT_NO_THROW(sch.pack({"mm0", "J", "B", {0, 1}}));
  EXPECT_NO_THROW(sch.buffer_at({"mm0", "J", ""}));
  const auto text = sch.schedule().render();
  EXPECT_NE(text.find("    pack B pad=[0,1]\n"), std::string::npos);
  EXPECT_NE(text.find("    buffer mm0\n"), std::string::npos);
}

TEST(Pack, LocalMemoryBound) {
  const Graph g = matmul_graph(64, 64, 64);
  SchedulerConfig cfg;
  cfg.local_memory_bytes = 64 * 64 * 4 - 1;
  Scheduler sch(g, "", cfg);
  sch.pack({"mm0", "I", "B", {}});
  EXPECT_THROW(sch.schedule(), Error);
  Scheduler ok(g, "", cfg);
  ok.pack({"mm0", "J", "B", {}});
  EXPECT_NO_THROW(ok.schedule());
}

// Goto-style blocking: the A panel packed at the outer K loop covers exactly
// the (I tile) x (K tile) elements touched by one iteration.
TEST(Pack, FootprintMatchesBruteForce) {
  const Graph g = matmul_graph(12, 16, 20);
  Scheduler sch(g);
  sch.strip_mine("mm0", "I", {{"I1", 4}});
  sch.strip_mine("mm0", "K", {{"K1", 5}});
  sch.strip_mine("mm0", "J", {{"J1", 8}});
  sch.interchange("mm0", {"J", "K", "I", "I1", "K1", "J1"});
  sch.pack({"mm0", "K", "A", {}});
  const Schedule s = sch.schedule();
  const auto& nest = s.nest("mm0");
  const Root& r = nest.root;
  const auto& op = g.op("mm0");
  const auto box = buffer_box(op.input_accesses()[0], inner_ranges(r, 1, 3), {});
  EXPECT_EQ(box.extent, (std::vector<std::int64_t>{12, 5}));

  // First iteration of J and K = the first (points / (trip J * trip K)) points.
  const Points pts = enumerate_points(nest);
  const std::size_t per_iter = pts.size() / (r.loops[0].trip() * r.loops[1].trip());
  std::set<std::pair<std::int64_t, std::int64_t>> touched;
  for (std::size_t p = 0; p < per_iter; ++p) touched.insert({pts[p][0], pts[p][2]});
  EXPECT_EQ(static_cast<std::int64_t>(touched.size()), box.elements());
}

TEST(Fuse, Validation) {
  GraphBuilder b("matmul_relu");
  b.tensor("a", {8, 8});
  b.tensor("b", {8, 8});
  b.tensor("x", {8, 8});
  const auto m = b.matmul("matmul", "a", "b", {"i", "j", "k"});
  b.relu("relu", m);
  b.relu("other", "x");
  const Graph g = b.build();
  {
    Scheduler sch(g);
    EXPECT_THROW(sch.fuse({"matmul", "matmul", "other", "j"}), Error);
    EXPECT_THROW(sch.fuse({"matmul", "matmul", "relu", "k"}), Error);
    EXPECT_THROW(sch.fuse({"relu", "matmul", "relu", "D1"}), Error);
    sch.fuse({"matmul", "matmul", "relu", "j"});
    EXPECT_NE(sch.schedule().render().find("fuse-consumer relu matmul"), std::string::npos);
    EXPECT_FALSE(sch.has_root("relu") &&
                 sch.schedule().render().find("root relu") != std::string::npos);
    EXPECT_THROW(sch.strip_mine("relu", "D0", {{"t", 2}}), Error);
  }
  {
    Scheduler sch(g);
    sch.interchange("matmul", {"k", "i", "j"});
    EXPECT_THROW(sch.fuse({"matmul", "matmul", "relu", "j"}), Error);
  }
  {
    Scheduler sch(g);
    sch.buffer_at({"matmul", "i", ""});
    sch.fuse({"matmul", "matmul", "relu", "j"});
    EXPECT_THROW(sch.schedule(), Error);
  }
}

TEST(Fuse, ProducerIntoConsumer) {
  GraphBuilder b("g");
  b.tensor("x", {6, 6, 2});
  b.tensor("w", {3, 3, 2, 4});
  const auto p = b.padding("pad", "x", {1, 1, 0}, {1, 1, 0});
  b.conv2d("conv", p, "w");
  const Graph g = b.build();
  Scheduler sch(g, "conv");
  EXPECT_THROW(sch.fuse({"conv", "conv", "pad", "H"}), Error);
  sch.fuse({"conv", "pad", "conv", "W"});
  const Schedule s = sch.schedule();
  EXPECT_TRUE(s.fused_away.count("pad"));
  EXPECT_EQ(s.render().find("root pad"), std::string::npos);

  GraphBuilder b2("g2");
  b2.tensor("a", {4, 4});
  b2.tensor("c", {4, 4});
  const auto mm = b2.matmul("mm", "a", "c");
  b2.matmul("mm2", mm, "c");
  const Graph g2 = b2.build();
  Scheduler sch2(g2, "mm2");
  EXPECT_THROW(sch2.fuse({"mm2", "mm", "mm2", "I"}), Error);
}

TEST(Primitive, JsonAndDescribe) {
  const std::vector<Primitive> all{
      DimsSpec{"m", {"i", "j"}},
      SplitSpec{"m", "j", {{"a", 0}, {"b", 4}}},
      StripMineSpec{"m", "i", {{"i1", 64}, {"i2", 4}}},
      InterchangeSpec{"m", {"j", "i"}},
      UnrollSpec{"m", {{"i2", 4}}},
      VectorizeSpec{"m", {"j3"}},
      ParallelizeSpec{"m", {"i", "j"}},
      PackSpec{"m", "k", "A", {0, 1}},
      BufferSpec{"m", "j1", ""},
      FuseSpec{"m", "m", "r", "j"},
  };
  for (const auto& p : all) {
    const auto j = primitive_to_json(p);
    EXPECT_EQ(primitive_to_json(primitive_from_json(j)), j);
  }
  EXPECT_EQ(describe(all[2]), "strip_mine(root='m', dim='i', tiles={'i1': 64, 'i2': 4})");
  EXPECT_THROW(primitive_from_json(nlohmann::ordered_json{{"primitive", "tile"}}), Error);
  EXPECT_THROW(primitive_from_json(nlohmann::ordered_json{{"primitive", "split"}}), Error);
}

TEST(Primitive, FailedCallLeavesStateUntouched) {
  const Graph g = matmul_graph(8, 10, 8);
  Scheduler sch(g);
  sch.strip_mine("mm0", "I", {{"I1", 4}});
  const auto before = sch.schedule().render();
  const auto log_size = sch.log().size();
  EXPECT_THROW(sch.interchange("mm0", {"I", "I1", "K", "Q"}), Error);
  EXPECT_THROW(sch.strip_mine("mm0", "J", {{"J1", 4}, {"J2", 3}}), Error);
  EXPECT_THROW(sch.unroll("mm0", {{"I1", 2}, {"J", 3}}), Error);
  EXPECT_EQ(sch.schedule().render(), before);
  EXPECT_EQ(sch.log().size(), log_size);
}
