// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "schedkit/error.hpp"
#include "schedkit/graph.hpp"

using namespace schedkit;

namespace {

Tensor make(const TensorSpec& spec, const std::vector<double>& values) {
  Tensor t(spec);
  for (std::size_t i = 0; i < values.size(); ++i) t.set(static_cast<std::int64_t>(i), values[i]);
  return t;
}

Tensor random_tensor(const TensorSpec& spec, std::mt19937& rng) {
  std::uniform_int_distribution<int> dist(-8, 8);
  Tensor t(spec);
  for (std::int64_t i = 0; i < t.size(); ++i) t.set(i, dist(rng) / 4.0);
  return t;
}

}  // namespace

TEST(Graph, MatmulDims) {
  GraphBuilder b("mm_graph");
  b.tensor("A", {256, 512});
  b.tensor("B", {512, 258});
  b.matmul("mm0", "A", "B");
  const Graph g = b.build();
  const auto& op = g.op("mm0");
  ASSERT_EQ(op.dims.size(), 3u);
  EXPECT_EQ(op.dims[0].name, "I");
  EXPECT_EQ(op.dims[0].extent, 256);
  EXPECT_EQ(op.dims[1].name, "J");
  EXPECT_EQ(op.dims[1].extent, 258);
  EXPECT_EQ(op.dims[2].name, "K");
  EXPECT_EQ(op.dims[2].extent, 512);
  EXPECT_EQ(op.dims[2].cls, DimClass::reduction);
  EXPECT_EQ(op.output.shape, (std::vector<std::int64_t>{256, 258}));
  EXPECT_EQ(g.outputs, std::vector<std::string>{"mm0"});
}

TEST(Graph, ReluHasNoReduction) {
  GraphBuilder b("g");
  b.tensor("x", {4, 4});
  b.relu("r", "x");
  const Graph g = b.build();
  const auto& op = g.op("r");
  EXPECT_EQ(op.dims.size(), 2u);
  EXPECT_FALSE(op.has_reduction());
}

TEST(Graph, ConvOutputExtents) {
  GraphBuilder b("g");
  b.tensor("x", {112, 112, 3});
  b.tensor("w", {7, 7, 3, 16});
  b.conv2d("c", "x", "w", {2, 2});
  const Graph g = b.build();
  // (112 - 7) / 2 + 1 = 53
  EXPECT_EQ(g.op("c").output.shape, (std::vector<std::int64_t>{53, 53, 16}));
  EXPECT_EQ(g.op("c").dims.size(), 6u);
}

TEST(Graph, ConvShapeFormulaAllStrides) {
  for (std::int64_t in = 1; in <= 12; ++in) {
    for (std::int64_t k = 1; k <= in; ++k) {
      for (std::int64_t s = 1; s <= 3; ++s) {
        GraphBuilder b("g");
        b.tensor("x", {in, in + 1, 2});
        b.tensor("w", {k, k, 2, 3});
        b.conv2d("c", "x", "w", {s, s});
        const auto shape = b.build().op("c").output.shape;
        std::int64_t expect_h = 0, expect_w = 0;
        for (std::int64_t o = 0; o * s + k <= in; ++o) expect_h = o + 1;
        for (std::int64_t o = 0; o * s + k <= in + 1; ++o) expect_w = o + 1;
        EXPECT_EQ(shape[0], expect_h);
        EXPECT_EQ(shape[1], expect_w);
      }
    }
  }
}

TEST(Graph, RejectsBadGraphs) {
  {
    GraphBuilder b("g");
    b.tensor("A", {2, 3});
    b.tensor("B", {4, 2});
    b.matmul("m", "A", "B");
    EXPECT_THROW(b.build(), Error);
  }
  {
    GraphBuilder b("g");
    b.tensor("A", {2, 3});
    b.tensor("A", {2, 3});
    b.relu("r", "A");
    EXPECT_THROW(b.build(), Error);
  }
  {
    GraphBuilder b("not-an-identifier");
    b.tensor("A", {2, 3});
    b.relu("r", "A");
    EXPECT_THROW(b.build(), Error);
  }
  GraphDesc desc;
  desc.name = "g";
  desc.tensors.push_back({"x", {4}, DType::float32});
  desc.ops.push_back({"r", "softmax", {"x"}, "", {}, {}});
  EXPECT_THROW(build_graph(desc), Error);
}

TEST(Graph, RejectsCyclesAndDanglingInputs) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    // A chain of relus, then one mutation.
    GraphDesc desc;
    desc.name = "chain";
    desc.tensors.push_back({"x", {3, 3}, DType::float32});
    const int n = 2 + static_cast<int>(rng() % 6);
    for (int i = 0; i < n; ++i) {
      desc.ops.push_back({"r" + std::to_string(i), "relu",
                          {i == 0 ? std::string("x") : "r" + std::to_string(i - 1)}, "", {}, {}});
    }
    EXPECT_NO_THROW(build_graph(desc));
    std::shuffle(desc.ops.begin(), desc.ops.end(), rng);
    EXPECT_NO_THROW(build_graph(desc));
    auto cyclic = desc;
    const int back = 1 + static_cast<int>(rng() % (n - 1));
    for (auto& op : cyclic.ops) {
      if (op.id == "r0") op.inputs = {"r" + std::to_string(back)};
    }
    EXPECT_THROW(build_graph(cyclic), Error);
    auto dangling = desc;
    dangling.ops[rng() % n].inputs = {"missing"};
    EXPECT_THROW(build_graph(dangling), Error);
  }
}

TEST(Graph, JsonRoundTrip) {
  const nlohmann::json doc = nlohmann::json::parse(R"({
    "name": "net",
    "tensors": [{"name": "x", "shape": [6, 6, 2]}, {"name": "w", "shape": [3, 3, 2, 4]}],
    "ops": [
      {"id": "pad", "kind": "padding", "inputs": ["x"], "attrs": {"low": [1, 1, 0], "high": [1, 1, 0]}},
      {"id": "conv", "kind": "conv2d", "inputs": ["pad", "w"], "attrs": {"stride": [1, 1]}},
      {"id": "act", "kind": "relu", "inputs": ["conv"]},
      {"id": "t", "kind": "transpose", "inputs": ["act"], "attrs": {"perm": [2, 0, 1]}}
    ]})");
  const Graph g = parse_graph(doc);
  EXPECT_EQ(g.op("pad").output.shape, (std::vector<std::int64_t>{8, 8, 2}));
  EXPECT_EQ(g.op("conv").output.shape, (std::vector<std::int64_t>{6, 6, 4}));
  EXPECT_EQ(g.op("t").output.shape, (std::vector<std::int64_t>{4, 6, 6}));
  const Graph again = parse_graph(graph_to_json(g));
  EXPECT_EQ(graph_to_json(again), graph_to_json(g));
}

TEST(Reference, Matmul2x2) {
  GraphBuilder b("g");
  b.tensor("A", {2, 2});
  b.tensor("B", {2, 2});
  b.matmul("m", "A", "B");
  const Graph g = b.build();
  TensorMap in;
  in["A"] = make(g.tensor("A"), {1, 2, 3, 4});
  in["B"] = make(g.tensor("B"), {5, 6, 7, 8});
  const auto out = reference_execute(g, in);
  const auto c = out.at("m").as<float>();
  // Brute-force triple loop by hand: row 0 = [1*5+2*7, 1*6+2*8], row 1 = [3*5+4*7, 3*6+4*8].
  EXPECT_EQ(std::vector<float>(c.begin(), c.end()), (std::vector<float>{19, 22, 43, 50}));
}

TEST(Reference, IdentityMatmul) {
  GraphBuilder b("g");
  b.tensor("A", {2, 2});
  b.tensor("B", {2, 3});
  b.matmul("m", "A", "B");
  const Graph g = b.build();
  TensorMap in;
  in["A"] = make(g.tensor("A"), {1, 0, 0, 1});
  in["B"] = make(g.tensor("B"), {1.5, -2, 3, 4, 5, -6.25});
  EXPECT_EQ(reference_execute(g, in).at("m"), in["B"]);
}

TEST(Reference, Relu) {
  GraphBuilder b("g");
  b.tensor("x", {3});
  b.relu("r", "x");
  const Graph g = b.build();
  TensorMap in;
  in["x"] = make(g.tensor("x"), {-1, 0, 2});
  const auto out = reference_execute(g, in);
  const auto r = out.at("r").as<float>();
  EXPECT_EQ(std::vector<float>(r.begin(), r.end()), (std::vector<float>{0, 0, 2}));
}

TEST(Reference, PaddingTransposeInt32) {
  GraphBuilder b("g");
  b.tensor("x", {2, 3}, DType::int32);
  const auto p = b.padding("p", "x", {1, 0}, {0, 2});
  b.transpose("t", p, {1, 0});
  const Graph g = b.build();
  TensorMap in;
  in["x"] = make(g.tensor("x"), {1, 2, 3, 4, 5, 6});
  const auto out = reference_execute(g, in).at("t");
  ASSERT_EQ(out.spec().shape, (std::vector<std::int64_t>{5, 3}));
  // padded = [[0,0,0,0,0],[1,2,3,0,0],[4,5,6,0,0]]; transposed row-major
  const auto v = out.as<std::int32_t>();
  EXPECT_EQ(std::vector<std::int32_t>(v.begin(), v.end()),
            (std::vector<std::int32_t>{0, 1, 4, 0, 2, 5, 0, 3, 6, 0, 0, 0, 0, 0, 0}));
}

TEST(Reference, ConvAgainstDirectSum) {
  GraphBuilder b("g");
  b.tensor("x", {5, 6, 2});
  b.tensor("w", {2, 3, 2, 3});
  b.conv2d("c", "x", "w", {2, 1});
  const Graph g = b.build();
  std::mt19937 rng(3);
  TensorMap in;
  in["x"] = random_tensor(g.tensor("x"), rng);
  in["w"] = random_tensor(g.tensor("w"), rng);
  const auto out = reference_execute(g, in).at("c");
  const auto& sh = out.spec().shape;
  for (std::int64_t oh = 0; oh < sh[0]; ++oh) {
    for (std::int64_t ow = 0; ow < sh[1]; ++ow) {
      for (std::int64_t f = 0; f < sh[2]; ++f) {
        double acc = 0;
        for (int kh = 0; kh < 2; ++kh) {
          for (int kw = 0; kw < 3; ++kw) {
            for (int c = 0; c < 2; ++c) {
              acc += in["x"].at(((oh * 2 + kh) * 6 + ow + kw) * 2 + c) *
                     in["w"].at(((kh * 3 + kw) * 2 + c) * 3 + f);
            }
          }
        }
        EXPECT_NEAR(out.at((oh * sh[1] + ow) * sh[2] + f), acc, 1e-5);
      }
    }
  }
}

TEST(Reference, DeterministicAcrossCalls) {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto pick = [&] { return static_cast<std::int64_t>(1 + rng() % 16); };
    GraphBuilder b("g");
    const std::int64_t m = pick(), n = pick(), k = pick();
    b.tensor("A", {m, k});
    b.tensor("B", {k, n});
    const auto mm = b.matmul("mm", "A", "B");
    b.relu("r", mm);
    b.tensor("x", {pick() + 2, pick() + 2, pick()});
    const auto& xs = b.desc().tensors.back().shape;
    b.tensor("w", {1 + static_cast<std::int64_t>(rng() % 3), 1 + static_cast<std::int64_t>(rng() % 3), xs[2], pick()});
    b.conv2d("c", "x", "w", {1 + static_cast<std::int64_t>(rng() % 2), 1});
    const Graph g = b.build();
    TensorMap in;
    for (const auto& t : g.inputs) in[t.name] = random_tensor(t, rng);
    const auto first = reference_execute(g, in);
    const auto second = reference_execute(g, in);
    ASSERT_EQ(first.size(), 2u);
    for (const auto& [name, t] : first) EXPECT_EQ(t, second.at(name)) << name;
  }
}

TEST(Reference, RejectsBadInputs) {
  GraphBuilder b("g");
  b.tensor("x", {3});
  b.relu("r", "x");
  const Graph g = b.build();
  TensorMap in;
  in["x"] = Tensor(TensorSpec{"x", {4}, DType::float32});
  EXPECT_THROW(reference_execute(g, in), Error);
  in["x"] = Tensor(TensorSpec{"x", {3}, DType::int32});
  EXPECT_THROW(reference_execute(g, in), Error);
}
