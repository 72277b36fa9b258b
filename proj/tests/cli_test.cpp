// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

namespace {

struct CliRun {
  int status = -1;
  std::string out;
};

// Runs the CLI with stderr folded into stdout when `merge` is set.
CliRun run(const std::string& args, const std::string& env = {}, bool merge = false) {
  const std::string cmd =
      env + " '" SCHEDKIT_CLI "' " + args + (merge ? " 2>&1" : " 2>/dev/null");
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

const std::string kData = SCHEDKIT_TEST_DATA;
const std::string kGraph = kData + "/mm_graph.json";
const std::string kSmall = kData + "/mm64.json";

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Cli, ApplyDescriptValidates) {
  const CliRun r = run("apply " + kGraph + " " + kData + "/mm_graph.descript.json --json --repeats 1 --warmup 0");
  ASSERT_EQ(r.status, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["graph"], "mm_graph");
  EXPECT_EQ(j["backend"], "interp");
  EXPECT_TRUE(j["validation"]["pass"].get<bool>());
  EXPECT_EQ(j["metrics"]["samples_ns"].size(), 1u);
}

TEST(Cli, DescriptAndLogAgree) {
  const CliRun a = run("apply " + kGraph + " " + kData + "/mm_graph.descript.json --render --json --no-eval");
  const CliRun b = run("apply " + kGraph + " " + kData + "/mm_graph.schedule.json --render --json --no-eval");
  ASSERT_EQ(a.status, 0);
  ASSERT_EQ(b.status, 0);
  const auto ja = nlohmann::json::parse(a.out), jb = nlohmann::json::parse(b.out);
  EXPECT_EQ(ja["render"], jb["render"]);
  EXPECT_EQ(ja["render"].get<std::string>(), read_file(kData + "/mm_graph.render"));
}

TEST(Cli, NaiveRender) {
  const CliRun r = run("apply " + kGraph + " --render --no-eval");
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(r.out.rfind(
                "root mm0\n"
                "for I in [0,256) step 1\n"
                "  for J in [0,258) step 1\n"
                "    for K in [0,512) step 1\n"
                "      mm0\n",
                0),
            0u)
      << r.out;
}

TEST(Cli, MissingToolchain) {
  const CliRun r = run("apply " + kSmall + " --backend c --no-eval", "SCHEDKIT_CC=/nonexistent/cc", true);
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("backend_c: C compiler '/nonexistent/cc' is not available"), std::string::npos)
      << r.out;
}

TEST(Cli, PipelineErrorsAreQualified) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto bad = (dir / "schedkit_cli_bad.json").string();
  std::ofstream(bad) << R"({"graph":"mm64","primitives":[{"primitive":"unroll","root":"mm0","unrolls":{"z":2}}]})";
  const CliRun r = run("apply " + kSmall + " " + bad + " --no-eval", {}, true);
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(r.out.rfind("scheduler: ", 0), 0u) << r.out;
  std::filesystem::remove(bad);
}

TEST(Cli, SearchEmpty) {
  const CliRun r = run("search " + kSmall + " --tokens PPWRPRP --num 0 --json");
  ASSERT_EQ(r.status, 0);
  EXPECT_TRUE(nlohmann::json::parse(r.out)["rows"].empty());
}

TEST(Cli, SearchTwentyAllValid) {
  const auto out = (std::filesystem::temp_directory_path() / "schedkit_cli_search.json").string();
  const std::string args = "search " + kSmall + " --tokens PPWRPRP --num 20 --seed 3 --repeats 1 --warmup 0 --json";
  const CliRun a = run(args + " --out " + out);
  ASSERT_EQ(a.status, 0) << a.out;
  const auto ja = nlohmann::json::parse(a.out);
  ASSERT_EQ(ja["rows"].size(), 20u);
  for (const auto& row : ja["rows"]) {
    EXPECT_EQ(row["status"], "ok");
    EXPECT_TRUE(row["validation"]["pass"].get<bool>());
  }
  // Sorted by min time.
  for (std::size_t i = 1; i < 20; ++i) {
    EXPECT_LE(ja["rows"][i - 1]["metrics"]["min_ns"].get<std::int64_t>(),
              ja["rows"][i]["metrics"]["min_ns"].get<std::int64_t>());
  }
  EXPECT_EQ(nlohmann::json::parse(read_file(out)), ja);
  std::filesystem::remove(out);

  // Same seed, same sample column (by sample index).
  const auto jb = nlohmann::json::parse(run(args).out);
  std::vector<nlohmann::json> sa(20), sb(20);
  for (const auto& row : ja["rows"]) sa[row["index"].get<std::size_t>()] = row["sample"];
  for (const auto& row : jb["rows"]) sb[row["index"].get<std::size_t>()] = row["sample"];
  EXPECT_EQ(sa, sb);
}

TEST(Cli, SearchBadTokens) {
  EXPECT_EQ(run("search " + kSmall + " --tokens PXQ --num 1").status, 2);
}

TEST(Cli, Trace) {
  const CliRun r = run("trace " + kSmall + " --cache 4096:64 --json");
  ASSERT_EQ(r.status, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["accesses"].get<std::int64_t>(), 4 * 64 * 64 * 64 + 64 * 64);  // 3 loads, 1 store per point, plus the zero fill
  EXPECT_GT(j["misses"].get<std::int64_t>(), 0);
  EXPECT_EQ(run("trace " + kSmall + " --cache 4000:64").status, 2);
}

TEST(Cli, UsageErrors) {
  EXPECT_NE(run("").status, 0);
  EXPECT_NE(run("apply /nonexistent.json").status, 0);
}
