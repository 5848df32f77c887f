#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "weedsense");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = weedsense::cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / "weedsense_cli_test";
    fs::remove_all(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
};

}  // namespace

TEST_F(CliTest, DescribeReportsProfile) {
  const CliResult r = run({"describe", "--size", "medium", "--kernel", "s0m3e0", "--se"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["profile"]["total_params"], 30733436);
  EXPECT_EQ(j["config"]["use_se"], true);
  const json no_aux = json::parse(run({"describe", "--no-aux"}).out);
  EXPECT_LT(no_aux["profile"]["total_params"].get<double>(), 15e6);
}

TEST_F(CliTest, SweepCoversAblationGrid) {
  const CliResult r = run({"describe", "--sweep", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["sweep"].size(), 7u * 2 + 3 * 2 + 1);
  EXPECT_TRUE(fs::exists(dir / "provenance.json"));
  EXPECT_TRUE(fs::exists(dir / "describe.json"));
}

TEST_F(CliTest, UnknownCommandOrFlagIsUsageError) {
  const CliResult a = run({"frobnicate"});
  EXPECT_EQ(a.code, 2);
  EXPECT_EQ(first_line(a.err).rfind("error: usage: ", 0), 0u) << a.err;
  const CliResult b = run({"describe", "--bogus"});
  EXPECT_EQ(b.code, 2);
  EXPECT_NE(b.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"describe", "--channels", "100"}).code, 2);
}

TEST_F(CliTest, LibraryErrorsPrintOneCategorizedLine) {
  const CliResult bad_kernel = run({"describe", "--kernel", "s9"});
  EXPECT_EQ(bad_kernel.code, 1);
  EXPECT_EQ(bad_kernel.err.rfind("error: config: ", 0), 0u) << bad_kernel.err;
  EXPECT_EQ(std::count(bad_kernel.err.begin(), bad_kernel.err.end(), '\n'), 1);
  const CliResult missing = run({"train", "--manifest", (dir / "none.json").string(), "--out", dir.string()});
  EXPECT_EQ(missing.code, 1);
  EXPECT_EQ(missing.err.rfind("error: io: ", 0), 0u) << missing.err;
}

TEST_F(CliTest, SynthTrainEvalPipeline) {
  const fs::path data = dir / "data";
  ASSERT_EQ(run({"synth", "--out", data.string(), "--n", "6", "--input-size", "64", "--seed", "1"}).code, 0);
  EXPECT_TRUE(fs::exists(data / "manifest.json"));
  EXPECT_TRUE(fs::exists(data / "provenance.json"));

  const CliResult t = run({"train", "--manifest", (data / "manifest.json").string(), "--out", (dir / "run").string(), "--tiny",
                     "--epochs", "2", "--batch", "3", "--warmup", "1", "--seed", "4"});
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(json::parse(t.out)["iterations"], 4);
  const json prov = json::parse(std::ifstream(dir / "run" / "provenance.json"));
  EXPECT_EQ(prov["seed"], 4);
  EXPECT_EQ(prov["resolved"]["train"]["batch_size"], 3);
  EXPECT_EQ(prov["resolved"]["model"]["embed_dim"], 64);

  const CliResult e = run({"eval", "--checkpoint", (dir / "run" / "checkpoint.ckpt").string(), "--manifest",
                     (data / "manifest.json").string(), "--out", (dir / "eval").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const json metrics = json::parse(e.out);
  EXPECT_EQ(metrics["all"]["samples"], 6);
  EXPECT_FALSE(metrics["all"]["seg"].is_null());
  const CliResult table = run({"eval", "--checkpoint", (dir / "run" / "checkpoint.ckpt").string(), "--manifest",
                         (data / "manifest.json").string(), "--table"});
  EXPECT_EQ(first_line(table.out).find("split"), 0u);
}

TEST_F(CliTest, GradcamWritesNormalizedHeatmaps) {
  const CliResult r = run({"gradcam", "--tiny", "--tasks", "seg,height", "--input-size", "64", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_FALSE(j.contains("week"));
  for (const char* task : {"seg", "height"}) {
    EXPECT_TRUE(fs::exists(dir / (std::string("heatmap_") + task + ".png")));
    EXPECT_EQ(j[task]["height"], 8);
    EXPECT_GE(j[task]["min"].get<double>(), 0.0);
    EXPECT_LE(j[task]["max"].get<double>(), 1.0);
  }
}

TEST_F(CliTest, PrimitiveGradcheckPasses) {
  const CliResult r = run({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["pass"], true);
}
