// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace {

using namespace adaptlab;
namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("adaptlab_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    unsetenv(kRunRootEnv);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string p(const std::string& rel) const { return (root_ / rel).string(); }

  // Small corpus + tiny pre-trained base; returns the base run directory.
  std::string tiny_base(std::size_t layers = 1) {
    EXPECT_EQ(run({"generate", "--n", "40", "--out", p("data"), "--seed", "2", "--max-tokens", "40"}).code, 0);
    json cfg = {{"data", p("data")},          {"d_model", 8},          {"d_ff", 16},
                {"n_heads", 2},               {"n_layers_encoder", layers}, {"n_layers_decoder", 1},
                {"max_seq_len", 256},         {"pretrain_steps", 3},   {"epochs", 1},
                {"bottleneck_dim", 4},        {"max_summary_len", 8},  {"eval_limit", 4},
                {"probe_size", 60},           {"run_root", p("runs")}};
    write_json(p("cfg.json"), cfg);
    auto r = run({"pretrain", "--config", p("cfg.json")});
    EXPECT_EQ(r.code, 0) << r.err;
    std::string dir = r.out.substr(0, r.out.find('\n'));
    return dir;
  }

  fs::path root_;
};

TEST_F(CliTest, GenerateWritesCorpusAndManifest) {
  auto r = run({"generate", "--languages", "4", "--n", "500", "--out", p("d"), "--seed", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(p("d/corpus.jsonl")), 2000u);
  EXPECT_TRUE(fs::exists(p("d/splits.json")));
  EXPECT_TRUE(fs::exists(p("d/stats.json")));
  EXPECT_TRUE(fs::exists(p("d/stats.md")));
  EXPECT_NE(r.out.find("| cee | 400 | 50 | 50 | 500 |"), std::string::npos) << r.out;
  EXPECT_FALSE(fs::exists(p("d/.lock")));
}

TEST_F(CliTest, GenerateImbalanceRatio) {
  ASSERT_EQ(run({"generate", "--n", "50", "--imbalance", "10", "--out", p("d")}).code, 0);
  auto stats = json::parse(slurp(p("d/stats.json")));
  std::size_t lo = SIZE_MAX, hi = 0;
  for (const auto& [lang, s] : stats.items()) {
    const std::size_t n = s["train"].get<std::size_t>() + s["dev"].get<std::size_t>() + s["test"].get<std::size_t>();
    lo = std::min(lo, n);
    hi = std::max(hi, n);
  }
  EXPECT_EQ(hi, 10 * lo);
}

TEST_F(CliTest, GenerateIsByteReproducibleAndGuardsOutput) {
  ASSERT_EQ(run({"generate", "--n", "30", "--out", p("a"), "--seed", "7"}).code, 0);
  ASSERT_EQ(run({"generate", "--n", "30", "--out", p("b"), "--seed", "7"}).code, 0);
  EXPECT_EQ(slurp(p("a/corpus.jsonl")), slurp(p("b/corpus.jsonl")));
  EXPECT_EQ(slurp(p("a/splits.json")), slurp(p("b/splits.json")));
  auto again = run({"generate", "--n", "30", "--out", p("a"), "--seed", "7"});
  EXPECT_NE(again.code, 0);
  EXPECT_NE(again.err.find("--force"), std::string::npos);
  EXPECT_EQ(run({"generate", "--n", "30", "--out", p("a"), "--seed", "7", "--force"}).code, 0);
}

TEST_F(CliTest, ConfigErrorsListEveryBadKey) {
  write_json(p("bad.json"), {{"d_modle", 3}, {"epochs", "ten"}, {"lr_ful", 1.0}, {"seed", 1}});
  auto r = run({"pretrain", "--config", p("bad.json")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("unknown key 'd_modle'"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("unknown key 'lr_ful'"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("key 'epochs' expects"), std::string::npos) << r.err;
  EXPECT_EQ(r.err.find("'seed'"), std::string::npos) << r.err;
}

TEST_F(CliTest, OverridesAndDefaults) {
  RunConfig c;
  c.set("epochs", "3");
  c.set("train_languages", "cee,pyro");
  c.set("batching", "monolingual");
  EXPECT_EQ(c.train().epochs, 3u);
  auto r = c.regime({"cee", "gost", "pyro"});
  EXPECT_EQ(r.scope.train_languages, (std::vector<std::string>{"cee", "pyro"}));
  EXPECT_EQ(r.batching, Batching::kMonolingual);
  EXPECT_FALSE(r.language_tags);
  c.set("task", "search");
  c.set_json("batching", nullptr);
  r = c.regime({"cee", "gost", "pyro"});
  EXPECT_EQ(r.batching, Batching::kMonolingual);
  EXPECT_TRUE(r.language_tags);
  EXPECT_THROW(c.set("nonsense", "1"), Error);
  c.set("train_languages", "klingon");
  EXPECT_THROW(c.regime({"cee"}), Error);
  RunConfig d;
  EXPECT_NE(c.hash(), d.hash());
  EXPECT_EQ(RunConfig().hash(), d.hash());
}

TEST_F(CliTest, RunRootPrecedence) {
  EXPECT_EQ(resolve_run_root("", ""), fs::path("runs"));
  EXPECT_EQ(resolve_run_root("", "cfg"), fs::path("cfg"));
  setenv(kRunRootEnv, "env", 1);
  EXPECT_EQ(resolve_run_root("", "cfg"), fs::path("env"));
  EXPECT_EQ(resolve_run_root("flag", "cfg"), fs::path("flag"));
  unsetenv(kRunRootEnv);
}

TEST_F(CliTest, LockfileBlocksConcurrentRuns) {
  const fs::path dir = p("run");
  RunDirectory first(dir, false);
  EXPECT_TRUE(fs::exists(dir / ".lock"));
  EXPECT_THROW(RunDirectory(dir, true), Error);
}

TEST_F(CliTest, ExistingResultsNeedForce) {
  const fs::path dir = p("run");
  { RunDirectory d(dir, false); write_text(d / "record.json", "{}"); }
  EXPECT_FALSE(fs::exists(dir / ".lock"));
  EXPECT_THROW(RunDirectory(dir, false), Error);
  EXPECT_NO_THROW(RunDirectory(dir, true));
}

TEST_F(CliTest, EvalErrors) {
  auto r = run({"eval", "--checkpoint", p("missing.ckpt"), "--languages", "cee"});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find(p("missing.ckpt")), std::string::npos) << r.err;
  const std::string base = tiny_base();
  r = run({"eval", "--checkpoint", base, "--languages", "", "--data", p("data"), "--run-root", p("runs")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("empty"), std::string::npos) << r.err;
}

TEST_F(CliTest, PipelineEndToEnd) {
  const std::string base = tiny_base();
  ASSERT_TRUE(fs::exists(fs::path(base) / "base.ckpt"));
  ASSERT_TRUE(fs::exists(fs::path(base) / "record.json"));
  ASSERT_TRUE(fs::exists(fs::path(base) / "report.md"));

  auto ft = run({"finetune", "--config", p("cfg.json"), "--set", "base=" + base});
  ASSERT_EQ(ft.code, 0) << ft.err;
  const std::string ft_dir = ft.out.substr(ft.out.rfind('\n', ft.out.size() - 2) + 1, std::string::npos);
  const fs::path run_dir = ft_dir.substr(0, ft_dir.size() - 1);
  const auto rec = json::parse(slurp(run_dir / "record.json"));
  EXPECT_EQ(rec["base_hash_before"], rec["base_hash_after"]);
  EXPECT_TRUE(fs::exists(run_dir / "report.md"));
  EXPECT_TRUE(fs::exists(run_dir / "adapters.ckpt"));

  auto ev = run({"eval", "--checkpoint", base, "--adapters", (run_dir / "adapters.ckpt").string(), "--languages",
                 "cee,pyro", "--data", p("data"), "--config", p("cfg.json")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("| cee | pyro | Overall |"), std::string::npos) << ev.out;

  auto rep = run({"report", run_dir.string(), "--out", p("report.md")});
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_TRUE(fs::exists(p("report.json")));
}

TEST_F(CliTest, RerunReproducesMetricsBitwise) {
  const std::string base = tiny_base();
  auto a = run({"finetune", "--config", p("cfg.json"), "--set", "base=" + base, "--set", "task=search"});
  ASSERT_EQ(a.code, 0) << a.err;
  const std::string dir = a.out.substr(a.out.rfind('\n', a.out.size() - 2) + 1);
  const fs::path run_dir = dir.substr(0, dir.size() - 1);
  const auto first = json::parse(slurp(run_dir / "record.json"));
  auto again = run({"finetune", "--config", p("cfg.json"), "--set", "base=" + base, "--set", "task=search"});
  EXPECT_NE(again.code, 0);  // results exist
  auto b = run({"finetune", "--config", p("cfg.json"), "--set", "base=" + base, "--set", "task=search", "--force"});
  ASSERT_EQ(b.code, 0) << b.err;
  const auto second = json::parse(slurp(run_dir / "record.json"));
  EXPECT_EQ(first["metrics"].dump(), second["metrics"].dump());
  EXPECT_EQ(first["train_loss"].dump(), second["train_loss"].dump());
}

TEST_F(CliTest, ProbeOnFourLayerModelGivesFivePointCurves) {
  const std::string base = tiny_base(4);
  auto r = run({"probe", "--checkpoint", base, "--tasks", "LEN,CPX,TYP", "--config", p("cfg.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string dir = r.out.substr(r.out.rfind('\n', r.out.size() - 2) + 1);
  const fs::path run_dir = dir.substr(0, dir.size() - 1);
  const auto rec = json::parse(slurp(run_dir / "probe.json"));
  for (const char* t : {"LEN", "CPX", "TYP"}) EXPECT_EQ(rec["accuracy"][t].size(), 5u) << t;
  EXPECT_EQ(count_lines(run_dir / "probe.csv"), 6u);
  EXPECT_TRUE(fs::exists(run_dir / "probe.md"));
}

TEST_F(CliTest, SweepDimGivesOneRowPerDim) {
  const std::string base = tiny_base();
  auto r = run({"sweep-dim", "--config", p("cfg.json"), "--set", "base=" + base, "--dims", "24,64,128"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\n| 24 |"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("\n| 64 |"), std::string::npos);
  EXPECT_NE(r.out.find("\n| 128 |"), std::string::npos);
  const std::string dir = r.out.substr(r.out.rfind('\n', r.out.size() - 2) + 1);
  const auto rec = json::parse(slurp(dir.substr(0, dir.size() - 1) + "/sweep.json"));
  EXPECT_EQ(rec["runs"].size(), 3u);
}

TEST_F(CliTest, MissingBaseIsAnError) {
  tiny_base();
  auto r = run({"finetune", "--config", p("cfg.json"), "--set", "base=" + p("nowhere")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find(p("nowhere")), std::string::npos) << r.err;
}

TEST_F(CliTest, UnknownSubcommandFails) { EXPECT_NE(run({"frobnicate"}).code, 0); }

}  // namespace
