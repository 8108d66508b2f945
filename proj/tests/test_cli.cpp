// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cli.hpp"
#include "magms/checkpoint.hpp"
#include "magms/data.hpp"
#include "magms/pipeline.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace magms {
namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

TEST(Cli, HelpDocumentsEverySubcommand) {
  const auto top = run({"--help"});
  EXPECT_EQ(top.code, 0);
  for (const auto* sub : {"gen-data", "train", "sweep", "verify-theory"}) {
    EXPECT_NE(top.out.find(sub), std::string::npos) << sub;
  }
  const auto tr = run({"train", "--help"});
  EXPECT_EQ(tr.code, 0);
  for (const auto* flag : {"--data", "--out", "--arm", "--resume", "--lambda", "--gamma", "--dropout"}) {
    EXPECT_NE(tr.out.find(flag), std::string::npos) << flag;
  }
  const auto sw = run({"sweep", "--help"});
  EXPECT_NE(sw.out.find("--format"), std::string::npos);
  EXPECT_NE(sw.out.find("--jobs"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  const auto dir = testing::temp_dir("cli_usage");
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  const auto zero = run({"gen-data", "--out", dir + "/d", "--modalities", "0"});
  EXPECT_EQ(zero.code, 2);
  EXPECT_NE(zero.err.find("--modalities"), std::string::npos) << zero.err;
  EXPECT_EQ(run({"gen-data", "--out", dir + "/d", "--colour", "red"}).code, 2);
  EXPECT_EQ(run({"gen-data"}).code, 2);
  EXPECT_EQ(run({"verify-theory", "--pairs", "0.9-0.6"}).code, 2);
  EXPECT_EQ(run({"verify-theory", "--pairs", "abc:0.5"}).code, 2);
  EXPECT_EQ(run({"sweep", "--checkpoint", "x", "--data", "y", "--out", "z", "--jobs", "0"}).code, 2);
  EXPECT_EQ(run({"train", "--data", "x", "--out", "y", "--arm", "unet"}).code, 2);
}

TEST(Cli, VerifyTheory) {
  const auto r = run({"verify-theory", "-n", "1000"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("fraction holding: 1.000000"), std::string::npos) << r.out;
  const auto p = run({"verify-theory", "--pairs", "0.9:0.6", "-n", "10"});
  EXPECT_EQ(p.code, 0) << p.err;
  EXPECT_NE(p.out.find("0.306"), std::string::npos) << p.out;
  EXPECT_NE(p.out.find("0.459"), std::string::npos) << p.out;
  // Outside the precondition the pair itself is invalid input.
  EXPECT_EQ(run({"verify-theory", "--pairs", "0.5:0.9"}).code, 2);
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = testing::temp_dir("cli_pipeline");
    const auto g = run({"gen-data", "--out", root_ + "/data", "--modalities", "2", "--size", "16",
                        "--subjects", "6", "--classes", "3", "--seed", "7"});
    ASSERT_EQ(g.code, 0) << g.err;
    const auto t = run({"train", "--data", root_ + "/data", "--out", root_ + "/run", "--iterations",
                        "4", "--checkpoint-every", "2"});
    ASSERT_EQ(t.code, 0) << t.err;
  }

  static std::string root_;
};
std::string CliPipeline::root_;

TEST_F(CliPipeline, GenDataIsDeterministicAndSelfDescribing) {
  const auto again = root_ + "/data2";
  ASSERT_EQ(run({"gen-data", "--out", again, "--modalities", "2", "--size", "16", "--subjects", "6",
                 "--classes", "3", "--seed", "7"})
                .code,
            0);
  for (const auto& e : fs::directory_iterator(root_ + "/data")) {
    if (e.path().filename() == RunManifest::kFileName) continue;
    EXPECT_EQ(slurp(e.path()), slurp(fs::path(again) / e.path().filename())) << e.path();
  }
  const auto m = RunManifest::read(root_ + "/data");
  EXPECT_EQ(m.command, "gen-data");
  EXPECT_EQ(m.status, "ok");
  EXPECT_EQ(m.seed, 7u);
  EXPECT_EQ(read_dataset(root_ + "/data").modalities.size(), 2);
}

TEST_F(CliPipeline, TrainWritesRunDirectory) {
  for (const auto* name : {"config.json", "log.jsonl", "ckpt-2.bin", "ckpt-4.bin", "run_manifest.json"}) {
    EXPECT_TRUE(fs::exists(fs::path(root_) / "run" / name)) << name;
  }
  EXPECT_EQ(count_lines(slurp(fs::path(root_) / "run" / "log.jsonl")), 4u);
  EXPECT_EQ(RunManifest::read(root_ + "/run").status, "ok");
}

TEST_F(CliPipeline, ArmFlagsReachTheConfiguration) {
  const auto r = run({"train", "--data", root_ + "/data", "--out", root_ + "/mag", "--arm", "mag",
                      "--iterations", "4", "--checkpoint-every", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto mag = peek_checkpoint_config(root_ + "/mag/ckpt-2.bin");
  const auto full = peek_checkpoint_config(root_ + "/run/ckpt-4.bin");
  EXPECT_EQ(mag.arm, Arm::mag);
  EXPECT_EQ(mag.lambda_kl, 0.0);
  EXPECT_EQ(mag.gamma_l2, 0.0);
  EXPECT_EQ(full.lambda_kl, 1.0);
  EXPECT_EQ(mag.hash_without_weights(), full.hash_without_weights());
  const auto d = run({"train", "--data", root_ + "/data", "--out", root_ + "/drop", "--arm",
                      "dropout_mean", "--dropout", "0.3", "--iterations", "1"});
  ASSERT_EQ(d.code, 0) << d.err;
  const auto drop = peek_checkpoint_config(root_ + "/drop/ckpt-1.bin");
  EXPECT_EQ(drop.arm, Arm::dropout_mean);
  EXPECT_EQ(drop.dropout_prob, 0.3);
}

TEST_F(CliPipeline, ResumeReproducesTheLog) {
  const auto a = root_ + "/resumed";
  fs::create_directories(a);
  fs::copy_file(root_ + "/run/ckpt-2.bin", a + "/start.bin");
  const auto r = run({"train", "--data", root_ + "/data", "--out", a, "--resume", a + "/start.bin"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(a + "/ckpt-4.bin"), slurp(root_ + "/run/ckpt-4.bin"));
  const auto bad = run({"train", "--data", root_ + "/data", "--out", a, "--resume",
                        a + "/start.bin", "--lambda", "0.5"});
  EXPECT_EQ(bad.code, 2);
  const auto missing = run({"train", "--data", root_ + "/data", "--out", a, "--resume", a + "/nope.bin"});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("nope.bin"), std::string::npos);
}

TEST_F(CliPipeline, SweepWritesReports) {
  const auto out = root_ + "/sweep";
  const auto r = run({"sweep", "--checkpoint", root_ + "/run/ckpt-4.bin", "--data", root_ + "/data",
                      "--out", out, "--format", "csv,md", "--plots"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto* name : {"report.csv", "report.md", "report.json", "plot_dice.ppm", "run_manifest.json"}) {
    EXPECT_TRUE(fs::exists(fs::path(out) / name)) << name;
  }
  const auto md = slurp(fs::path(out) / "report.md");
  EXPECT_NE(md.find("| • | • |"), std::string::npos);
  const auto csv_only = root_ + "/sweep_csv";
  ASSERT_EQ(run({"sweep", "--checkpoint", root_ + "/run/ckpt-4.bin", "--data", root_ + "/data",
                 "--out", csv_only, "--format", "csv"})
                .code,
            0);
  EXPECT_TRUE(fs::exists(fs::path(csv_only) / "report.csv"));
  EXPECT_FALSE(fs::exists(fs::path(csv_only) / "report.md"));
  EXPECT_EQ(slurp(fs::path(csv_only) / "report.csv"), slurp(fs::path(out) / "report.csv"));
  EXPECT_EQ(run({"sweep", "--checkpoint", root_ + "/run/ckpt-4.bin", "--data", root_ + "/data",
                 "--out", csv_only, "--format", "pdf"})
                .code,
            2);
}

TEST_F(CliPipeline, SweepFailuresExitOne) {
  const auto missing = run({"sweep", "--checkpoint", root_ + "/absent.bin", "--data", root_ + "/data",
                            "--out", root_ + "/s1"});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("absent.bin"), std::string::npos) << missing.err;
  const auto other = root_ + "/other";
  ASSERT_EQ(run({"gen-data", "--out", other, "--modalities", "3", "--size", "16", "--subjects", "6",
                 "--classes", "3"})
                .code,
            0);
  fs::remove(fs::path(other) / "subj000_T1.f32");
  // Model modalities T1, T2 are present in name but one volume is gone.
  EXPECT_EQ(run({"sweep", "--checkpoint", root_ + "/run/ckpt-4.bin", "--data", other, "--out",
                 root_ + "/s2"})
                .code,
            1);
}

TEST_F(CliPipeline, VerifyTheoryComparesCheckpoints) {
  ASSERT_EQ(run({"train", "--data", root_ + "/data", "--out", root_ + "/plain", "--lambda", "0",
                 "--gamma", "0", "--iterations", "4", "--checkpoint-every", "2"})
                .code,
            0);
  const auto r = run({"verify-theory", "-n", "100", "--with", root_ + "/run/ckpt-2.bin", "--without",
                      root_ + "/plain/ckpt-2.bin", "--data", root_ + "/data", "--subset", "T1",
                      "--out", root_ + "/theory"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(fs::path(root_) / "theory" / "theory.json"));
  const auto mismatch = run({"verify-theory", "-n", "100", "--with", root_ + "/run/ckpt-2.bin",
                             "--without", root_ + "/drop/ckpt-1.bin", "--data", root_ + "/data",
                             "--subset", "T1"});
  EXPECT_EQ(mismatch.code, 1);
}

}  // namespace
}  // namespace magms
