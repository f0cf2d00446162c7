// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("oodkit_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the CLI with stdout/stderr captured to files in the scratch dir.
  int run(const std::string& args) {
    const std::string cmd = std::string("'") + OODKIT_CLI_PATH + "' " + args + " >'" +
                            (dir_ / "stdout").string() + "' 2>'" + (dir_ / "stderr").string() + "'";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string read(const std::string& name) const {
    std::ifstream in(dir_ / name, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  std::string p(const std::string& name) const { return "'" + (dir_ / name).string() + "'"; }

  fs::path dir_;
};

constexpr const char* kSpec =
    R"({"dim": 8, "num_superclasses": 2, "classes_per_superclass": 3, "samples_per_class": 20, "ood_samples": 40})";

}  // namespace

TEST_F(Cli, HelpAndVersion) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_NE(read("stdout").find("mofe-score"), std::string::npos);
  EXPECT_EQ(run("--version"), 0);
  EXPECT_NE(read("stdout").find("0.1.0"), std::string::npos);
  EXPECT_EQ(run("train --help"), 0);
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("nonsense"), 1);
  EXPECT_EQ(run("partition --input x.emb"), 1);
  EXPECT_EQ(run("synth --outdir " + p("b") + " --bogus"), 1);
  EXPECT_EQ(run("score --metric knn --input x.emb --output y.csv"), 1);  // knn needs --bank
  EXPECT_EQ(run("mixup-demo --sigma-grid 0.5,abc --output " + p("m.csv")), 1);
}

TEST_F(Cli, MissingFileExitsTwo) {
  EXPECT_EQ(run("report --input " + p("missing.json")), 2);
  EXPECT_EQ(run("score --metric energy --input " + p("missing.emb") + " --output " + p("s.csv")), 2);
  EXPECT_FALSE(read("stderr").empty());
}

TEST_F(Cli, IngestCsv) {
  {
    std::ofstream out(dir_ / "in.csv");
    out << "a,b,label\n";
    for (int i = 0; i < 20; ++i) out << i << "," << -i << "," << i % 2 << "\n";
  }
  EXPECT_EQ(run("ingest --input " + p("in.csv") + " --header --output " + p("t.emb") +
                " --val-fraction 0.2 --val-output " + p("v.emb")),
            0)
      << read("stderr");
  EXPECT_TRUE(fs::exists(dir_ / "t.emb"));
  EXPECT_TRUE(fs::exists(dir_ / "v.emb"));
  EXPECT_EQ(run("ingest --input " + p("in.csv") + " --output " + p("bad.emb")), 2);
  EXPECT_EQ(run("ingest --input " + p("in.csv") + " --header --output " + p("x.emb") +
                " --val-fraction 0.2"),
            1);
}

TEST_F(Cli, FullPipeline) {
  {
    std::ofstream(dir_ / "spec.json") << kSpec;
  }
  ASSERT_EQ(run("synth --spec " + p("spec.json") + " --outdir " + p("bench")), 0) << read("stderr");
  ASSERT_EQ(run("partition --input " + p("bench/id_train.emb") + " --hierarchy " +
                p("bench/hierarchy.json") + " --k 2 --output " + p("part.json")),
            0)
      << read("stderr");
  EXPECT_NE(read("part.json").find("oodkit-partition/1"), std::string::npos);
  ASSERT_EQ(run("train --train " + p("bench/id_train.emb") + " --val " + p("bench/id_val.emb") +
                " --partition " + p("part.json") + " --output " + p("model.bin") +
                " --history " + p("hist.json") + " --epochs 2 --hidden 16 --batch 16 --mixup on"),
            0)
      << read("stderr");
  EXPECT_EQ(run("train --train " + p("bench/id_train.emb") + " --val " + p("bench/id_val.emb") +
                " --partition " + p("part.json") + " --output " + p("m2.bin") + " --batch 15"),
            1);
  for (const char* set : {"id_val", "ood_near", "ood_far"})
    ASSERT_EQ(run("mofe-score --model " + p("model.bin") + " --bank-src " +
                  p("bench/id_train.emb") + " --input " + p(std::string("bench/") + set + ".emb") +
                  " --k 3 --output " + p(std::string(set) + ".csv") +
                  (std::string(set) == "id_val" ? " --predictions " + p("pred.csv") : "")),
              0)
        << read("stderr");
  EXPECT_EQ(read("id_val.csv").substr(0, 12), "index,score\n");
  EXPECT_EQ(read("pred.csv").substr(0, 17), "index,prediction\n");
  ASSERT_EQ(run("eval --id-scores " + p("id_val.csv") + " --ood-scores " + p("ood_near.csv") + "," +
                p("ood_far.csv") + " --id-predictions " + p("pred.csv") + " --id-labels " +
                p("bench/id_val.emb") + " --output " + p("report.json")),
            0)
      << read("stderr");
  const auto report = read("report.json");
  EXPECT_NE(report.find("oodkit-eval-report/1"), std::string::npos);
  EXPECT_NE(report.find("\"ood_far\""), std::string::npos);
  ASSERT_EQ(run("report --input " + p("report.json")), 0);
  EXPECT_NE(read("stdout").find("Average"), std::string::npos);

  ASSERT_EQ(run("score --metric knn --k 5 --bank " + p("bench/id_train.emb") + " --input " +
                p("bench/ood_near.emb") + " --output " + p("knn.csv")),
            0)
      << read("stderr");
  ASSERT_EQ(run("score --metric energy --temperature 2 --input " + p("bench/ood_near.emb") +
                " --output " + p("energy.csv")),
            0);
  ASSERT_EQ(run("mixup-demo --sigma-grid 1.0,0.1 --draws 10000 --output " + p("mix.csv")), 0);
  EXPECT_EQ(read("mix.csv").substr(0, 19), "sigma,mean,variance");
}

TEST_F(Cli, EvalRejectsMalformedScores) {
  {
    std::ofstream(dir_ / "id.csv") << "index,score\n0,1.0\n2,0.5\n";
    std::ofstream(dir_ / "ood.csv") << "index,score\n0,0.1\n";
  }
  EXPECT_EQ(run("eval --id-scores " + p("id.csv") + " --ood-scores " + p("ood.csv") +
                " --output " + p("r.json")),
            2);
}
