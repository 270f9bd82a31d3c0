// Copyright 2026 The Spatial CBM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Drives the command-line tool end to end on a small generated dataset.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include "scbm/concept_catalog.h"
#include "scbm/io.h"
#include "scbm/pipeline.h"
#include "test_support.h"

#ifndef SCBM_CLI
#error "SCBM_CLI must name the command-line binary"
#endif

namespace scbm {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

int RunCli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(SCBM_CLI) + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new TempDir();
    const fs::path toy = root_->path() / "toy";
    log_ = root_->path() / "log.txt";
    ASSERT_EQ(RunCli("make-toy --out " + toy.string() + " --per-class 6 --val-per-class 2", log_), 0);
    const std::string cfg = " --config " + (toy / "config.json").string();
    ASSERT_EQ(RunCli("concepts" + cfg, log_), 0) << ReadFile(log_);
    ASSERT_EQ(RunCli("similarities" + cfg, log_), 0) << ReadFile(log_);
    ASSERT_EQ(RunCli("train-cbl --steps 300 --batch-size 16" + cfg, log_), 0) << ReadFile(log_);
    ASSERT_EQ(RunCli("train-head" + cfg, log_), 0) << ReadFile(log_);
  }
  static void TearDownTestSuite() {
    delete root_;
    root_ = nullptr;
  }

  // Fresh copy of the finished toy run to tamper with.
  fs::path CopyRun() {
    const fs::path dst = scratch_.path() / "toy";
    fs::copy(root_->path() / "toy", dst, fs::copy_options::recursive);
    return dst;
  }
  static std::string Cfg(const fs::path& toy) { return " --config " + (toy / "config.json").string(); }
  static fs::path AnImage(const fs::path& toy) {
    std::ifstream in(toy / "train.jsonl");
    std::string line;
    std::getline(in, line);
    return toy / Json::parse(line)["image"].get<std::string>();
  }
  static void FlipByte(const fs::path& p, std::size_t at) {
    std::string bytes = ReadFile(p);
    bytes[at] = static_cast<char>(bytes[at] ^ 0x10);
    std::ofstream(p, std::ios::binary | std::ios::trunc) << bytes;
  }
  static fs::path FirstChunk(const fs::path& dir) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".bin") return e.path();
    }
    return {};
  }

  static TempDir* root_;
  static fs::path log_;
  TempDir scratch_;
};

TempDir* Pipeline::root_ = nullptr;
fs::path Pipeline::log_;

TEST_F(Pipeline, ArtifactsCarryProvenance) {
  const fs::path run = root_->path() / "toy" / "run";
  const auto catalog = ConceptCatalog::Load(run / "catalog.json");
  const Json sims = ReadJson(run / "similarities" / "manifest.json");
  EXPECT_EQ(sims["catalog_hash"], catalog.content_hash());
  const Json cbl = ReadJson(run / "cbl" / "bottleneck.json");
  EXPECT_EQ(cbl["catalog_hash"], catalog.content_hash());
  EXPECT_TRUE(cbl.dump().find("config_sha256") != std::string::npos);
  const Json head = ReadJson(run / "head" / "head.json");
  EXPECT_EQ(head["catalog_hash"], catalog.content_hash());
  EXPECT_GE(head["L"].get<int>(), 2);
}

TEST_F(Pipeline, RerunsAreByteIdentical) {
  const fs::path toy = CopyRun();
  const fs::path run = toy / "run";
  const std::string before_catalog = ReadFile(run / "catalog.json");
  const std::string before_cbl = ReadFile(run / "cbl" / "weights.bin");
  const std::string before_head = ReadFile(run / "head" / "weights_coo.bin");
  ASSERT_EQ(RunCli("concepts" + Cfg(toy), log_), 0);
  ASSERT_EQ(RunCli("train-cbl --steps 300 --batch-size 16" + Cfg(toy), log_), 0);
  ASSERT_EQ(RunCli("train-head" + Cfg(toy), log_), 0);
  EXPECT_EQ(ReadFile(run / "catalog.json"), before_catalog);
  EXPECT_EQ(ReadFile(run / "cbl" / "weights.bin"), before_cbl);
  EXPECT_EQ(ReadFile(run / "head" / "weights_coo.bin"), before_head);
}

TEST_F(Pipeline, ExplainAndEvaluate) {
  const fs::path toy = CopyRun();
  const fs::path out = scratch_.path() / "explain";
  ASSERT_EQ(RunCli("explain -k 5 --image " + AnImage(toy).string() + " --out " + out.string() + Cfg(toy),
                log_),
            0)
      << ReadFile(log_);
  const Json e = ReadJson(out / "explanation.json");
  EXPECT_LE(e["top_k"].size(), 5u);
  for (const auto& t : e["top_k"]) {
    EXPECT_TRUE(fs::exists(out / ("heatmap_" + std::to_string(t["m"].get<int>()) + ".png")));
  }
  ASSERT_EQ(RunCli("eval classify" + Cfg(toy), log_), 0);
  const Json c = ReadJson(toy / "run" / "eval" / "classify.json");
  EXPECT_GE(c["accuracy"].get<double>(), 0.0);
  EXPECT_LE(c["accuracy"].get<double>(), 1.0);
}

TEST_F(Pipeline, TamperedCatalogFailsWithProvenanceCode) {
  const fs::path toy = CopyRun();
  Json j = ReadJson(toy / "run" / "catalog.json");
  j["concepts"][0] = "something else entirely";
  WriteJson(toy / "run" / "catalog.json", j);
  EXPECT_EQ(RunCli("similarities" + Cfg(toy), log_), 3);
  EXPECT_EQ(RunCli("train-cbl" + Cfg(toy), log_), 3);
}

TEST_F(Pipeline, RegeneratedCatalogInvalidatesDownstream) {
  const fs::path toy = CopyRun();
  const auto old = ConceptCatalog::Load(toy / "run" / "catalog.json");
  std::vector<std::string> concepts = old.concepts();
  concepts.pop_back();
  ConceptCatalog(concepts, old.class_names(), old.source()).Save(toy / "run" / "catalog.json");
  EXPECT_EQ(RunCli("train-cbl" + Cfg(toy), log_), 3);
  EXPECT_EQ(RunCli("train-head" + Cfg(toy), log_), 3);
  EXPECT_EQ(RunCli("eval classify" + Cfg(toy), log_), 3);
}

TEST_F(Pipeline, TamperedSimilaritiesFail) {
  const fs::path toy = CopyRun();
  FlipByte(FirstChunk(toy / "run" / "similarities"), 17);
  EXPECT_EQ(RunCli("train-cbl" + Cfg(toy), log_), 3);
}

TEST_F(Pipeline, TamperedSimilarityManifestFails) {
  const fs::path toy = CopyRun();
  Json j = ReadJson(toy / "run" / "similarities" / "manifest.json");
  j["catalog_hash"] = std::string(64, '0');
  WriteJson(toy / "run" / "similarities" / "manifest.json", j);
  EXPECT_EQ(RunCli("train-cbl" + Cfg(toy), log_), 3);
  EXPECT_EQ(RunCli("train-head" + Cfg(toy), log_), 3);
}

TEST_F(Pipeline, TamperedBottleneckFails) {
  const fs::path toy = CopyRun();
  FlipByte(toy / "run" / "cbl" / "weights.bin", 5);
  EXPECT_EQ(RunCli("train-head" + Cfg(toy), log_), 3);
  EXPECT_EQ(RunCli("eval classify" + Cfg(toy), log_), 3);
}

TEST_F(Pipeline, TamperedHeadFails) {
  const fs::path toy = CopyRun();
  FlipByte(toy / "run" / "head" / "bias.bin", 2);
  EXPECT_EQ(RunCli("eval classify" + Cfg(toy), log_), 3);
  EXPECT_EQ(RunCli("explain --image " + AnImage(toy).string() + Cfg(toy), log_), 3);
}

TEST_F(Pipeline, HeadFromAnotherBottleneckFails) {
  const fs::path toy = CopyRun();
  Json j = ReadJson(toy / "run" / "head" / "head.json");
  j["bottleneck_checksum"] = std::string(64, 'a');
  WriteJson(toy / "run" / "head" / "head.json", j);
  EXPECT_EQ(RunCli("eval classify" + Cfg(toy), log_), 3);
}

TEST_F(Pipeline, MissingStageAndBadConfig) {
  const fs::path toy = CopyRun();
  fs::remove_all(toy / "run" / "cbl");
  EXPECT_EQ(RunCli("train-head" + Cfg(toy), log_), 4);
  std::ofstream(toy / "bad.json") << "{\"out_dir\": 3";
  EXPECT_EQ(RunCli("concepts --config " + (toy / "bad.json").string(), log_), 2);
  EXPECT_EQ(RunCli("train-head --no-such-flag" + Cfg(toy), log_), 2);
  Json cfg = ReadJson(toy / "config.json");
  cfg["head"]["alpha"] = 2.0;
  WriteJson(toy / "alpha.json", cfg);
  EXPECT_EQ(RunCli("concepts --config " + (toy / "alpha.json").string(), log_), 2);
}

TEST_F(Pipeline, HeldLockRefusesSecondWriter) {
  const fs::path toy = CopyRun();
  RunLock lock(toy / "run");
  EXPECT_EQ(RunCli("train-head" + Cfg(toy), log_), 4);
}

TEST(ExitCodes, Mapping) {
  EXPECT_EQ(ExitCodeFor(ErrorKind::kConfiguration), 2);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kInvalidInput), 2);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kProvenance), 3);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kIntegrity), 3);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kStageOrder), 4);
}

}  // namespace
}  // namespace scbm
