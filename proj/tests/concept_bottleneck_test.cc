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

#include "scbm/concept_bottleneck.h"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "test_support.h"

namespace scbm {
namespace {

using testing::KindOf;
using testing::RandomTensor;
using testing::TempDir;

// Straight transcription of the loss for one tensor pair, in double.
double LoopLoss(const Tensor4& c, const Tensor4& p) {
  double loss = 0;
  for (int m = 0; m < c.c; ++m) {
    for (int y = 0; y < c.h; ++y) {
      for (int x = 0; x < c.w; ++x) {
        double mq = 0, mp = 0;
        for (int b = 0; b < c.n; ++b) {
          mq += c.at(b, m, y, x);
          mp += p.at(b, m, y, x);
        }
        mq /= c.n;
        mp /= c.n;
        double dot = 0, nq = 0, np = 0;
        for (int b = 0; b < c.n; ++b) {
          const double q3 = std::pow(c.at(b, m, y, x) - mq, 3);
          const double p3 = std::pow(p.at(b, m, y, x) - mp, 3);
          dot += q3 * p3;
          nq += q3 * q3;
          np += p3 * p3;
        }
        if (nq > 0 && np > 0) loss -= dot / std::sqrt(nq * np);
      }
    }
  }
  return loss;
}

TEST(Project, MatchesLoops) {
  std::mt19937 rng(1);
  BottleneckWeights w;
  w.weight = RowMatrixXf::Random(3, 4);
  const Volume f = testing::RandomVolume(4, 2, 2, rng);
  const auto c = Project(f, w);
  for (int m = 0; m < 3; ++m) {
    for (int y = 0; y < 2; ++y) {
      for (int x = 0; x < 2; ++x) {
        double s = 0;
        for (int d = 0; d < 4; ++d) s += w.weight(m, d) * f.at(d, y, x);
        EXPECT_NEAR(c.at(m, y, x), s, 1e-6);
      }
    }
  }
}

TEST(Project, IdentityZeroAndMismatch) {
  std::mt19937 rng(2);
  const Volume f = testing::RandomVolume(5, 3, 3, rng);
  BottleneckWeights w;
  w.weight = RowMatrixXf::Identity(5, 5);
  EXPECT_EQ(Project(f, w), f);
  w.weight = RowMatrixXf::Zero(2, 5);
  const ConceptMaps zero = Project(f, w);
  for (float v : zero.values()) EXPECT_EQ(v, 0.0f);
  w.weight = RowMatrixXf::Zero(2, 4);
  EXPECT_EQ(KindOf([&] { Project(f, w); }), ErrorKind::kGeometry);
  EXPECT_EQ(w.parameter_count(), 8);
}

TEST(CubicCosLoss, HandExample) {
  Tensor4 c(3, 1, 1, 1), p(3, 1, 1, 1);
  c.values = {1, 2, 3};
  p.values = {3, 2, 1};
  EXPECT_NEAR(CubicCosLoss(c, p), 1.0, 1e-12);
}

TEST(CubicCosLoss, MatchesLoopOracle) {
  for (std::uint32_t seed = 0; seed < 20; ++seed) {
    std::mt19937 rng(seed);
    const Tensor4 c = RandomTensor(6, 4, 3, 2, rng);
    const Tensor4 p = RandomTensor(6, 4, 3, 2, rng);
    const double loss = CubicCosLoss(c, p);
    EXPECT_NEAR(loss, LoopLoss(c, p), 1e-6);
    EXPECT_LE(std::abs(loss), 4 * 3 * 2 + 1e-9);
  }
}

TEST(CubicCosLoss, ExtremesAtEqualAndNegated) {
  std::mt19937 rng(3);
  const Tensor4 p = RandomTensor(5, 3, 2, 2, rng);
  EXPECT_NEAR(CubicCosLoss(p, p), -12.0, 1e-9);
  Tensor4 neg = p;
  for (auto& v : neg.values) v = -v;
  EXPECT_NEAR(CubicCosLoss(neg, p), 12.0, 1e-9);
}

TEST(CubicCosLoss, ShiftAndScaleInvariance) {
  std::mt19937 rng(4);
  const Tensor4 c = RandomTensor(7, 2, 2, 2, rng);
  const Tensor4 p = RandomTensor(7, 2, 2, 2, rng);
  Tensor4 shifted = c, scaled = c;
  for (int m = 0; m < 2; ++m) {
    for (int y = 0; y < 2; ++y) {
      for (int x = 0; x < 2; ++x) {
        for (int b = 0; b < 7; ++b) {
          shifted.at(b, m, y, x) += 0.25f * static_cast<float>(m + 2 * y + x);
          scaled.at(b, m, y, x) *= 1.0f + static_cast<float>(m + y + x);
        }
      }
    }
  }
  EXPECT_NEAR(CubicCosLoss(shifted, p), CubicCosLoss(c, p), 1e-5);
  EXPECT_NEAR(CubicCosLoss(scaled, p), CubicCosLoss(c, p), 1e-6);
}

TEST(CubicCosLoss, ConstantCellsContributeZero) {
  Tensor4 c(4, 1, 1, 2, 0.5f), p(4, 1, 1, 2);
  p.values = {1, 2, 3, 4, 5, 6, 7, 8};
  Tensor4 grad;
  EXPECT_EQ(CubicCosLoss(c, p, &grad), 0.0);
  for (float g : grad.values) EXPECT_EQ(g, 0.0f);
}

TEST(CubicCosLoss, Errors) {
  EXPECT_EQ(KindOf([] { CubicCosLoss(Tensor4(2, 1, 1, 1), Tensor4(2, 2, 1, 1)); }),
            ErrorKind::kGeometry);
  EXPECT_EQ(KindOf([] { CubicCosLoss(Tensor4(1, 1, 1, 1), Tensor4(1, 1, 1, 1)); }),
            ErrorKind::kInvalidInput);
}

TEST(CubicCosLoss, GradientMatchesCentralDifferences) {
  for (std::uint32_t seed = 0; seed < 5; ++seed) {
    std::mt19937 rng(100 + seed);
    Tensor4 c = RandomTensor(8, 3, 2, 2, rng);
    const Tensor4 p = RandomTensor(8, 3, 2, 2, rng);
    Tensor4 grad;
    CubicCosLoss(c, p, &grad);
    double diff = 0, norm = 0;
    for (std::size_t i = 0; i < c.values.size(); ++i) {
      const float x = c.values[i];
      c.values[i] = x + 1e-3f;
      const double hi = CubicCosLoss(c, p);
      const double up = static_cast<double>(c.values[i]) - x;
      c.values[i] = x - 1e-3f;
      const double lo = CubicCosLoss(c, p);
      const double down = x - static_cast<double>(c.values[i]);
      c.values[i] = x;
      const double fd = (hi - lo) / (up + down);
      diff += (fd - grad.values[i]) * (fd - grad.values[i]);
      norm += fd * fd;
    }
    EXPECT_LE(std::sqrt(diff / norm), 1e-4) << "seed " << seed;
  }
}

TEST(TrainBottleneck, RecoversHiddenLinearMap) {
  auto s = testing::MakeSyntheticCbl(240, 12, 8, 3, 0.01, 7);
  CblTrainConfig cfg;
  cfg.steps = 1500;
  cfg.batch_size = 32;
  cfg.step_size = 0.01;
  cfg.seed = 3;
  const auto r = TrainBottleneck(s.bank, s.p, cfg);
  int good = 0;
  for (double v : r.report.heldout_concept_cosine) good += v >= 0.95;
  EXPECT_GE(good, static_cast<int>(std::ceil(0.9 * 8)));
  EXPECT_EQ(r.weights.parameter_count(), 8 * 12);
  EXPECT_EQ(r.report.heldout_ids.size(), 24u);
  EXPECT_LT(r.report.final_heldout_loss, -0.9);
}

TEST(TrainBottleneck, DeterministicGivenSeed) {
  auto s = testing::MakeSyntheticCbl(40, 5, 3, 2, 0.01, 1);
  CblTrainConfig cfg;
  cfg.steps = 30;
  cfg.batch_size = 8;
  const auto a = TrainBottleneck(s.bank, s.p, cfg);
  const auto b = TrainBottleneck(s.bank, s.p, cfg);
  EXPECT_EQ(a.weights.weight, b.weights.weight);
  cfg.seed = 9;
  EXPECT_NE(TrainBottleneck(s.bank, s.p, cfg).weights.weight, a.weights.weight);
}

TEST(TrainBottleneck, ZeroInitZeroStepsGivesGuardLoss) {
  auto s = testing::MakeSyntheticCbl(20, 4, 2, 2, 0.01, 2);
  CblTrainConfig cfg;
  cfg.steps = 0;
  cfg.batch_size = 4;
  cfg.init = "zero";
  const auto r = TrainBottleneck(s.bank, s.p, cfg);
  EXPECT_EQ(r.report.final_heldout_loss, 0.0);
  EXPECT_TRUE(r.weights.weight.isZero());
}

TEST(TrainBottleneck, InsufficientData) {
  auto s = testing::MakeSyntheticCbl(10, 4, 2, 2, 0.01, 2);
  CblTrainConfig cfg;
  cfg.batch_size = 8;
  EXPECT_EQ(KindOf([&] { TrainBottleneck(s.bank, s.p, cfg); }), ErrorKind::kInsufficientData);
}

TEST(TrainBottleneck, DivergenceNamesStep) {
  auto s = testing::MakeSyntheticCbl(20, 4, 2, 2, 0.01, 2);
  s.p.values.values[3] = std::nanf("");
  CblTrainConfig cfg;
  cfg.steps = 5;
  cfg.batch_size = 4;
  cfg.validation_fraction = 0;
  try {
    TrainBottleneck(s.bank, s.p, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDivergence);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Bottleneck, SaveLoadAndTamper) {
  TempDir dir;
  BottleneckWeights w;
  w.weight = RowMatrixXf::Random(4, 6);
  w.catalog_hash = "abc";
  w.backbone_id = "bb";
  w.grid_h = 3;
  w.grid_w = 2;
  SaveBottleneck(w, dir / "cbl", {{"note", 1}});
  const auto back = LoadBottleneck(dir / "cbl");
  EXPECT_EQ(back.weight, w.weight);
  EXPECT_EQ(back.catalog_hash, "abc");
  EXPECT_EQ(back.backbone_id, "bb");
  EXPECT_EQ(back.grid_h, 3);
  EXPECT_EQ(back.Checksum(), w.Checksum());

  std::string bytes = ReadFile(dir / "cbl" / "weights.bin");
  bytes[0] = static_cast<char>(bytes[0] ^ 1);
  std::ofstream(dir / "cbl" / "weights.bin", std::ios::binary) << bytes;
  EXPECT_EQ(KindOf([&] { LoadBottleneck(dir / "cbl"); }), ErrorKind::kProvenance);
  EXPECT_EQ(KindOf([&] { LoadBottleneck(dir / "missing"); }), ErrorKind::kStageOrder);
}

}  // namespace
}  // namespace scbm
