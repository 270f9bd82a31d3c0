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

// Acceptance checks: one PASS/FAIL line per criterion.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "scbm/concept_bottleneck.h"
#include "scbm/evaluator.h"
#include "scbm/explainer.h"
#include "scbm/pipeline.h"
#include "scbm/similarity_engine.h"
#include "scbm/sparse_head.h"
#include "test_support.h"

#include <CLI11.hpp>

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using scbm::Json;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

std::string Fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double Cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return d / std::sqrt(na * nb);
}

Outcome SimilarityOracle() {
  const auto start = Clock::now();
  std::mt19937 rng(1);
  std::vector<scbm::Image> images;
  for (int i = 0; i < 3; ++i) images.push_back(scbm::testing::RandomImage(48, 48, rng));
  scbm::InMemoryImages source(images, {"a", "b", "c"});
  std::vector<std::string> names;
  for (int m = 0; m < 5; ++m) names.push_back("concept " + std::to_string(m));
  const scbm::ConceptCatalog catalog(names, {"class"}, scbm::CatalogSource::kUserProvided);
  scbm::testing::PixelHashClient client(16);
  scbm::SimilarityOptions opt;
  opt.grid_h = opt.grid_w = 3;
  opt.radius = 6;
  opt.batch_size = 1;
  const auto p1 = scbm::ComputeSimilarities(source, catalog, client, opt);
  opt.batch_size = 16;
  const auto p16 = scbm::ComputeSimilarities(source, catalog, client, opt);

  const auto text = client.EncodeTexts(names);
  double worst = 0;
  for (int n = 0; n < 3; ++n) {
    for (int m = 0; m < 5; ++m) {
      for (int h = 0; h < 3; ++h) {
        for (int w = 0; w < 3; ++w) {
          const auto [cy, cx] = p1.grid.centers[static_cast<std::size_t>(h * 3 + w)];
          const scbm::Image aug = scbm::DrawCircle(images[static_cast<std::size_t>(n)], cy, cx, 6, 2.0);
          const auto e = client.EncodeImages(std::span<const scbm::Image>(&aug, 1))[0];
          worst = std::max(worst, std::abs(p1.values.at(n, m, h, w) -
                                           Cosine(e, text[static_cast<std::size_t>(m)])));
        }
      }
    }
  }
  const bool same = p1.values.values == p16.values.values;
  const double secs = Seconds(start);
  return {worst <= 1e-6 && same && secs < 10,
          "max |P - loop| " + Fmt(worst) + ", batch 1 vs 16 " + (same ? "bit-exact" : "DIFFER") +
              ", " + Fmt(secs) + " s"};
}

double LoopLoss(const scbm::Tensor4& c, const scbm::Tensor4& p) {
  double loss = 0;
  for (int m = 0; m < c.c; ++m) {
    for (int y = 0; y < c.h; ++y) {
      for (int x = 0; x < c.w; ++x) {
        double mq = 0, mp = 0;
        for (int b = 0; b < c.n; ++b) {
          mq += c.at(b, m, y, x) / c.n;
          mp += p.at(b, m, y, x) / c.n;
        }
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

Outcome CubicLoss() {
  std::mt19937 rng(2);
  double oracle_gap = 0;
  for (int t = 0; t < 20; ++t) {
    const auto c = scbm::testing::RandomTensor(6, 4, 3, 3, rng);
    const auto p = scbm::testing::RandomTensor(6, 4, 3, 3, rng);
    oracle_gap = std::max(oracle_gap, std::abs(scbm::CubicCosLoss(c, p) - LoopLoss(c, p)));
  }
  const auto p = scbm::testing::RandomTensor(8, 3, 2, 2, rng);
  const double bound = -3.0 * 2 * 2;
  const double at_equal = scbm::CubicCosLoss(p, p);
  // Any cell that is not a positive affine copy of P lifts the loss.
  bool strict = true;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    auto q = p;
    q.values[i] += 0.3f;
    strict = strict && scbm::CubicCosLoss(q, p) > bound + 1e-6;
  }

  auto c = scbm::testing::RandomTensor(8, 3, 2, 2, rng);
  scbm::Tensor4 grad;
  scbm::CubicCosLoss(c, p, &grad);
  double diff = 0, norm = 0;
  for (std::size_t i = 0; i < c.values.size(); ++i) {
    const float x = c.values[i];
    c.values[i] = x + 1e-3f;
    const double up = c.values[i] - static_cast<double>(x);
    const double hi = scbm::CubicCosLoss(c, p);
    c.values[i] = x - 1e-3f;
    const double down = x - static_cast<double>(c.values[i]);
    const double lo = scbm::CubicCosLoss(c, p);
    c.values[i] = x;
    const double fd = (hi - lo) / (up + down);
    diff += (fd - grad.values[i]) * (fd - grad.values[i]);
    norm += fd * fd;
  }
  const double rel = std::sqrt(diff / norm);
  const bool pass = oracle_gap <= 1e-6 && std::abs(at_equal - bound) <= 1e-9 && strict && rel <= 1e-4;
  return {pass, "max |loss - loop| " + Fmt(oracle_gap) + ", loss(P,P) " + Fmt(at_equal) +
                    " vs " + Fmt(bound) + (strict ? "" : " (NOT strict)") +
                    ", gradient rel err " + Fmt(rel)};
}

Outcome CblRecovery() {
  const auto start = Clock::now();
  auto task = scbm::testing::MakeSyntheticCbl(400, 24, 16, 3, 0.01, 3);
  scbm::CblTrainConfig cfg;
  cfg.steps = 2000;
  cfg.batch_size = 64;
  cfg.step_size = 0.01;
  cfg.seed = 0;
  const auto r = scbm::TrainBottleneck(task.bank, task.p, cfg);
  int good = 0;
  double worst = 1;
  for (double v : r.report.heldout_concept_cosine) {
    good += v >= 0.95;
    worst = std::min(worst, v);
  }
  const int m = static_cast<int>(r.report.heldout_concept_cosine.size());
  const double secs = Seconds(start);
  return {good >= 0.9 * m && secs < 300,
          std::to_string(good) + "/" + std::to_string(m) + " concepts >= 0.95 (min " + Fmt(worst) +
              "), " + Fmt(secs) + " s"};
}

Outcome HeadSolver() {
  struct Toy {
    int n, m, l;
    double spread, alpha, lambda;
  };
  const std::vector<Toy> toys = {{200, 20, 5, 1.5, 0.99, 2.0},
                                 {120, 10, 3, 1.0, 0.5, 1.0},
                                 {60, 4, 2, 2.0, 1.0, 0.5},
                                 {150, 12, 4, 1.2, 0.0, 4.0}};
  double solver_secs = 0, worst_kkt = 0, worst_gap = 0;
  bool zero_ok = true, monotone = true;
  for (std::size_t i = 0; i < toys.size(); ++i) {
    const Toy& t = toys[i];
    const auto toy = scbm::testing::MakeHeadToy(t.n, t.m, t.l, t.spread, static_cast<std::uint32_t>(i));
    auto start = Clock::now();
    const auto fit = scbm::TrainHead(toy.x, toy.labels, t.l, t.alpha, t.lambda, {});
    const auto huge = scbm::TrainHead(toy.x, toy.labels, t.l, t.alpha, 1e6, {});
    const std::vector<double> lambdas = {0.25, 1, 4, 16, 64, 1e6};
    const auto path = scbm::FitRegularizationPath(toy.x, toy.labels, t.l, std::max(t.alpha, 0.5),
                                                  lambdas, {});
    solver_secs += Seconds(start);
    worst_kkt = std::max(worst_kkt, scbm::KktResidual(toy.x, toy.labels, fit.report.weight,
                                                      fit.report.bias, t.alpha, t.lambda));
    for (const auto& e : path.table) worst_kkt = std::max(worst_kkt, e.kkt_residual);
    const auto ref = scbm::testing::ReferenceProxGrad(toy.x, toy.labels, t.l, t.alpha, t.lambda, 40000);
    worst_gap = std::max(worst_gap, std::abs(fit.report.objective - ref.objective) / std::abs(ref.objective));
    if (t.alpha > 0) zero_ok = zero_ok && huge.head.nnz() == 0;
    zero_ok = zero_ok && path.table.back().nnz == 0;
    for (std::size_t k = 1; k < path.table.size(); ++k) {
      monotone = monotone && path.table[k].nnz <= path.table[k - 1].nnz;
    }
  }
  const bool pass = worst_kkt <= 1e-4 && worst_gap <= 1e-6 && zero_ok && monotone && solver_secs < 30;
  return {pass, "max KKT " + Fmt(worst_kkt) + ", max objective gap " + Fmt(worst_gap) +
                    ", lambda=1e6 nnz (alpha > 0) " + (zero_ok ? "0" : "NONZERO") + ", path " +
                    (monotone ? "monotone" : "NOT monotone") + ", " + Fmt(solver_secs) + " s"};
}

Outcome Intervention() {
  const auto bundle = scbm::testing::MakeFixtureBundle(5);
  const auto& head = bundle.head();
  const int cells = bundle.grid().cells();
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> pick(0, bundle.catalog().size() - 1);
  std::uniform_real_distribution<double> beta(-2, 2);
  std::bernoulli_distribution coin(0.4);
  const auto maps = scbm::testing::RandomVolume(bundle.catalog().size(), bundle.grid().grid_h,
                                                bundle.grid().grid_w, rng);
  const Eigen::VectorXf base = bundle.FromMaps(maps).prediction.logits;
  auto delta = [&](const std::vector<scbm::EditRecord>& edits) {
    return Eigen::VectorXf(bundle.FromMaps(scbm::Intervene(maps, edits)).prediction.logits - base);
  };
  auto random_mask = [&](std::vector<std::uint8_t>* cells_out = nullptr) {
    std::vector<std::uint8_t> c(static_cast<std::size_t>(cells));
    for (auto& v : c) v = coin(rng);
    if (cells_out) *cells_out = c;
    return scbm::RoiMask::FromGrid(bundle.grid().grid_h, bundle.grid().grid_w, c);
  };
  double closed = 0, additive = 0, linear = 0;
  for (int t = 0; t < 100; ++t) {
    const scbm::EditRecord e{pick(rng), random_mask(), beta(rng), "", ""};
    const Eigen::VectorXf d = delta({e});
    for (int l = 0; l < head.classes(); ++l) {
      const double want = head.at(e.m, l) * e.beta * e.mask.count() /
                          (static_cast<double>(cells) * head.stats.stddev(e.m));
      closed = std::max(closed, std::abs(d(l) - want));
    }
    std::vector<std::uint8_t> a_cells;
    const auto a = random_mask(&a_cells);
    std::vector<std::uint8_t> b_cells(a_cells.size());
    for (std::size_t i = 0; i < b_cells.size(); ++i) b_cells[i] = a_cells[i] ? 0 : coin(rng);
    const auto b = scbm::RoiMask::FromGrid(bundle.grid().grid_h, bundle.grid().grid_w, b_cells);
    const scbm::EditRecord ea{e.m, a, e.beta, "", ""}, eb{pick(rng), b, beta(rng), "", ""};
    additive = std::max<double>(additive, (delta({ea, eb}) - delta({ea}) - delta({eb})).cwiseAbs().maxCoeff());
    scbm::EditRecord scaled = ea;
    scaled.beta *= 3;
    linear = std::max<double>(linear, (delta({scaled}) - 3 * delta({ea})).cwiseAbs().maxCoeff());
  }
  return {closed <= 1e-5 && additive <= 1e-5 && linear <= 1e-5,
          "max |delta - closed form| " + Fmt(closed) + ", additivity " + Fmt(additive) +
              ", beta-linearity " + Fmt(linear) + " (float logits)"};
}

Outcome Segmentation() {
  scbm::SegSample hand{"hand", 4, 4, std::vector<float>(16, 0.0f), std::vector<std::uint8_t>(16, 0)};
  for (int i : {0, 1, 2, 4, 5, 6}) hand.ground_truth[static_cast<std::size_t>(i)] = 1;
  for (int i : {0, 1, 2, 15}) hand.heatmap[static_cast<std::size_t>(i)] = 1.0f;
  const auto r = scbm::SegMetrics(std::vector<scbm::SegSample>{hand}, scbm::ThresholdPolicy::Fixed(0.5));
  const bool hand_ok = r.foreground_iou == 3.0 / 7.0 && r.pixel_accuracy == 12.0 / 16.0;

  std::mt19937 rng(6);
  std::uniform_real_distribution<float> u(-1, 1);
  std::bernoulli_distribution coin(0.4);
  std::vector<scbm::SegSample> samples;
  for (int i = 0; i < 12; ++i) {
    scbm::SegSample s{"s" + std::to_string(i), 8, 8, {}, {}};
    for (int p = 0; p < 64; ++p) {
      const bool fg = coin(rng);
      s.ground_truth.push_back(fg);
      s.heatmap.push_back(u(rng) + (fg ? 0.4f : 0.0f));
    }
    samples.push_back(std::move(s));
  }
  const double before = scbm::SegMetrics(samples, scbm::ThresholdPolicy::Mean()).map;
  for (auto& s : samples) {
    for (auto& v : s.heatmap) v = v * v * v + 1.0f;
  }
  const double after = scbm::SegMetrics(samples, scbm::ThresholdPolicy::Mean()).map;
  for (auto& s : samples) {
    for (std::size_t p = 0; p < s.heatmap.size(); ++p) s.heatmap[p] = s.ground_truth[p];
  }
  const auto perfect = scbm::SegMetrics(samples, scbm::ThresholdPolicy::Mean());
  const bool perfect_ok = perfect.pixel_accuracy == 1 && perfect.miou == 1 && perfect.map == 1;
  return {hand_ok && std::abs(after - before) <= 1e-9 && perfect_ok,
          "hand fg IoU " + Fmt(r.foreground_iou) + " acc " + Fmt(r.pixel_accuracy) +
              ", mAP shift under v^3+1 " + Fmt(std::abs(after - before)) + ", perfect (" +
              Fmt(perfect.pixel_accuracy) + "," + Fmt(perfect.miou) + "," + Fmt(perfect.map) + ")"};
}

Outcome DeskScale(const std::string& config_path) {
  if (config_path.empty()) {
    return {false, "no desk-scale config: needs a real CLIP-class encoder, a pre-trained backbone "
                   "(ONNX) and a ~2,000 image 10-class subset; pass --desk-config"};
  }
  const auto start = Clock::now();
  try {
    const auto cfg = scbm::RunConfig::Load(config_path);
    if (cfg.encoder.kind != "onnx" || cfg.backbone_impl.impl != "onnx") {
      return {false, "desk-scale run needs an onnx encoder and an onnx backbone"};
    }
    scbm::RunConcepts(cfg);
    scbm::RunSimilarities(cfg, true);
    scbm::RunTrainCbl(cfg);
    scbm::RunTrainHead(cfg);
    const double sparse = scbm::RunEvalClassify(cfg, std::nullopt)["accuracy"];
    const std::vector<double> lambdas = {0.01, 0.1, 1.0, 10.0};
    const double dense = scbm::RunDenseProbe(cfg, lambdas)["val_accuracy"];
    const double hours = Seconds(start) / 3600;
    return {sparse >= dense - 0.05 && hours < 8,
            "sparse top-1 " + Fmt(sparse) + " vs dense probe " + Fmt(dense) + ", " + Fmt(hours) + " h"};
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
}

int RunCli(const std::string& cli, const std::string& args, const fs::path& log) {
  const std::string cmd = cli + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome Provenance(const std::string& cli) {
  scbm::testing::TempDir dir;
  const fs::path log = dir / "log.txt";
  const fs::path toy = dir / "toy";
  const std::string cfg = " --config " + (toy / "config.json").string();
  if (RunCli(cli, "make-toy --per-class 6 --val-per-class 2 --out " + toy.string(), log) != 0 ||
      RunCli(cli, "concepts" + cfg, log) != 0 || RunCli(cli, "similarities" + cfg, log) != 0 ||
      RunCli(cli, "train-cbl --steps 200 --batch-size 16" + cfg, log) != 0 || RunCli(cli, "train-head" + cfg, log) != 0) {
    return {false, "toy pipeline did not complete: " + scbm::ReadFile(log)};
  }
  const fs::path pristine = dir / "pristine";
  fs::copy(toy, pristine, fs::copy_options::recursive);
  auto restore = [&] {
    fs::remove_all(toy);
    fs::copy(pristine, toy, fs::copy_options::recursive);
  };
  auto flip = [](const fs::path& p, std::size_t at) {
    std::string bytes = scbm::ReadFile(p);
    bytes[at] = static_cast<char>(bytes[at] ^ 0x10);
    std::ofstream(p, std::ios::binary | std::ios::trunc) << bytes;
  };
  auto edit_json = [](const fs::path& p, const std::function<void(Json&)>& f) {
    Json j = scbm::ReadJson(p);
    f(j);
    scbm::WriteJson(p, j);
  };
  const fs::path run = toy / "run";
  struct Case {
    std::string name;
    std::function<void()> tamper;
    std::string command;
  };
  const std::vector<Case> cases = {
      {"catalog text", [&] { edit_json(run / "catalog.json", [](Json& j) { j["concepts"][0] = "x y z"; }); },
       "similarities"},
      {"catalog hash", [&] { edit_json(run / "catalog.json", [](Json& j) { j["content_hash"] = "00"; }); },
       "train-cbl"},
      {"similarity manifest hash",
       [&] { edit_json(run / "similarities" / "manifest.json", [](Json& j) { j["catalog_hash"] = "00"; }); },
       "train-cbl"},
      {"similarity values", [&] {
         for (const auto& e : fs::directory_iterator(run / "similarities")) {
           if (e.path().extension() == ".bin") {
             flip(e.path(), 9);
             break;
           }
         }
       }, "train-cbl"},
      {"bottleneck weights", [&] { flip(run / "cbl" / "weights.bin", 3); }, "train-head"},
      {"bottleneck catalog hash",
       [&] { edit_json(run / "cbl" / "bottleneck.json", [](Json& j) { j["catalog_hash"] = "00"; }); },
       "train-head"},
      {"head weights", [&] { flip(run / "head" / "weights_coo.bin", 9); }, "eval classify"},
      {"head bottleneck checksum",
       [&] { edit_json(run / "head" / "head.json", [](Json& j) { j["bottleneck_checksum"] = "00"; }); },
       "eval classify"},
  };
  int ok = 0;
  std::string failures;
  for (const auto& c : cases) {
    restore();
    c.tamper();
    const int code = RunCli(cli, c.command + cfg, log);
    if (code == 3) ++ok;
    else failures += " [" + c.name + " -> exit " + std::to_string(code) + "]";
  }
  return {ok == static_cast<int>(cases.size()),
          std::to_string(ok) + "/" + std::to_string(cases.size()) + " tampered artifacts exit 3" + failures};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scbm acceptance checks"};
  std::string cli = SCBM_CLI;
  std::string desk_config;
  std::vector<int> only, skip;
  app.add_option("--cli", cli, "scbm command-line binary");
  app.add_option("--desk-config", desk_config, "run config for the desk-scale end-to-end check");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--skip", skip, "criteria to leave out")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, SimilarityOracle},
      {2, CubicLoss},
      {3, CblRecovery},
      {4, HeadSolver},
      {5, Intervention},
      {6, Segmentation},
      {7, [&] { return DeskScale(desk_config); }},
      {8, [&] { return Provenance(cli); }},
  };
  const std::set<int> only_set(only.begin(), only.end()), skip_set(skip.begin(), skip.end());
  int failed = 0;
  for (const auto& [id, check] : criteria) {
    if ((!only_set.empty() && !only_set.count(id)) || skip_set.count(id)) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
