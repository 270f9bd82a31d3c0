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

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "scbm/errors.h"

namespace scbm {
namespace {

// One (m, cell) column across the batch. Returns the cosine term and, when
// `dq` is non-null, writes d(sim)/dq for each batch element.
double CellSim(const double* q, const double* p, int batch, double* dq) {
  double qmean = 0, pmean = 0;
  for (int b = 0; b < batch; ++b) {
    qmean += q[b];
    pmean += p[b];
  }
  qmean /= batch;
  pmean /= batch;
  std::vector<double> qc(static_cast<std::size_t>(batch)), u(qc.size()), v(qc.size());
  double uu = 0, vv = 0, uv = 0;
  for (int b = 0; b < batch; ++b) {
    qc[b] = q[b] - qmean;
    u[b] = qc[b] * qc[b] * qc[b];
    const double pc = p[b] - pmean;
    v[b] = pc * pc * pc;
    uu += u[b] * u[b];
    vv += v[b] * v[b];
    uv += u[b] * v[b];
  }
  if (uu == 0 || vv == 0) {
    if (dq) std::fill(dq, dq + batch, 0.0);
    return 0.0;
  }
  const double nu = std::sqrt(uu);
  const double nv = std::sqrt(vv);
  const double sim = uv / (nu * nv);
  if (dq) {
    double mean_g = 0;
    for (int b = 0; b < batch; ++b) {
      const double ds_du = v[b] / (nu * nv) - sim * u[b] / uu;
      dq[b] = ds_du * 3.0 * qc[b] * qc[b];
      mean_g += dq[b];
    }
    mean_g /= batch;
    for (int b = 0; b < batch; ++b) dq[b] -= mean_g;
  }
  return sim;
}

void CheckLossShapes(const Tensor4& c, const Tensor4& p) {
  if (!c.SameShape(p)) Fail(ErrorKind::kGeometry, "C and P shapes differ");
  if (c.n < 2) Fail(ErrorKind::kInvalidInput, "batch centering needs at least 2 samples");
}

}  // namespace

std::string BottleneckWeights::Checksum() const {
  return Sha256Hex(std::span<const float>(weight.data(), static_cast<std::size_t>(weight.size())));
}

ConceptMaps Project(const Volume& features, const BottleneckWeights& weights) {
  if (features.channels() != weights.feature_dim()) {
    Fail(ErrorKind::kGeometry, "feature channels " + std::to_string(features.channels()) +
                                   " != bottleneck input dim " +
                                   std::to_string(weights.feature_dim()));
  }
  const int cells = features.plane_size();
  Eigen::Map<const RowMatrixXf> f(features.values().data(), features.channels(), cells);
  ConceptMaps out(weights.concepts(), features.height(), features.width());
  Eigen::Map<RowMatrixXf> c(out.values().data(), weights.concepts(), cells);
  c.noalias() = weights.weight * f;
  return out;
}

double CubicCosLoss(const Tensor4& c, const Tensor4& p, Tensor4* grad) {
  CheckLossShapes(c, p);
  const int batch = c.n;
  if (grad) *grad = Tensor4(c.n, c.c, c.h, c.w);
  std::vector<double> q(static_cast<std::size_t>(batch)), t(q.size()), dq(q.size());
  double loss = 0;
  for (int m = 0; m < c.c; ++m) {
    for (int y = 0; y < c.h; ++y) {
      for (int x = 0; x < c.w; ++x) {
        for (int b = 0; b < batch; ++b) {
          q[b] = c.at(b, m, y, x);
          t[b] = p.at(b, m, y, x);
        }
        loss -= CellSim(q.data(), t.data(), batch, grad ? dq.data() : nullptr);
        if (grad) {
          for (int b = 0; b < batch; ++b) grad->at(b, m, y, x) = static_cast<float>(-dq[b]);
        }
      }
    }
  }
  return loss;
}

std::vector<double> PerConceptCubicCosine(const Tensor4& c, const Tensor4& p) {
  CheckLossShapes(c, p);
  std::vector<double> out(static_cast<std::size_t>(c.c), 0.0);
  std::vector<double> q(static_cast<std::size_t>(c.n)), t(q.size());
  for (int m = 0; m < c.c; ++m) {
    for (int y = 0; y < c.h; ++y) {
      for (int x = 0; x < c.w; ++x) {
        for (int b = 0; b < c.n; ++b) {
          q[b] = c.at(b, m, y, x);
          t[b] = p.at(b, m, y, x);
        }
        out[m] += CellSim(q.data(), t.data(), c.n, nullptr);
      }
    }
    out[m] /= c.h * c.w;
  }
  return out;
}

FeatureBank::FeatureBank(int feature_dim, int grid_h, int grid_w, std::string backbone_id)
    : dim_(feature_dim), grid_h_(grid_h), grid_w_(grid_w), backbone_id_(std::move(backbone_id)) {}

void FeatureBank::Add(const std::string& image_id, const Volume& features) {
  if (features.channels() != dim_ || features.height() != grid_h_ ||
      features.width() != grid_w_) {
    Fail(ErrorKind::kGeometry, "features for " + image_id + " do not match the bank shape");
  }
  if (!features.AllFinite()) Fail(ErrorKind::kInvalidInput, "non-finite features for " + image_id);
  ids_.push_back(image_id);
  data_.insert(data_.end(), features.values().begin(), features.values().end());
}

Eigen::Map<const RowMatrixXf> FeatureBank::features(int n) const {
  const std::size_t per = static_cast<std::size_t>(dim_) * grid_h_ * grid_w_;
  return {data_.data() + per * n, dim_, grid_h_ * grid_w_};
}

Volume FeatureBank::volume(int n) const {
  const std::size_t per = static_cast<std::size_t>(dim_) * grid_h_ * grid_w_;
  return Volume(dim_, grid_h_, grid_w_,
                std::vector<float>(data_.begin() + static_cast<std::ptrdiff_t>(per * n),
                                   data_.begin() + static_cast<std::ptrdiff_t>(per * (n + 1))));
}

void CblTrainConfig::Validate() const {
  if (batch_size < 2) Fail(ErrorKind::kConfiguration, "batch_size must be >= 2");
  if (steps < 0) Fail(ErrorKind::kConfiguration, "steps must be >= 0");
  if (!(step_size > 0)) Fail(ErrorKind::kConfiguration, "step_size must be positive");
  if (validation_fraction < 0 || validation_fraction >= 1) {
    Fail(ErrorKind::kConfiguration, "validation_fraction must lie in [0, 1)");
  }
  if (init != "random" && init != "zero") {
    Fail(ErrorKind::kConfiguration, "init must be 'random' or 'zero'");
  }
  if (eval_every < 1) Fail(ErrorKind::kConfiguration, "eval_every must be >= 1");
}

Json CblTrainConfig::ToJson() const {
  return {{"step_size", step_size}, {"steps", steps}, {"batch_size", batch_size},
          {"validation_fraction", validation_fraction}, {"seed", seed},
          {"init", init}, {"init_scale", init_scale}, {"beta1", beta1},
          {"beta2", beta2}, {"epsilon", epsilon}, {"cosine_decay", cosine_decay},
          {"eval_every", eval_every}};
}

CblTrainConfig CblTrainConfig::FromJson(const Json& json) {
  CblTrainConfig c;
  c.step_size = json.value("step_size", c.step_size);
  c.steps = json.value("steps", c.steps);
  c.batch_size = json.value("batch_size", c.batch_size);
  c.validation_fraction = json.value("validation_fraction", c.validation_fraction);
  c.seed = json.value("seed", c.seed);
  c.init = json.value("init", c.init);
  c.init_scale = json.value("init_scale", c.init_scale);
  c.beta1 = json.value("beta1", c.beta1);
  c.beta2 = json.value("beta2", c.beta2);
  c.epsilon = json.value("epsilon", c.epsilon);
  c.cosine_decay = json.value("cosine_decay", c.cosine_decay);
  c.eval_every = json.value("eval_every", c.eval_every);
  c.Validate();
  return c;
}

Json CblTrainReport::ToJson() const {
  Json held = Json::array();
  for (const auto& [step, loss] : heldout_loss) held.push_back({step, loss});
  return {{"final_train_loss", step_loss.empty() ? 0.0 : step_loss.back()},
          {"final_heldout_loss", final_heldout_loss},
          {"heldout_loss", held},
          {"heldout_concept_cosine", heldout_concept_cosine},
          {"steps", step_loss.size()}};
}

Tensor4 ProjectAll(const FeatureBank& features, const BottleneckWeights& weights) {
  const int cells = features.grid_h() * features.grid_w();
  Tensor4 out(features.size(), weights.concepts(), features.grid_h(), features.grid_w());
  for (int n = 0; n < features.size(); ++n) {
    Eigen::Map<RowMatrixXf> c(out.values.data() + static_cast<std::size_t>(n) * out.c * cells,
                              out.c, cells);
    c.noalias() = weights.weight * features.features(n);
  }
  return out;
}

namespace {

Tensor4 Gather(const Tensor4& all, const std::vector<int>& idx) {
  Tensor4 out(static_cast<int>(idx.size()), all.c, all.h, all.w);
  const std::size_t per = static_cast<std::size_t>(all.c) * all.h * all.w;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(all.values.begin() + static_cast<std::ptrdiff_t>(per * idx[i]), per,
                out.values.begin() + static_cast<std::ptrdiff_t>(per * i));
  }
  return out;
}

}  // namespace

CblTrainResult TrainBottleneck(const FeatureBank& features, const SimilarityMatrix& p,
                               const CblTrainConfig& cfg) {
  cfg.Validate();
  const int n = features.size();
  if (p.image_manifest != features.ids()) {
    Fail(ErrorKind::kInvalidInput, "feature bank image order differs from P's image manifest");
  }
  if (p.grid.grid_h != features.grid_h() || p.grid.grid_w != features.grid_w()) {
    Fail(ErrorKind::kGeometry, "feature grid differs from P's grid");
  }
  if (n < 2 * cfg.batch_size) {
    Fail(ErrorKind::kInsufficientData, std::to_string(n) + " images < 2 x batch size " +
                                           std::to_string(cfg.batch_size));
  }
  const int m = p.num_concepts();
  const int d = features.feature_dim();
  const int cells = p.grid.cells();

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  int held = static_cast<int>(std::floor(cfg.validation_fraction * n));
  if (held == 1) held = 2;
  std::vector<int> heldout(order.begin(), order.begin() + held);
  std::vector<int> train(order.begin() + held, order.end());
  std::sort(heldout.begin(), heldout.end());
  const int batch = std::min<int>(cfg.batch_size, static_cast<int>(train.size()));

  BottleneckWeights w;
  w.catalog_hash = p.catalog_hash;
  w.backbone_id = features.backbone_id();
  w.grid_h = p.grid.grid_h;
  w.grid_w = p.grid.grid_w;
  w.weight = RowMatrixXf::Zero(m, d);
  if (cfg.init == "random") {
    std::normal_distribution<float> normal(0.0f, static_cast<float>(cfg.init_scale / std::sqrt(d)));
    for (Eigen::Index i = 0; i < w.weight.size(); ++i) w.weight.data()[i] = normal(rng);
  }

  CblTrainReport report;
  const Tensor4 held_p = Gather(p.values, heldout);
  auto evaluate = [&](int step) {
    if (held < 2) return;
    Tensor4 c(held, m, w.grid_h, w.grid_w);
    for (int i = 0; i < held; ++i) {
      Eigen::Map<RowMatrixXf> ci(c.values.data() + static_cast<std::size_t>(i) * m * cells, m, cells);
      ci.noalias() = w.weight * features.features(heldout[i]);
    }
    const double loss = CubicCosLoss(c, held_p) / (static_cast<double>(m) * cells);
    report.heldout_loss.emplace_back(step, loss);
    report.final_heldout_loss = loss;
  };

  Eigen::MatrixXd m1 = Eigen::MatrixXd::Zero(m, d);
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(m, d);
  std::size_t cursor = train.size();
  Tensor4 cb(batch, m, w.grid_h, w.grid_w);
  Tensor4 pb(batch, m, w.grid_h, w.grid_w);
  Tensor4 grad;
  const std::size_t per = static_cast<std::size_t>(m) * cells;
  std::vector<int> idx(static_cast<std::size_t>(batch));
  for (int step = 0; step < cfg.steps; ++step) {
    for (int b = 0; b < batch; ++b) {
      if (cursor >= train.size()) {
        std::shuffle(train.begin(), train.end(), rng);
        cursor = 0;
      }
      idx[b] = train[cursor++];
    }
    for (int b = 0; b < batch; ++b) {
      Eigen::Map<RowMatrixXf> cm(cb.values.data() + per * b, m, cells);
      cm.noalias() = w.weight * features.features(idx[b]);
      std::copy_n(p.values.values.begin() + static_cast<std::ptrdiff_t>(per * idx[b]), per,
                  pb.values.begin() + static_cast<std::ptrdiff_t>(per * b));
    }
    const double loss = CubicCosLoss(cb, pb, &grad);
    if (!std::isfinite(loss)) {
      Fail(ErrorKind::kDivergence, "non-finite loss at step " + std::to_string(step));
    }
    report.step_loss.push_back(loss);

    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m, d);
    for (int b = 0; b < batch; ++b) {
      Eigen::Map<const RowMatrixXf> gm(grad.values.data() + per * b, m, cells);
      g.noalias() += (gm * features.features(idx[b]).transpose()).cast<double>();
    }
    double lr = cfg.step_size;
    if (cfg.cosine_decay && cfg.steps > 1) {
      lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * step / cfg.steps));
    }
    m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * g;
    m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(cfg.beta1, step + 1);
    const double bc2 = 1.0 - std::pow(cfg.beta2, step + 1);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) {
        const double mh = m1(i, j) / bc1;
        const double vh = m2(i, j) / bc2;
        w.weight(i, j) -= static_cast<float>(lr * mh / (std::sqrt(vh) + cfg.epsilon));
      }
    }
    if (!w.weight.allFinite()) {
      Fail(ErrorKind::kDivergence, "non-finite weights at step " + std::to_string(step));
    }
    if ((step + 1) % cfg.eval_every == 0) evaluate(step + 1);
  }
  if (report.heldout_loss.empty() || report.heldout_loss.back().first != cfg.steps) {
    evaluate(cfg.steps);
  }
  if (held >= 2) {
    Tensor4 c(held, m, w.grid_h, w.grid_w);
    for (int i = 0; i < held; ++i) {
      Eigen::Map<RowMatrixXf> ci(c.values.data() + per * i, m, cells);
      ci.noalias() = w.weight * features.features(heldout[i]);
    }
    report.heldout_concept_cosine = PerConceptCubicCosine(c, held_p);
  }
  for (int i : heldout) report.heldout_ids.push_back(features.ids()[static_cast<std::size_t>(i)]);
  return {std::move(w), std::move(report)};
}

void SaveBottleneck(const BottleneckWeights& weights, const std::filesystem::path& dir,
                    const Json& extra) {
  std::filesystem::create_directories(dir);
  const std::string blob = PackF32(
      std::span<const float>(weights.weight.data(), static_cast<std::size_t>(weights.weight.size())));
  WriteFileAtomic(dir / "weights.bin", blob);
  Json sidecar = extra;
  sidecar["version"] = 1;
  sidecar["M"] = weights.concepts();
  sidecar["D"] = weights.feature_dim();
  sidecar["catalog_hash"] = weights.catalog_hash;
  sidecar["backbone_id"] = weights.backbone_id;
  sidecar["grid"] = {weights.grid_h, weights.grid_w};
  sidecar["weights_sha256"] = Sha256Hex(blob);
  WriteJson(dir / "bottleneck.json", sidecar);
}

BottleneckWeights LoadBottleneck(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "bottleneck.json")) {
    Fail(ErrorKind::kStageOrder, "no bottleneck checkpoint at " + dir.string());
  }
  const Json sidecar = ReadJson(dir / "bottleneck.json");
  const std::string blob = ReadFile(dir / "weights.bin");
  BottleneckWeights w;
  try {
    const int m = sidecar.at("M").get<int>();
    const int d = sidecar.at("D").get<int>();
    if (blob.size() != static_cast<std::size_t>(m) * d * 4) {
      Fail(ErrorKind::kIntegrity, "weights.bin size does not match M x D");
    }
    if (Sha256Hex(blob) != sidecar.at("weights_sha256").get<std::string>()) {
      Fail(ErrorKind::kProvenance, "weights.bin does not match its recorded checksum");
    }
    const auto vals = UnpackF32(blob);
    w.weight = Eigen::Map<const RowMatrixXf>(vals.data(), m, d);
    w.catalog_hash = sidecar.at("catalog_hash").get<std::string>();
    w.backbone_id = sidecar.at("backbone_id").get<std::string>();
    w.grid_h = sidecar.at("grid").at(0).get<int>();
    w.grid_w = sidecar.at("grid").at(1).get<int>();
  } catch (const Json::exception& e) {
    Fail(ErrorKind::kIntegrity, std::string("malformed bottleneck sidecar: ") + e.what());
  }
  if (!w.weight.allFinite()) Fail(ErrorKind::kIntegrity, "non-finite bottleneck weights");
  return w;
}

}  // namespace scbm
