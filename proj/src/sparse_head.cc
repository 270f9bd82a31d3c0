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

#include "scbm/sparse_head.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "scbm/errors.h"

namespace scbm {
namespace {

// softmax(z) - onehot(y), returning the cross-entropy.
double Residual(const Eigen::VectorXd& z, int y, Eigen::VectorXd* r) {
  const double zmax = z.maxCoeff();
  double sum = 0;
  for (Eigen::Index l = 0; l < z.size(); ++l) sum += std::exp(z(l) - zmax);
  const double lse = zmax + std::log(sum);
  if (r) {
    *r = (z.array() - lse).exp().matrix();
    (*r)(y) -= 1.0;
  }
  return lse - z(y);
}

// Mean cross-entropy and its gradient.
double MeanLoss(const Eigen::MatrixXd& x, std::span<const int> labels,
                const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                Eigen::MatrixXd* gw, Eigen::VectorXd* gb) {
  const Eigen::Index n = x.rows();
  const Eigen::MatrixXd z = (x * w.transpose()).rowwise() + b.transpose();
  Eigen::MatrixXd r(n, w.rows());
  double loss = 0;
  Eigen::VectorXd ri;
  for (Eigen::Index i = 0; i < n; ++i) {
    loss += Residual(z.row(i).transpose(), labels[static_cast<std::size_t>(i)], &ri);
    r.row(i) = ri.transpose();
  }
  if (gw) *gw = r.transpose() * x / static_cast<double>(n);
  if (gb) *gb = r.colwise().sum().transpose() / static_cast<double>(n);
  return loss / static_cast<double>(n);
}

double Penalty(const Eigen::MatrixXd& w, double alpha, double lambda) {
  return lambda * ((1.0 - alpha) * 0.5 * w.squaredNorm() + alpha * w.cwiseAbs().sum());
}

void ProxInPlace(Eigen::MatrixXd& w, double t, double alpha, double lambda) {
  w = w.unaryExpr([&](double v) { return ElasticNetProx(v, t, alpha, lambda); });
}

double KktFromGradient(const Eigen::MatrixXd& gw, const Eigen::VectorXd& gb,
                       const Eigen::MatrixXd& w, double alpha, double lambda_mean) {
  double worst = gb.size() > 0 ? gb.cwiseAbs().maxCoeff() : 0.0;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      const double g = gw(i, j);
      const double v = w(i, j);
      double viol;
      if (v != 0.0) {
        viol = std::abs(g + lambda_mean * (1.0 - alpha) * v +
                        lambda_mean * alpha * (v > 0 ? 1.0 : -1.0));
      } else {
        viol = std::max(std::abs(g) - lambda_mean * alpha, 0.0);
      }
      worst = std::max(worst, viol);
    }
  }
  return worst;
}

void Validate(const Eigen::MatrixXd& x, std::span<const int> labels, int num_classes,
              double alpha, double lambda) {
  if (num_classes < 2) Fail(ErrorKind::kInvalidInput, "need at least 2 classes");
  if (x.rows() != static_cast<Eigen::Index>(labels.size())) {
    Fail(ErrorKind::kGeometry, "activation rows differ from label count");
  }
  if (x.rows() < 1) Fail(ErrorKind::kInsufficientData, "no training samples");
  if (!x.allFinite()) Fail(ErrorKind::kInvalidInput, "non-finite activations");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      Fail(ErrorKind::kData, "label " + std::to_string(labels[i]) + " of sample " +
                                 std::to_string(i) + " outside [0, " +
                                 std::to_string(num_classes) + ")");
    }
  }
  if (!(alpha >= 0 && alpha <= 1)) Fail(ErrorKind::kConfiguration, "alpha must lie in [0, 1]");
  if (!(lambda >= 0) || !std::isfinite(lambda)) {
    Fail(ErrorKind::kConfiguration, "lambda must be finite and >= 0");
  }
}

struct State {
  Eigen::MatrixXd w;
  Eigen::VectorXd b;
};

void CheckFinite(const State& s, double objective, int epoch) {
  if (!std::isfinite(objective) || !s.w.allFinite() || !s.b.allFinite()) {
    Fail(ErrorKind::kDivergence, "solver diverged at epoch " + std::to_string(epoch));
  }
}

// Runs SAGA epochs until the residual drops below tol. Returns epochs used.
int RunSaga(const Eigen::MatrixXd& x, std::span<const int> labels, double alpha,
            double lambda_mean, int max_epochs, double tol, std::uint64_t seed, State& s,
            SolverReport& report) {
  const Eigen::Index n = x.rows();
  const Eigen::Index l = s.w.rows();
  double lmax = 0;
  for (Eigen::Index i = 0; i < n; ++i) lmax = std::max(lmax, 0.5 * (x.row(i).squaredNorm() + 1.0));
  const double step = 1.0 / (3.0 * lmax);

  Eigen::MatrixXd table(n, l);
  Eigen::VectorXd r;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd z = s.w * x.row(i).transpose() + s.b;
    Residual(z, labels[static_cast<std::size_t>(i)], &r);
    table.row(i) = r.transpose();
  }
  Eigen::MatrixXd gw = table.transpose() * x / static_cast<double>(n);
  Eigen::VectorXd gb = table.colwise().sum().transpose() / static_cast<double>(n);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    for (Eigen::Index it = 0; it < n; ++it) {
      const Eigen::Index i = pick(rng);
      const Eigen::VectorXd z = s.w * x.row(i).transpose() + s.b;
      Residual(z, labels[static_cast<std::size_t>(i)], &r);
      const Eigen::VectorXd delta = r - table.row(i).transpose();
      const Eigen::MatrixXd outer = delta * x.row(i);
      s.w -= step * (outer + gw);
      ProxInPlace(s.w, step, alpha, lambda_mean);
      s.b -= step * (delta + gb);
      gw += outer / static_cast<double>(n);
      gb += delta / static_cast<double>(n);
      table.row(i) = r.transpose();
    }
    Eigen::MatrixXd fgw;
    Eigen::VectorXd fgb;
    const double mean_loss = MeanLoss(x, labels, s.w, s.b, &fgw, &fgb);
    const double objective = n * (mean_loss + Penalty(s.w, alpha, lambda_mean));
    CheckFinite(s, objective, epoch);
    report.objective_trace.push_back(objective);
    report.kkt_residual = KktFromGradient(fgw, fgb, s.w, alpha, lambda_mean);
    if (report.kkt_residual <= tol) return epoch;
  }
  return max_epochs;
}

// Accelerated proximal gradient with backtracking and adaptive restart.
int RunProxGrad(const Eigen::MatrixXd& x, std::span<const int> labels, double alpha,
                double lambda_mean, int max_epochs, double tol, State& s,
                SolverReport& report) {
  const Eigen::Index n = x.rows();
  double mean_sq = 0;
  for (Eigen::Index i = 0; i < n; ++i) mean_sq += x.row(i).squaredNorm() + 1.0;
  double step = 1.0 / std::max(1e-12, 0.5 * mean_sq / static_cast<double>(n));

  State y = s;
  double t = 1.0;
  Eigen::MatrixXd gw;
  Eigen::VectorXd gb;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    const double fy = MeanLoss(x, labels, y.w, y.b, &gw, &gb);
    State next;
    for (int tries = 0;; ++tries) {
      next.w = y.w - step * gw;
      ProxInPlace(next.w, step, alpha, lambda_mean);
      next.b = y.b - step * gb;
      const double fn = MeanLoss(x, labels, next.w, next.b, nullptr, nullptr);
      const double dw = (next.w - y.w).squaredNorm() + (next.b - y.b).squaredNorm();
      const double lin = ((next.w - y.w).cwiseProduct(gw)).sum() + (next.b - y.b).dot(gb);
      if (fn <= fy + lin + dw / (2.0 * step) + 1e-15 * std::abs(fy) || tries > 60) break;
      step *= 0.5;
    }
    const double dot = ((y.w - next.w).cwiseProduct(next.w - s.w)).sum() +
                       (y.b - next.b).dot(next.b - s.b);
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (dot > 0) t_next = 1.0, t = 1.0;  // momentum restart
    const double mom = (t - 1.0) / t_next;
    y.w = next.w + mom * (next.w - s.w);
    y.b = next.b + mom * (next.b - s.b);
    s = std::move(next);
    t = t_next;

    Eigen::MatrixXd fgw;
    Eigen::VectorXd fgb;
    const double mean_loss = MeanLoss(x, labels, s.w, s.b, &fgw, &fgb);
    const double objective = n * (mean_loss + Penalty(s.w, alpha, lambda_mean));
    CheckFinite(s, objective, epoch);
    report.objective_trace.push_back(objective);
    report.kkt_residual = KktFromGradient(fgw, fgb, s.w, alpha, lambda_mean);
    if (report.kkt_residual <= tol) return epoch;
  }
  return max_epochs;
}

std::string_view MethodName(SolverMethod m) {
  switch (m) {
    case SolverMethod::kSaga: return "saga";
    case SolverMethod::kProxGrad: return "prox_grad";
    case SolverMethod::kAuto: return "auto";
  }
  return "auto";
}

double Accuracy(const Eigen::MatrixXd& x, std::span<const int> labels,
                const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  if (x.rows() == 0) return 0.0;
  const Eigen::MatrixXd z = (x * w.transpose()).rowwise() + b.transpose();
  int correct = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index l = 1; l < z.cols(); ++l) {
      if (z(i, l) > z(i, best)) best = l;
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(x.rows());
}

}  // namespace

std::string_view PoolingName(Pooling pooling) {
  return pooling == Pooling::kMean ? "mean" : "max";
}

Pooling ParsePooling(std::string_view name) {
  if (name == "mean") return Pooling::kMean;
  if (name == "max") return Pooling::kMax;
  Fail(ErrorKind::kConfiguration, "unknown pooling '" + std::string(name) + "'");
}

Eigen::VectorXd Pool(const ConceptMaps& maps, Pooling pooling) {
  Eigen::VectorXd out(maps.channels());
  for (int m = 0; m < maps.channels(); ++m) {
    const auto plane = maps.plane(m);
    if (pooling == Pooling::kMean) {
      double s = 0;
      for (float v : plane) s += v;
      out(m) = s / static_cast<double>(plane.size());
    } else {
      out(m) = *std::max_element(plane.begin(), plane.end());
    }
  }
  return out;
}

Eigen::VectorXd ActivationStats::Normalize(const Eigen::VectorXd& pooled) const {
  if (pooled.size() != mean.size()) {
    Fail(ErrorKind::kGeometry, "activation length " + std::to_string(pooled.size()) +
                                   " != " + std::to_string(mean.size()));
  }
  return (pooled - mean).cwiseQuotient(stddev);
}

Eigen::MatrixXd ActivationStats::NormalizeRows(const Eigen::MatrixXd& pooled) const {
  if (pooled.cols() != mean.size()) Fail(ErrorKind::kGeometry, "activation width mismatch");
  return (pooled.rowwise() - mean.transpose()).array().rowwise() / stddev.transpose().array();
}

ActivationStats FitStats(const Eigen::MatrixXd& pooled) {
  if (pooled.rows() < 2) {
    Fail(ErrorKind::kInsufficientData, "statistics need at least 2 samples");
  }
  ActivationStats s;
  s.mean = pooled.colwise().mean().transpose();
  s.stddev.resize(pooled.cols());
  for (Eigen::Index m = 0; m < pooled.cols(); ++m) {
    const double var = (pooled.col(m).array() - s.mean(m)).square().mean();
    s.stddev(m) = std::max(std::sqrt(var), ActivationStats::kEpsilon);
  }
  return s;
}

std::string SparseHead::Checksum() const {
  std::string buf;
  for (int l = 0; l < weight.outerSize(); ++l) {
    for (SparseMatrixRf::InnerIterator it(weight, l); it; ++it) {
      AppendI32(buf, static_cast<std::int32_t>(it.row()));
      AppendI32(buf, static_cast<std::int32_t>(it.col()));
      buf += PackF32(std::span<const float>(&it.valueRef(), 1));
    }
  }
  buf += PackF32(std::span<const float>(bias.data(), static_cast<std::size_t>(bias.size())));
  return Sha256Hex(buf);
}

Json SolverConfig::ToJson() const {
  return {{"method", std::string(MethodName(method))}, {"max_epochs", max_epochs},
          {"tolerance", tolerance}, {"seed", seed}};
}

SolverConfig SolverConfig::FromJson(const Json& json) {
  SolverConfig c;
  const std::string m = json.value("method", std::string("auto"));
  if (m == "saga") c.method = SolverMethod::kSaga;
  else if (m == "prox_grad") c.method = SolverMethod::kProxGrad;
  else if (m == "auto") c.method = SolverMethod::kAuto;
  else Fail(ErrorKind::kConfiguration, "unknown solver method '" + m + "'");
  c.max_epochs = json.value("max_epochs", c.max_epochs);
  c.tolerance = json.value("tolerance", c.tolerance);
  c.seed = json.value("seed", c.seed);
  if (c.max_epochs < 1 || !(c.tolerance > 0)) {
    Fail(ErrorKind::kConfiguration, "solver needs max_epochs >= 1 and tolerance > 0");
  }
  return c;
}

Json SolverReport::ToJson() const {
  return {{"method", method}, {"epochs", epochs}, {"converged", converged},
          {"objective", objective}, {"kkt_residual", kkt_residual},
          {"objective_trace", objective_trace}};
}

double HeadObjective(const Eigen::MatrixXd& x, std::span<const int> labels,
                     const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                     double alpha, double lambda) {
  const double n = static_cast<double>(x.rows());
  return n * MeanLoss(x, labels, w, b, nullptr, nullptr) + Penalty(w, alpha, lambda);
}

double KktResidual(const Eigen::MatrixXd& x, std::span<const int> labels,
                   const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                   double alpha, double lambda) {
  Eigen::MatrixXd gw;
  Eigen::VectorXd gb;
  MeanLoss(x, labels, w, b, &gw, &gb);
  return KktFromGradient(gw, gb, w, alpha, lambda / static_cast<double>(x.rows()));
}

double ElasticNetProx(double w, double t, double alpha, double lambda) {
  const double shrunk = std::max(std::abs(w) - t * lambda * alpha, 0.0);
  if (shrunk == 0.0) return 0.0;
  return std::copysign(shrunk, w) / (1.0 + t * lambda * (1.0 - alpha));
}

HeadFit TrainHead(const Eigen::MatrixXd& normalized, std::span<const int> labels,
                  int num_classes, double alpha, double lambda,
                  const SolverConfig& cfg, const SolverReport* warm_start) {
  Validate(normalized, labels, num_classes, alpha, lambda);
  const Eigen::Index m = normalized.cols();
  const double lambda_mean = lambda / static_cast<double>(normalized.rows());

  State s;
  if (warm_start && warm_start->weight.rows() == num_classes && warm_start->weight.cols() == m) {
    s.w = warm_start->weight;
    s.b = warm_start->bias;
  } else {
    s.w = Eigen::MatrixXd::Zero(num_classes, m);
    s.b = Eigen::VectorXd::Zero(num_classes);
  }

  SolverReport report;
  int epochs = 0;
  switch (cfg.method) {
    case SolverMethod::kSaga:
      report.method = "saga";
      epochs = RunSaga(normalized, labels, alpha, lambda_mean, cfg.max_epochs, cfg.tolerance,
                       cfg.seed, s, report);
      break;
    case SolverMethod::kProxGrad:
      report.method = "prox_grad";
      epochs = RunProxGrad(normalized, labels, alpha, lambda_mean, cfg.max_epochs,
                           cfg.tolerance, s, report);
      break;
    case SolverMethod::kAuto: {
      report.method = "saga";
      const int saga_budget = std::min(cfg.max_epochs, 100);
      epochs = RunSaga(normalized, labels, alpha, lambda_mean, saga_budget, cfg.tolerance,
                       cfg.seed, s, report);
      if (report.kkt_residual > cfg.tolerance && epochs < cfg.max_epochs) {
        report.method = "saga+prox_grad";
        epochs += RunProxGrad(normalized, labels, alpha, lambda_mean, cfg.max_epochs - epochs,
                              cfg.tolerance, s, report);
      }
      break;
    }
  }
  report.epochs = epochs;
  report.converged = report.kkt_residual <= cfg.tolerance;
  report.objective = HeadObjective(normalized, labels, s.w, s.b, alpha, lambda);

  HeadFit fit;
  fit.head.alpha = alpha;
  fit.head.lambda = lambda;
  fit.head.weight = s.w.cast<float>().sparseView(0.0f, 0.0f);
  fit.head.weight.makeCompressed();
  fit.head.bias = s.b.cast<float>();
  report.weight = std::move(s.w);
  report.bias = std::move(s.b);
  fit.report = std::move(report);
  return fit;
}

int ArgmaxLowest(const Eigen::VectorXf& logits) {
  int best = 0;
  for (int l = 1; l < logits.size(); ++l) {
    if (logits(l) > logits(best)) best = l;
  }
  return best;
}

Prediction Predict(const Eigen::VectorXd& pooled, const SparseHead& head) {
  if (pooled.size() != head.concepts()) {
    Fail(ErrorKind::kGeometry, "activation length " + std::to_string(pooled.size()) +
                                   " != head concepts " + std::to_string(head.concepts()));
  }
  const Eigen::VectorXf normalized = head.stats.Normalize(pooled).cast<float>();
  Prediction p;
  p.logits = head.weight * normalized + head.bias;
  p.y_hat = ArgmaxLowest(p.logits);
  return p;
}

RegularizationPath FitRegularizationPath(
    const Eigen::MatrixXd& normalized, std::span<const int> labels, int num_classes,
    double alpha, std::span<const double> lambdas, const SolverConfig& cfg,
    const Eigen::MatrixXd* val_normalized, std::span<const int> val_labels) {
  if (lambdas.empty()) Fail(ErrorKind::kInvalidInput, "empty lambda grid");
  if (!std::is_sorted(lambdas.begin(), lambdas.end())) {
    Fail(ErrorKind::kInvalidInput, "lambda grid must be sorted ascending");
  }
  RegularizationPath path;
  const SolverReport* warm = nullptr;
  for (double lambda : lambdas) {
    path.fits.push_back(TrainHead(normalized, labels, num_classes, alpha, lambda, cfg, warm));
    const SolverReport& rep = path.fits.back().report;
    PathEntry e;
    e.lambda = lambda;
    e.nnz = path.fits.back().head.nnz();
    e.train_accuracy = Accuracy(normalized, labels, rep.weight, rep.bias);
    if (val_normalized) e.val_accuracy = Accuracy(*val_normalized, val_labels, rep.weight, rep.bias);
    e.kkt_residual = rep.kkt_residual;
    path.table.push_back(e);
    warm = &path.fits.back().report;
  }
  return path;
}

void SaveHead(const SparseHead& head, const std::filesystem::path& dir, const Json& extra) {
  std::filesystem::create_directories(dir);
  std::string coo;
  for (int l = 0; l < head.weight.outerSize(); ++l) {
    for (SparseMatrixRf::InnerIterator it(head.weight, l); it; ++it) {
      AppendI32(coo, static_cast<std::int32_t>(it.row()));
      AppendI32(coo, static_cast<std::int32_t>(it.col()));
      coo += PackF32(std::span<const float>(&it.valueRef(), 1));
    }
  }
  const std::string bias =
      PackF32(std::span<const float>(head.bias.data(), static_cast<std::size_t>(head.bias.size())));
  WriteFileAtomic(dir / "weights_coo.bin", coo);
  WriteFileAtomic(dir / "bias.bin", bias);
  std::vector<double> mean(head.stats.mean.data(), head.stats.mean.data() + head.stats.mean.size());
  std::vector<double> sd(head.stats.stddev.data(), head.stats.stddev.data() + head.stats.stddev.size());
  Json sidecar = extra;
  sidecar["version"] = 1;
  sidecar["L"] = head.classes();
  sidecar["M"] = head.concepts();
  sidecar["alpha"] = head.alpha;
  sidecar["lambda"] = head.lambda;
  sidecar["nnz"] = head.nnz();
  sidecar["catalog_hash"] = head.catalog_hash;
  sidecar["pooling"] = std::string(PoolingName(head.pooling));
  sidecar["stats"] = {{"mean", mean}, {"std", sd}};
  sidecar["weights_sha256"] = Sha256Hex(coo);
  sidecar["bias_sha256"] = Sha256Hex(bias);
  sidecar["head_checksum"] = head.Checksum();
  WriteJson(dir / "head.json", sidecar);
}

SparseHead LoadHead(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "head.json")) {
    Fail(ErrorKind::kStageOrder, "no head at " + dir.string());
  }
  const Json sidecar = ReadJson(dir / "head.json");
  const std::string coo = ReadFile(dir / "weights_coo.bin");
  const std::string bias = ReadFile(dir / "bias.bin");
  SparseHead head;
  try {
    if (Sha256Hex(coo) != sidecar.at("weights_sha256").get<std::string>() ||
        Sha256Hex(bias) != sidecar.at("bias_sha256").get<std::string>()) {
      Fail(ErrorKind::kProvenance, "head payload does not match its recorded checksum");
    }
    const int l = sidecar.at("L").get<int>();
    const int m = sidecar.at("M").get<int>();
    if (coo.size() % 12 != 0) Fail(ErrorKind::kIntegrity, "weights_coo.bin length not a multiple of 12");
    std::vector<Eigen::Triplet<float>> triplets;
    for (std::size_t off = 0; off < coo.size(); off += 12) {
      const int row = ReadI32(coo, off);
      const int col = ReadI32(coo, off + 4);
      const float v = UnpackF32(std::string_view(coo).substr(off + 8, 4))[0];
      if (row < 0 || row >= l || col < 0 || col >= m) {
        Fail(ErrorKind::kIntegrity, "weight triplet out of range");
      }
      triplets.emplace_back(row, col, v);
    }
    head.weight.resize(l, m);
    head.weight.setFromTriplets(triplets.begin(), triplets.end());
    head.weight.makeCompressed();
    const auto b = UnpackF32(bias);
    if (static_cast<int>(b.size()) != l) Fail(ErrorKind::kIntegrity, "bias.bin length != L");
    head.bias = Eigen::Map<const Eigen::VectorXf>(b.data(), l);
    const auto mean = sidecar.at("stats").at("mean").get<std::vector<double>>();
    const auto sd = sidecar.at("stats").at("std").get<std::vector<double>>();
    if (static_cast<int>(mean.size()) != m || static_cast<int>(sd.size()) != m) {
      Fail(ErrorKind::kIntegrity, "stats length != M");
    }
    head.stats.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), m);
    head.stats.stddev = Eigen::Map<const Eigen::VectorXd>(sd.data(), m);
    head.alpha = sidecar.at("alpha").get<double>();
    head.lambda = sidecar.at("lambda").get<double>();
    head.catalog_hash = sidecar.at("catalog_hash").get<std::string>();
    head.pooling = ParsePooling(sidecar.value("pooling", std::string("mean")));
  } catch (const Json::exception& e) {
    Fail(ErrorKind::kIntegrity, std::string("malformed head sidecar: ") + e.what());
  }
  return head;
}

}  // namespace scbm
