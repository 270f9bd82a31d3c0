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

#ifndef SCBM_SPARSE_HEAD_H_
#define SCBM_SPARSE_HEAD_H_

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scbm/io.h"
#include "scbm/tensor.h"

namespace scbm {

enum class Pooling { kMean, kMax };

std::string_view PoolingName(Pooling pooling);
Pooling ParsePooling(std::string_view name);

// Global concept activations c*[m] from concept maps.
Eigen::VectorXd Pool(const ConceptMaps& maps, Pooling pooling = Pooling::kMean);

struct ActivationStats {
  static constexpr double kEpsilon = 1e-6;
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;  // population std, floored at kEpsilon

  int size() const { return static_cast<int>(mean.size()); }
  Eigen::VectorXd Normalize(const Eigen::VectorXd& pooled) const;
  Eigen::MatrixXd NormalizeRows(const Eigen::MatrixXd& pooled) const;
};

// Per-concept mean and population standard deviation over rows of an
// [N, M] matrix. N < 2 raises kInsufficientData.
ActivationStats FitStats(const Eigen::MatrixXd& pooled);

using SparseMatrixRf = Eigen::SparseMatrix<float, Eigen::RowMajor>;

// z = W c_hat + b over normalized activations.
struct SparseHead {
  SparseMatrixRf weight;  // [L, M]
  Eigen::VectorXf bias;   // [L]
  ActivationStats stats;
  Pooling pooling = Pooling::kMean;
  double alpha = 0.0;
  double lambda = 0.0;
  std::string catalog_hash;

  int classes() const { return static_cast<int>(weight.rows()); }
  int concepts() const { return static_cast<int>(weight.cols()); }
  std::int64_t nnz() const { return weight.nonZeros(); }
  // W[m, l]: weight from concept m to class l.
  float at(int m, int l) const { return weight.coeff(l, m); }
  std::string Checksum() const;
};

enum class SolverMethod { kSaga, kProxGrad, kAuto };

struct SolverConfig {
  SolverMethod method = SolverMethod::kAuto;
  int max_epochs = 5000;
  // Stop once the KKT residual falls below this.
  double tolerance = 1e-8;
  std::uint64_t seed = 0;

  Json ToJson() const;
  static SolverConfig FromJson(const Json& json);
};

struct SolverReport {
  std::string method;  // solver(s) that actually ran
  int epochs = 0;
  bool converged = false;
  double objective = 0.0;
  double kkt_residual = 0.0;
  std::vector<double> objective_trace;
  Eigen::MatrixXd weight;  // double-precision iterate, [L, M]
  Eigen::VectorXd bias;

  Json ToJson() const;
};

struct HeadFit {
  SparseHead head;
  SolverReport report;
};

// sum_n CE(W a_n + b, y_n) + lambda * ((1 - alpha) / 2 * ||W||_F^2
// + alpha * ||W||_1). Bias is unregularized.
double HeadObjective(const Eigen::MatrixXd& x, std::span<const int> labels,
                     const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                     double alpha, double lambda);

// Largest first-order optimality violation of the objective divided by N:
// |g + lambda'(1 - alpha) w + lambda' alpha sign(w)| on nonzero weights,
// max(|g| - lambda' alpha, 0) on zero weights, |g_b| on the bias, where g is
// the mean cross-entropy gradient and lambda' = lambda / N.
double KktResidual(const Eigen::MatrixXd& x, std::span<const int> labels,
                   const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                   double alpha, double lambda);

// Elastic-net proximal map for step t: soft-threshold by t*lambda*alpha, then
// shrink by 1 / (1 + t*lambda*(1 - alpha)).
double ElasticNetProx(double w, double t, double alpha, double lambda);

// Trains the head on normalized activations [N, M]. `warm_start`, when given,
// seeds the solver with a previous (W, b).
HeadFit TrainHead(const Eigen::MatrixXd& normalized, std::span<const int> labels,
                  int num_classes, double alpha, double lambda,
                  const SolverConfig& cfg, const SolverReport* warm_start = nullptr);

struct Prediction {
  Eigen::VectorXf logits;
  int y_hat = 0;
};

// Normalizes with the head's stats, then argmax with lowest-index ties.
Prediction Predict(const Eigen::VectorXd& pooled, const SparseHead& head);
int ArgmaxLowest(const Eigen::VectorXf& logits);

struct PathEntry {
  double lambda = 0.0;
  std::int64_t nnz = 0;
  double train_accuracy = 0.0;
  std::optional<double> val_accuracy;
  double kkt_residual = 0.0;
};

struct RegularizationPath {
  std::vector<HeadFit> fits;
  std::vector<PathEntry> table;
};

// One head per lambda (ascending), each warm-started from the previous one.
RegularizationPath FitRegularizationPath(
    const Eigen::MatrixXd& normalized, std::span<const int> labels, int num_classes,
    double alpha, std::span<const double> lambdas, const SolverConfig& cfg,
    const Eigen::MatrixXd* val_normalized = nullptr,
    std::span<const int> val_labels = {});

// head.json sidecar, weights_coo.bin (int32 row=class, int32 col=concept,
// f32 value) and bias.bin (f32le).
void SaveHead(const SparseHead& head, const std::filesystem::path& dir,
              const Json& extra = Json::object());
SparseHead LoadHead(const std::filesystem::path& dir);

}  // namespace scbm

#endif  // SCBM_SPARSE_HEAD_H_
