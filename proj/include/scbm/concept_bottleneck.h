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

#ifndef SCBM_CONCEPT_BOTTLENECK_H_
#define SCBM_CONCEPT_BOTTLENECK_H_

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scbm/io.h"
#include "scbm/similarity_engine.h"
#include "scbm/tensor.h"

namespace scbm {

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// 1x1 convolution kernel g, no bias: [M, D].
struct BottleneckWeights {
  RowMatrixXf weight;
  std::string catalog_hash;
  std::string backbone_id;
  int grid_h = 0;
  int grid_w = 0;

  int concepts() const { return static_cast<int>(weight.rows()); }
  int feature_dim() const { return static_cast<int>(weight.cols()); }
  // Always M * D: the same budget as a pooled fully-connected bottleneck.
  std::int64_t parameter_count() const { return weight.size(); }
  std::string Checksum() const;
};

// c[m, h, w] = sum_d weight[m, d] * features[d, h, w].
ConceptMaps Project(const Volume& features, const BottleneckWeights& weights);

// Negative sum over (m, h, w) of the cosine between the batch-centered,
// elementwise-cubed columns C[:, m, h, w] and P[:, m, h, w]. Cells where
// either centered vector vanishes contribute 0. When `grad` is non-null it
// receives dLoss/dC.
double CubicCosLoss(const Tensor4& c, const Tensor4& p, Tensor4* grad = nullptr);

// Per-concept mean over cells of the cubic cosine similarity, treating all of
// [N, M, H, W] as one batch.
std::vector<double> PerConceptCubicCosine(const Tensor4& c, const Tensor4& p);

// Grid-resolution backbone features for a list of images, in P's image order.
class FeatureBank {
 public:
  FeatureBank(int feature_dim, int grid_h, int grid_w, std::string backbone_id);

  void Add(const std::string& image_id, const Volume& features);
  int size() const { return static_cast<int>(ids_.size()); }
  int feature_dim() const { return dim_; }
  int grid_h() const { return grid_h_; }
  int grid_w() const { return grid_w_; }
  const std::string& backbone_id() const { return backbone_id_; }
  const std::vector<std::string>& ids() const { return ids_; }
  // [D, grid_h * grid_w] row-major view of image n.
  Eigen::Map<const RowMatrixXf> features(int n) const;
  Volume volume(int n) const;

 private:
  int dim_;
  int grid_h_;
  int grid_w_;
  std::string backbone_id_;
  std::vector<std::string> ids_;
  std::vector<float> data_;
};

struct CblTrainConfig {
  double step_size = 1e-3;
  int steps = 5000;
  int batch_size = 256;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  // "random" (scaled normal) or "zero".
  std::string init = "random";
  double init_scale = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool cosine_decay = true;
  int eval_every = 100;

  void Validate() const;
  Json ToJson() const;
  static CblTrainConfig FromJson(const Json& json);
};

struct CblTrainReport {
  std::vector<double> step_loss;
  // (step, held-out loss) pairs; held-out loss is averaged per cell.
  std::vector<std::pair<int, double>> heldout_loss;
  double final_heldout_loss = 0.0;
  std::vector<double> heldout_concept_cosine;
  std::vector<std::string> heldout_ids;

  Json ToJson() const;
};

struct CblTrainResult {
  BottleneckWeights weights;
  CblTrainReport report;
};

// Adam on minibatch-centered cubic cosine loss. Deterministic given the seed.
CblTrainResult TrainBottleneck(const FeatureBank& features, const SimilarityMatrix& p,
                               const CblTrainConfig& cfg);

// Concept maps for every image in the bank, [N, M, H, W].
Tensor4 ProjectAll(const FeatureBank& features, const BottleneckWeights& weights);

// weights.bin (M x D f32le, row-major) plus bottleneck.json sidecar.
void SaveBottleneck(const BottleneckWeights& weights, const std::filesystem::path& dir,
                    const Json& extra = Json::object());
BottleneckWeights LoadBottleneck(const std::filesystem::path& dir);

}  // namespace scbm

#endif  // SCBM_CONCEPT_BOTTLENECK_H_
