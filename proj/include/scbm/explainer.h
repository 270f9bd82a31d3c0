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

#ifndef SCBM_EXPLAINER_H_
#define SCBM_EXPLAINER_H_

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scbm/backbone_adapter.h"
#include "scbm/concept_bottleneck.h"
#include "scbm/concept_catalog.h"
#include "scbm/image.h"
#include "scbm/io.h"
#include "scbm/similarity_engine.h"
#include "scbm/sparse_head.h"
#include "scbm/tensor.h"

namespace scbm {

struct ForwardPass {
  ConceptMaps maps;        // [M, grid_h, grid_w]
  Eigen::VectorXd pooled;  // c*
  Prediction prediction;
};

// Everything needed for an ante-hoc forward pass. Immutable once built;
// Forward() may be called concurrently.
class ModelBundle {
 public:
  ModelBundle(ConceptCatalog catalog, GridSpec grid, BackboneConfig backbone_config,
              std::shared_ptr<const Backbone> backbone, BottleneckWeights bottleneck,
              SparseHead head);

  // Resizes the image to the backbone input size when needed.
  ForwardPass Forward(const Image& image) const;
  // Pool + head on (possibly edited) concept maps.
  ForwardPass FromMaps(ConceptMaps maps) const;

  const ConceptCatalog& catalog() const { return catalog_; }
  const GridSpec& grid() const { return grid_; }
  const BackboneConfig& backbone_config() const { return backbone_config_; }
  const Backbone& backbone() const { return *backbone_; }
  const BottleneckWeights& bottleneck() const { return bottleneck_; }
  const SparseHead& head() const { return head_; }
  const std::string& hash() const { return hash_; }

 private:
  ConceptCatalog catalog_;
  GridSpec grid_;
  BackboneConfig backbone_config_;
  std::shared_ptr<const Backbone> backbone_;
  BottleneckWeights bottleneck_;
  SparseHead head_;
  std::string hash_;
};

struct RuleEdge {
  int m = 0;
  std::string name;
  double weight = 0.0;
};

// Nonzero entries of W[:, l], sorted by |weight| descending (ties by index).
std::vector<RuleEdge> ClassRules(const SparseHead& head, int l,
                                 const ConceptCatalog* catalog = nullptr);
// Edge list {source_concept, target_class, weight} for Sankey rendering.
Json RulesToSankey(const std::vector<RuleEdge>& rules, const std::string& class_name);

// S[m] = W[m, l] * (c*[m] - mean[m]) / std[m].
Eigen::VectorXd ContributionScores(const Eigen::VectorXd& pooled, const SparseHead& head, int l);

// Align-corners bilinear upsample of map m to [out_h, out_w].
Volume ConceptHeatmap(const ConceptMaps& maps, int m, int out_h, int out_w);

struct ConceptScore {
  int m = 0;
  std::string name;
  double score = 0.0;
  std::string heatmap_ref;
};

struct Explanation {
  std::string image_id;
  int y_hat = 0;
  Eigen::VectorXf logits;
  int k = 0;
  std::vector<ConceptScore> top_k;
  Eigen::VectorXd pooled;  // activations the prediction was computed from

  Json ToJson() const;
};

// Top-k concepts of the predicted class by |S|; only concepts with
// W[m, y_hat] != 0 are eligible. `heatmap_prefix` + m names each heatmap.
Explanation ExplainPass(const ForwardPass& pass, const ModelBundle& bundle, int k,
                        const std::string& image_id,
                        const std::string& heatmap_prefix = "heatmap_");
Explanation Explain(const Image& image, const ModelBundle& bundle, int k,
                    const std::string& image_id);

// Binary region of interest at grid resolution, image resolution, or both.
class RoiMask {
 public:
  static RoiMask FromGrid(int grid_h, int grid_w, std::vector<std::uint8_t> cells);
  static RoiMask FromCells(int grid_h, int grid_w, std::span<const int> cell_indices);
  static RoiMask FromImage(int image_h, int image_w, std::vector<std::uint8_t> pixels);

  bool has_grid() const { return grid_h_ > 0; }
  bool has_image() const { return image_h_ > 0; }
  int grid_h() const { return grid_h_; }
  int grid_w() const { return grid_w_; }
  int image_h() const { return image_h_; }
  int image_w() const { return image_w_; }
  const std::vector<std::uint8_t>& grid_cells() const { return grid_; }
  const std::vector<std::uint8_t>& image_pixels() const { return image_; }
  const std::string& downsample_record() const { return downsample_; }

  // Grid-resolution mask; image masks are reduced by cell majority: a cell is
  // set when at least half of the pixels nearest to its center are set.
  RoiMask ToGrid(int grid_h, int grid_w) const;
  // Number of set cells (grid) or pixels (image only).
  int count() const;

 private:
  int grid_h_ = 0;
  int grid_w_ = 0;
  int image_h_ = 0;
  int image_w_ = 0;
  std::vector<std::uint8_t> grid_;
  std::vector<std::uint8_t> image_;
  std::string downsample_;
};

struct RoiScore {
  int m = 0;
  std::string name;
  double aggregate = 0.0;
};

struct RoiResult {
  std::string resolution;  // "grid" or "image"
  std::vector<RoiScore> top_k;
};

struct RoiOptions {
  // Rank by sum of (c - mean) / std over the region instead of raw sums.
  bool normalized = false;
  const ActivationStats* stats = nullptr;
  const ConceptCatalog* catalog = nullptr;
};

// a[m] = sum over the mask of c[m]. Image masks aggregate over maps upsampled
// to the mask size; grid masks over the raw maps. An all-zero mask raises
// kEmptyRoi.
RoiResult ExplainAnything(const ConceptMaps& maps, const RoiMask& mask, int k,
                          const RoiOptions& options = {});

struct EditRecord {
  int m = 0;
  RoiMask mask;
  double beta = 0.0;
  std::string timestamp;
  std::string session_id;
};

// Applies c[m] += beta * I for each edit in order on a copy of `maps`.
ConceptMaps Intervene(const ConceptMaps& maps, std::span<const EditRecord> edits);

struct WhatIfResult {
  int old_y_hat = 0;
  int new_y_hat = 0;
  Eigen::VectorXf old_logits;
  Eigen::VectorXf new_logits;
  Eigen::VectorXf logit_deltas;
  Explanation updated;

  Json ToJson() const;
};

WhatIfResult WhatIf(const ConceptMaps& maps, std::span<const EditRecord> edits,
                    const ModelBundle& bundle, int k, const std::string& image_id);

// 8-bit PNG after min-max normalization; the sidecar records the range.
struct HeatmapPng {
  std::string png;
  Json sidecar;
};
HeatmapPng EncodeHeatmapPng(const Volume& heatmap);
// int32 height, int32 width, then f32le values.
std::string EncodeHeatmapRaw(const Volume& heatmap);
Volume DecodeHeatmapRaw(std::string_view bytes);

}  // namespace scbm

#endif  // SCBM_EXPLAINER_H_
