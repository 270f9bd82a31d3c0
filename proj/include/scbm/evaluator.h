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

#ifndef SCBM_EVALUATOR_H_
#define SCBM_EVALUATOR_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scbm/explainer.h"
#include "scbm/io.h"

namespace scbm {

// Published full-scale figures, kept for reports only; nothing at desk scale
// is expected to reproduce them.
namespace reference {
inline constexpr double kImageNetSparseTop1 = 0.7532;
inline constexpr double kImageNetSegPixelAccuracy = 0.7694;
inline constexpr double kImageNetSegMiou = 0.5830;
inline constexpr double kImageNetSegMap = 0.8531;
}  // namespace reference

struct ThresholdPolicy {
  enum class Kind { kMean, kFixed };
  Kind kind = Kind::kMean;
  double threshold = 0.0;

  static ThresholdPolicy Mean() { return {}; }
  static ThresholdPolicy Fixed(double t) { return {Kind::kFixed, t}; }
  // "mean" or "fixed:<t>".
  static ThresholdPolicy Parse(std::string_view text);
  std::string Describe() const;
};

// Foreground where value >= threshold (the per-map mean for Kind::kMean).
std::vector<std::uint8_t> Binarize(std::span<const float> heatmap, const ThresholdPolicy& policy);

struct SegSample {
  std::string image_id;
  int height = 0;
  int width = 0;
  std::vector<float> heatmap;
  std::vector<std::uint8_t> ground_truth;  // {0, 1}
};

enum class MiouAggregation { kDataset, kPerImage };

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  double ForegroundIou() const;
  double BackgroundIou() const;
};

struct MetricsReport {
  double pixel_accuracy = 0.0;
  double miou = 0.0;
  double map = 0.0;
  int n_samples = 0;
  // Samples without foreground pixels have no defined AP and are left out
  // of the mAP mean.
  int ap_samples = 0;
  ThresholdPolicy policy;
  MiouAggregation aggregation = MiouAggregation::kDataset;
  ConfusionCounts counts;
  double foreground_iou = 0.0;
  double background_iou = 0.0;

  Json ToJson() const;
  std::string Table() const;
};

// Threshold-free average precision of continuous scores against binary
// labels (ties form one operating point). Returns nullopt with no positives.
std::optional<double> AveragePrecision(std::span<const float> scores,
                                       std::span<const std::uint8_t> labels);

MetricsReport SegMetrics(std::span<const SegSample> samples, const ThresholdPolicy& policy,
                         MiouAggregation aggregation = MiouAggregation::kDataset);

struct DatasetEntry {
  std::filesystem::path image;
  int label = 0;
  std::optional<std::filesystem::path> mask;
  std::optional<std::filesystem::path> heatmap;  // external raw heatmap
};

// JSON lines {"image", "label", optional "mask", optional "heatmap"}. Labels
// may be class indices or class names; relative paths resolve against the
// manifest's directory.
std::vector<DatasetEntry> LoadDatasetManifest(const std::filesystem::path& path,
                                              std::span<const std::string> class_names);

struct ClassRow {
  int label = 0;
  std::string name;
  int count = 0;
  int correct = 0;
};

struct ClassificationReport {
  double accuracy = 0.0;
  int n_samples = 0;
  std::vector<ClassRow> per_class;

  Json ToJson() const;
  std::string Table() const;
};

ClassificationReport ClassificationAccuracy(const ModelBundle& bundle,
                                            std::span<const DatasetEntry> dataset);

// Index of the "An image of a {class}" concept for class l.
int ClassTemplateConcept(const ConceptCatalog& catalog, int l);

// Heatmap of the ground-truth class's template concept, upsampled to the mask
// size, paired with the mask. Entries without a mask are skipped.
std::vector<SegSample> BuildSegSamples(const ModelBundle& bundle,
                                       std::span<const DatasetEntry> dataset);
// Same, but with externally supplied raw heatmaps (e.g. attribution
// baselines) instead of the bundle's.
std::vector<SegSample> LoadExternalSegSamples(std::span<const DatasetEntry> dataset);

std::vector<std::uint8_t> LoadMask(const std::filesystem::path& path, int* height, int* width);

}  // namespace scbm

#endif  // SCBM_EVALUATOR_H_
