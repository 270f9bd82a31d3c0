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

#include "scbm/evaluator.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "scbm/errors.h"

namespace scbm {
namespace {

std::string Pct(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2) << 100.0 * v << "%";
  return ss.str();
}

}  // namespace

ThresholdPolicy ThresholdPolicy::Parse(std::string_view text) {
  if (text == "mean") return Mean();
  if (text.rfind("fixed:", 0) == 0) {
    try {
      return Fixed(std::stod(std::string(text.substr(6))));
    } catch (const std::exception&) {
    }
  }
  Fail(ErrorKind::kConfiguration, "threshold policy must be 'mean' or 'fixed:<t>', got '" +
                                      std::string(text) + "'");
}

std::string ThresholdPolicy::Describe() const {
  if (kind == Kind::kMean) return "mean";
  std::ostringstream ss;
  ss << "fixed:" << threshold;
  return ss.str();
}

std::vector<std::uint8_t> Binarize(std::span<const float> heatmap, const ThresholdPolicy& policy) {
  double t = policy.threshold;
  if (policy.kind == ThresholdPolicy::Kind::kMean) {
    t = heatmap.empty() ? 0.0
                        : std::accumulate(heatmap.begin(), heatmap.end(), 0.0) /
                              static_cast<double>(heatmap.size());
  }
  std::vector<std::uint8_t> out(heatmap.size());
  for (std::size_t i = 0; i < heatmap.size(); ++i) {
    if (!std::isfinite(heatmap[i])) Fail(ErrorKind::kInvalidInput, "non-finite heatmap value");
    out[i] = heatmap[i] >= t ? 1 : 0;
  }
  // A constant map compared against its own mean must be all foreground,
  // even when the accumulated mean rounds above the value.
  if (policy.kind == ThresholdPolicy::Kind::kMean && !heatmap.empty() &&
      std::all_of(heatmap.begin(), heatmap.end(), [&](float v) { return v == heatmap[0]; })) {
    std::fill(out.begin(), out.end(), 1);
  }
  return out;
}

double ConfusionCounts::ForegroundIou() const {
  const std::int64_t denom = tp + fp + fn;
  return denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
}

double ConfusionCounts::BackgroundIou() const {
  const std::int64_t denom = tn + fp + fn;
  return denom == 0 ? 1.0 : static_cast<double>(tn) / static_cast<double>(denom);
}

Json MetricsReport::ToJson() const {
  return {{"pixel_accuracy", pixel_accuracy},
          {"miou", miou},
          {"map", map},
          {"n_samples", n_samples},
          {"ap_samples", ap_samples},
          {"threshold_policy", policy.Describe()},
          {"miou_aggregation", aggregation == MiouAggregation::kDataset ? "dataset" : "per_image"},
          {"foreground_iou", foreground_iou},
          {"background_iou", background_iou},
          {"confusion", {{"tp", counts.tp}, {"fp", counts.fp}, {"fn", counts.fn}, {"tn", counts.tn}}},
          {"reference", {{"pixel_accuracy", reference::kImageNetSegPixelAccuracy},
                         {"miou", reference::kImageNetSegMiou},
                         {"map", reference::kImageNetSegMap}}}};
}

std::string MetricsReport::Table() const {
  std::ostringstream ss;
  ss << "samples          " << n_samples << "\n"
     << "threshold        " << policy.Describe() << "\n"
     << "pixel accuracy   " << Pct(pixel_accuracy) << "\n"
     << "mIoU             " << Pct(miou) << "  ("
     << (aggregation == MiouAggregation::kDataset ? "dataset" : "per-image") << ")\n"
     << "mAP              " << Pct(map) << "  (" << ap_samples << " samples)\n";
  return ss.str();
}

std::optional<double> AveragePrecision(std::span<const float> scores,
                                       std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) Fail(ErrorKind::kGeometry, "scores and labels differ in size");
  const auto positives = std::count_if(labels.begin(), labels.end(), [](auto v) { return v != 0; });
  if (positives == 0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  std::int64_t tp = 0, seen = 0, prev_tp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] != 0;
      ++seen;
      ++j;
    }
    ap += static_cast<double>(tp - prev_tp) / positives * static_cast<double>(tp) / seen;
    prev_tp = tp;
    i = j;
  }
  return ap;
}

MetricsReport SegMetrics(std::span<const SegSample> samples, const ThresholdPolicy& policy,
                         MiouAggregation aggregation) {
  if (samples.empty()) Fail(ErrorKind::kInvalidInput, "no segmentation samples");
  MetricsReport r;
  r.policy = policy;
  r.aggregation = aggregation;
  r.n_samples = static_cast<int>(samples.size());
  double ap_sum = 0.0;
  double per_image_miou = 0.0;
  for (const auto& s : samples) {
    const std::size_t px = static_cast<std::size_t>(s.height) * s.width;
    if (s.heatmap.size() != px || s.ground_truth.size() != px) {
      Fail(ErrorKind::kGeometry, "sample " + s.image_id + ": heatmap/mask size mismatch");
    }
    const auto pred = Binarize(s.heatmap, policy);
    ConfusionCounts c;
    for (std::size_t i = 0; i < px; ++i) {
      const bool g = s.ground_truth[i] != 0;
      const bool p = pred[i] != 0;
      if (g && p) ++c.tp;
      else if (!g && p) ++c.fp;
      else if (g && !p) ++c.fn;
      else ++c.tn;
    }
    r.counts.tp += c.tp;
    r.counts.fp += c.fp;
    r.counts.fn += c.fn;
    r.counts.tn += c.tn;
    per_image_miou += 0.5 * (c.ForegroundIou() + c.BackgroundIou());
    if (auto ap = AveragePrecision(s.heatmap, s.ground_truth)) {
      ap_sum += *ap;
      ++r.ap_samples;
    }
  }
  const auto total = r.counts.tp + r.counts.fp + r.counts.fn + r.counts.tn;
  r.pixel_accuracy = static_cast<double>(r.counts.tp + r.counts.tn) / static_cast<double>(total);
  r.foreground_iou = r.counts.ForegroundIou();
  r.background_iou = r.counts.BackgroundIou();
  r.miou = aggregation == MiouAggregation::kDataset
               ? 0.5 * (r.foreground_iou + r.background_iou)
               : per_image_miou / static_cast<double>(samples.size());
  r.map = r.ap_samples > 0 ? ap_sum / r.ap_samples : 0.0;
  return r;
}

std::vector<DatasetEntry> LoadDatasetManifest(const std::filesystem::path& path,
                                              std::span<const std::string> class_names) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open dataset manifest " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<DatasetEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const Json j = Json::parse(line);
      DatasetEntry e;
      e.image = resolve(j.at("image").get<std::string>());
      const Json& label = j.at("label");
      if (label.is_string()) {
        const auto name = label.get<std::string>();
        const auto it = std::find(class_names.begin(), class_names.end(), name);
        if (it == class_names.end()) {
          Fail(ErrorKind::kData, "line " + std::to_string(lineno) + ": unknown class '" + name + "'");
        }
        e.label = static_cast<int>(it - class_names.begin());
      } else {
        e.label = label.get<int>();
      }
      if (j.contains("mask")) e.mask = resolve(j.at("mask").get<std::string>());
      if (j.contains("heatmap")) e.heatmap = resolve(j.at("heatmap").get<std::string>());
      out.push_back(std::move(e));
    } catch (const Json::exception& ex) {
      Fail(ErrorKind::kData, path.string() + " line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

Json ClassificationReport::ToJson() const {
  Json rows = Json::array();
  for (const auto& r : per_class) {
    rows.push_back({{"label", r.label}, {"name", r.name}, {"count", r.count},
                    {"correct", r.correct},
                    {"accuracy", r.count ? static_cast<double>(r.correct) / r.count : 0.0}});
  }
  return {{"accuracy", accuracy}, {"n_samples", n_samples}, {"per_class", rows},
          {"reference_imagenet_sparse_top1", reference::kImageNetSparseTop1}};
}

std::string ClassificationReport::Table() const {
  std::ostringstream ss;
  ss << "top-1 accuracy " << Pct(accuracy) << " over " << n_samples << " images\n";
  for (const auto& r : per_class) {
    ss << "  " << std::setw(4) << r.label << "  " << std::left << std::setw(24) << r.name
       << std::right << r.correct << "/" << r.count << "\n";
  }
  return ss.str();
}

ClassificationReport ClassificationAccuracy(const ModelBundle& bundle,
                                            std::span<const DatasetEntry> dataset) {
  const int classes = bundle.head().classes();
  const auto& names = bundle.catalog().class_names();
  ClassificationReport r;
  r.per_class.resize(static_cast<std::size_t>(classes));
  for (int l = 0; l < classes; ++l) {
    r.per_class[l].label = l;
    if (static_cast<std::size_t>(l) < names.size()) r.per_class[l].name = names[l];
  }
  int correct = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int y = dataset[i].label;
    if (y < 0 || y >= classes) {
      Fail(ErrorKind::kData, "sample " + std::to_string(i) + " (" + dataset[i].image.string() +
                                 ") has label " + std::to_string(y) + " outside [0, " +
                                 std::to_string(classes) + ")");
    }
    const auto pass = bundle.Forward(LoadImage(dataset[i].image));
    const bool ok = pass.prediction.y_hat == y;
    correct += ok;
    ++r.per_class[y].count;
    r.per_class[y].correct += ok;
  }
  r.n_samples = static_cast<int>(dataset.size());
  r.accuracy = dataset.empty() ? 0.0 : static_cast<double>(correct) / r.n_samples;
  return r;
}

int ClassTemplateConcept(const ConceptCatalog& catalog, int l) {
  const auto& names = catalog.class_names();
  if (l < 0 || static_cast<std::size_t>(l) >= names.size()) {
    Fail(ErrorKind::kRange, "class index " + std::to_string(l) + " out of range");
  }
  const std::string want = NormalizeConcept("An image of a " + names[l]);
  const auto& c = catalog.concepts();
  for (std::size_t m = 0; m < c.size(); ++m) {
    if (NormalizeConcept(c[m]) == want) return static_cast<int>(m);
  }
  Fail(ErrorKind::kConfiguration, "catalog has no template concept for class '" + names[l] + "'");
}

std::vector<std::uint8_t> LoadMask(const std::filesystem::path& path, int* height, int* width) {
  auto px = DecodeGrayPng(ReadFile(path), height, width);
  for (auto& p : px) p = p ? 1 : 0;
  return px;
}

std::vector<SegSample> BuildSegSamples(const ModelBundle& bundle,
                                       std::span<const DatasetEntry> dataset) {
  std::vector<SegSample> out;
  for (const auto& e : dataset) {
    if (!e.mask) continue;
    SegSample s;
    s.image_id = e.image.string();
    s.ground_truth = LoadMask(*e.mask, &s.height, &s.width);
    const auto pass = bundle.Forward(LoadImage(e.image));
    const Volume heat = ConceptHeatmap(pass.maps, ClassTemplateConcept(bundle.catalog(), e.label),
                                       s.height, s.width);
    s.heatmap.assign(heat.values().begin(), heat.values().end());
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SegSample> LoadExternalSegSamples(std::span<const DatasetEntry> dataset) {
  std::vector<SegSample> out;
  for (const auto& e : dataset) {
    if (!e.mask || !e.heatmap) continue;
    SegSample s;
    s.image_id = e.image.string();
    s.ground_truth = LoadMask(*e.mask, &s.height, &s.width);
    const Volume heat = DecodeHeatmapRaw(ReadFile(*e.heatmap));
    if (heat.height() != s.height || heat.width() != s.width) {
      Fail(ErrorKind::kGeometry, "sample " + s.image_id + ": heatmap/mask size mismatch");
    }
    s.heatmap.assign(heat.values().begin(), heat.values().end());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace scbm
