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

#include "scbm/explainer.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scbm/errors.h"

namespace scbm {
namespace {

void CheckConcept(int m, int count) {
  if (m < 0 || m >= count) {
    Fail(ErrorKind::kRange, "concept index " + std::to_string(m) + " outside [0, " +
                                std::to_string(count) + ")");
  }
}

void CheckClass(int l, int count) {
  if (l < 0 || l >= count) {
    Fail(ErrorKind::kRange, "class index " + std::to_string(l) + " outside [0, " +
                                std::to_string(count) + ")");
  }
}

std::vector<float> ToVector(const Eigen::VectorXf& v) {
  return {v.data(), v.data() + v.size()};
}

// Nearest grid cell of pixel coordinate p under the align-corners mapping.
int NearestCell(int p, int pixels, int cells) {
  if (pixels <= 1 || cells <= 1) return 0;
  const double g = static_cast<double>(p) * (cells - 1) / (pixels - 1);
  return std::clamp(static_cast<int>(std::lround(g)), 0, cells - 1);
}

}  // namespace

ModelBundle::ModelBundle(ConceptCatalog catalog, GridSpec grid, BackboneConfig backbone_config,
                         std::shared_ptr<const Backbone> backbone,
                         BottleneckWeights bottleneck, SparseHead head)
    : catalog_(std::move(catalog)),
      grid_(std::move(grid)),
      backbone_config_(std::move(backbone_config)),
      backbone_(std::move(backbone)),
      bottleneck_(std::move(bottleneck)),
      head_(std::move(head)) {
  if (!backbone_) Fail(ErrorKind::kConfiguration, "bundle has no backbone");
  const int m = catalog_.size();
  if (bottleneck_.concepts() != m || head_.concepts() != m) {
    Fail(ErrorKind::kGeometry, "catalog, bottleneck and head disagree on concept count");
  }
  if (bottleneck_.catalog_hash != catalog_.content_hash()) {
    Fail(ErrorKind::kProvenance, "bottleneck catalog hash " + bottleneck_.catalog_hash +
                                     " != catalog " + catalog_.content_hash());
  }
  if (head_.catalog_hash != catalog_.content_hash()) {
    Fail(ErrorKind::kProvenance, "head catalog hash " + head_.catalog_hash + " != catalog " +
                                     catalog_.content_hash());
  }
  if (bottleneck_.backbone_id != backbone_->id()) {
    Fail(ErrorKind::kProvenance, "bottleneck trained on backbone " + bottleneck_.backbone_id +
                                     ", bundle has " + backbone_->id());
  }
  if (bottleneck_.grid_h != grid_.grid_h || bottleneck_.grid_w != grid_.grid_w) {
    Fail(ErrorKind::kGeometry, "bottleneck grid differs from bundle grid");
  }
  hash_ = Sha256Hex(catalog_.content_hash() + "|" + bottleneck_.Checksum() + "|" +
                    head_.Checksum() + "|" + backbone_->id() + "|" + grid_.ToJson().dump());
}

ForwardPass ModelBundle::Forward(const Image& image) const {
  const int size = backbone_config_.input_size;
  const Image input = ResizeImage(image, size, size);
  const FeatureMap fm = ResizeToGrid(ExtractFeatures(input, *backbone_, backbone_config_), grid_);
  return FromMaps(Project(fm.values, bottleneck_));
}

ForwardPass ModelBundle::FromMaps(ConceptMaps maps) const {
  ForwardPass pass;
  pass.pooled = Pool(maps, head_.pooling);
  pass.prediction = Predict(pass.pooled, head_);
  pass.maps = std::move(maps);
  return pass;
}

std::vector<RuleEdge> ClassRules(const SparseHead& head, int l, const ConceptCatalog* catalog) {
  CheckClass(l, head.classes());
  std::vector<RuleEdge> out;
  for (SparseMatrixRf::InnerIterator it(head.weight, l); it; ++it) {
    if (it.value() == 0.0f) continue;
    const int m = static_cast<int>(it.col());
    out.push_back({m, catalog ? catalog->concepts()[static_cast<std::size_t>(m)] : "", it.value()});
  }
  std::stable_sort(out.begin(), out.end(), [](const RuleEdge& a, const RuleEdge& b) {
    if (std::abs(a.weight) != std::abs(b.weight)) return std::abs(a.weight) > std::abs(b.weight);
    return a.m < b.m;
  });
  return out;
}

Json RulesToSankey(const std::vector<RuleEdge>& rules, const std::string& class_name) {
  Json edges = Json::array();
  for (const auto& r : rules) {
    edges.push_back({{"source_concept", r.name.empty() ? std::to_string(r.m) : r.name},
                     {"concept_index", r.m},
                     {"target_class", class_name},
                     {"weight", r.weight}});
  }
  return edges;
}

Eigen::VectorXd ContributionScores(const Eigen::VectorXd& pooled, const SparseHead& head, int l) {
  CheckClass(l, head.classes());
  const Eigen::VectorXd normalized = head.stats.Normalize(pooled);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(pooled.size());
  for (SparseMatrixRf::InnerIterator it(head.weight, l); it; ++it) {
    s(it.col()) = static_cast<double>(it.value()) * normalized(it.col());
  }
  return s;
}

Volume ConceptHeatmap(const ConceptMaps& maps, int m, int out_h, int out_w) {
  CheckConcept(m, maps.channels());
  const auto plane = maps.plane(m);
  Volume single(1, maps.height(), maps.width(), std::vector<float>(plane.begin(), plane.end()));
  return ResizeBilinear(single, out_h, out_w);
}

Json Explanation::ToJson() const {
  Json top = Json::array();
  for (const auto& e : top_k) {
    top.push_back({{"m", e.m}, {"concept", e.name}, {"score", e.score},
                   {"heatmap_ref", e.heatmap_ref}});
  }
  return {{"image_id", image_id}, {"y_hat", y_hat}, {"logits", ToVector(logits)},
          {"k", k}, {"top_k", top}};
}

Explanation ExplainPass(const ForwardPass& pass, const ModelBundle& bundle, int k,
                        const std::string& image_id, const std::string& heatmap_prefix) {
  if (k < 0) Fail(ErrorKind::kInvalidInput, "k must be >= 0");
  Explanation e;
  e.image_id = image_id;
  e.y_hat = pass.prediction.y_hat;
  e.logits = pass.prediction.logits;
  e.k = k;
  e.pooled = pass.pooled;
  const auto& head = bundle.head();
  const Eigen::VectorXd s = ContributionScores(pass.pooled, head, e.y_hat);
  std::vector<int> eligible;
  for (SparseMatrixRf::InnerIterator it(head.weight, e.y_hat); it; ++it) {
    if (it.value() != 0.0f) eligible.push_back(static_cast<int>(it.col()));
  }
  std::sort(eligible.begin(), eligible.end(), [&](int a, int b) {
    if (std::abs(s(a)) != std::abs(s(b))) return std::abs(s(a)) > std::abs(s(b));
    return a < b;
  });
  const std::size_t take = std::min(eligible.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < take; ++i) {
    const int m = eligible[i];
    e.top_k.push_back({m, bundle.catalog().concepts()[static_cast<std::size_t>(m)], s(m),
                       heatmap_prefix + std::to_string(m)});
  }
  return e;
}

Explanation Explain(const Image& image, const ModelBundle& bundle, int k,
                    const std::string& image_id) {
  return ExplainPass(bundle.Forward(image), bundle, k, image_id);
}

RoiMask RoiMask::FromGrid(int grid_h, int grid_w, std::vector<std::uint8_t> cells) {
  if (grid_h < 1 || grid_w < 1 || cells.size() != static_cast<std::size_t>(grid_h) * grid_w) {
    Fail(ErrorKind::kGeometry, "grid mask size does not match its dimensions");
  }
  RoiMask r;
  r.grid_h_ = grid_h;
  r.grid_w_ = grid_w;
  for (auto& c : cells) c = c ? 1 : 0;
  r.grid_ = std::move(cells);
  return r;
}

RoiMask RoiMask::FromCells(int grid_h, int grid_w, std::span<const int> cell_indices) {
  std::vector<std::uint8_t> cells(static_cast<std::size_t>(grid_h) * grid_w, 0);
  for (int idx : cell_indices) {
    if (idx < 0 || idx >= grid_h * grid_w) {
      Fail(ErrorKind::kRange, "cell index " + std::to_string(idx) + " outside the grid");
    }
    cells[static_cast<std::size_t>(idx)] = 1;
  }
  return FromGrid(grid_h, grid_w, std::move(cells));
}

RoiMask RoiMask::FromImage(int image_h, int image_w, std::vector<std::uint8_t> pixels) {
  if (image_h < 1 || image_w < 1 || pixels.size() != static_cast<std::size_t>(image_h) * image_w) {
    Fail(ErrorKind::kGeometry, "image mask size does not match its dimensions");
  }
  RoiMask r;
  r.image_h_ = image_h;
  r.image_w_ = image_w;
  for (auto& p : pixels) p = p ? 1 : 0;
  r.image_ = std::move(pixels);
  return r;
}

RoiMask RoiMask::ToGrid(int grid_h, int grid_w) const {
  if (has_grid()) {
    if (grid_h_ != grid_h || grid_w_ != grid_w) {
      Fail(ErrorKind::kGeometry, "mask grid " + std::to_string(grid_h_) + "x" +
                                     std::to_string(grid_w_) + " differs from model grid");
    }
    return *this;
  }
  std::vector<int> total(static_cast<std::size_t>(grid_h) * grid_w, 0);
  std::vector<int> set(total.size(), 0);
  for (int y = 0; y < image_h_; ++y) {
    const int gy = NearestCell(y, image_h_, grid_h);
    for (int x = 0; x < image_w_; ++x) {
      const std::size_t cell = static_cast<std::size_t>(gy) * grid_w + NearestCell(x, image_w_, grid_w);
      ++total[cell];
      set[cell] += image_[static_cast<std::size_t>(y) * image_w_ + x];
    }
  }
  std::vector<std::uint8_t> cells(total.size(), 0);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cells[i] = total[i] > 0 && 2 * set[i] >= total[i] ? 1 : 0;
  }
  RoiMask out = *this;
  out.grid_h_ = grid_h;
  out.grid_w_ = grid_w;
  out.grid_ = std::move(cells);
  out.downsample_ = "cell-majority from " + std::to_string(image_h_) + "x" +
                    std::to_string(image_w_) + " (nearest align-corners cell center, >=50%)";
  return out;
}

int RoiMask::count() const {
  const auto& v = has_grid() ? grid_ : image_;
  return static_cast<int>(std::count(v.begin(), v.end(), std::uint8_t{1}));
}

RoiResult ExplainAnything(const ConceptMaps& maps, const RoiMask& mask, int k,
                          const RoiOptions& options) {
  if (k < 0) Fail(ErrorKind::kInvalidInput, "k must be >= 0");
  if (options.normalized && (!options.stats || options.stats->size() != maps.channels())) {
    Fail(ErrorKind::kConfiguration, "normalized ranking needs activation stats");
  }
  RoiResult result;
  std::vector<double> agg(static_cast<std::size_t>(maps.channels()), 0.0);
  int set = 0;
  // Grid masks take precedence: they match the maps directly.
  if (mask.has_grid()) {
    if (mask.grid_h() != maps.height() || mask.grid_w() != maps.width()) {
      Fail(ErrorKind::kGeometry, "grid mask does not match the concept map size");
    }
    result.resolution = "grid";
    set = mask.count();
    if (set == 0) Fail(ErrorKind::kEmptyRoi, "mask selects no cells");
    for (int m = 0; m < maps.channels(); ++m) {
      const auto plane = maps.plane(m);
      for (std::size_t i = 0; i < plane.size(); ++i) {
        if (mask.grid_cells()[i]) agg[m] += plane[i];
      }
    }
  } else {
    result.resolution = "image";
    set = mask.count();
    if (set == 0) Fail(ErrorKind::kEmptyRoi, "mask selects no pixels");
    for (int m = 0; m < maps.channels(); ++m) {
      const Volume up = ConceptHeatmap(maps, m, mask.image_h(), mask.image_w());
      const auto plane = up.plane(0);
      for (std::size_t i = 0; i < plane.size(); ++i) {
        if (mask.image_pixels()[i]) agg[m] += plane[i];
      }
    }
  }
  if (options.normalized) {
    for (int m = 0; m < maps.channels(); ++m) {
      agg[m] = (agg[m] - set * options.stats->mean(m)) / options.stats->stddev(m);
    }
  }
  std::vector<int> order(agg.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return agg[a] > agg[b]; });
  const std::size_t take = std::min(order.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < take; ++i) {
    const int m = order[i];
    result.top_k.push_back(
        {m, options.catalog ? options.catalog->concepts()[static_cast<std::size_t>(m)] : "", agg[m]});
  }
  return result;
}

ConceptMaps Intervene(const ConceptMaps& maps, std::span<const EditRecord> edits) {
  ConceptMaps out = maps;
  for (const auto& e : edits) {
    CheckConcept(e.m, maps.channels());
    if (!std::isfinite(e.beta)) Fail(ErrorKind::kInvalidInput, "beta must be finite");
    const RoiMask grid = e.mask.ToGrid(maps.height(), maps.width());
    auto plane = out.plane(e.m);
    const auto beta = static_cast<float>(e.beta);
    for (std::size_t i = 0; i < plane.size(); ++i) {
      if (grid.grid_cells()[i]) plane[i] += beta;
    }
  }
  return out;
}

Json WhatIfResult::ToJson() const {
  return {{"old_y_hat", old_y_hat}, {"new_y_hat", new_y_hat},
          {"old_logits", ToVector(old_logits)}, {"new_logits", ToVector(new_logits)},
          {"logit_deltas", ToVector(logit_deltas)}, {"explanation", updated.ToJson()}};
}

WhatIfResult WhatIf(const ConceptMaps& maps, std::span<const EditRecord> edits,
                    const ModelBundle& bundle, int k, const std::string& image_id) {
  const ForwardPass before = bundle.FromMaps(maps);
  const ForwardPass after = bundle.FromMaps(Intervene(maps, edits));
  WhatIfResult r;
  r.old_y_hat = before.prediction.y_hat;
  r.new_y_hat = after.prediction.y_hat;
  r.old_logits = before.prediction.logits;
  r.new_logits = after.prediction.logits;
  r.logit_deltas = r.new_logits - r.old_logits;
  r.updated = ExplainPass(after, bundle, k, image_id);
  return r;
}

HeatmapPng EncodeHeatmapPng(const Volume& heatmap) {
  const auto v = heatmap.plane(0);
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const float lo = *lo_it;
  const float hi = *hi_it;
  std::vector<std::uint8_t> gray(v.size(), 0);
  if (hi > lo) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      gray[i] = static_cast<std::uint8_t>(std::lround(255.0 * (v[i] - lo) / (hi - lo)));
    }
  }
  return {EncodeGrayPng(gray, heatmap.height(), heatmap.width()),
          {{"normalization", "min-max"}, {"min", lo}, {"max", hi},
           {"height", heatmap.height()}, {"width", heatmap.width()}}};
}

std::string EncodeHeatmapRaw(const Volume& heatmap) {
  std::string out;
  AppendI32(out, heatmap.height());
  AppendI32(out, heatmap.width());
  out += PackF32(heatmap.plane(0));
  return out;
}

Volume DecodeHeatmapRaw(std::string_view bytes) {
  const int h = ReadI32(bytes, 0);
  const int w = ReadI32(bytes, 4);
  if (h < 0 || w < 0 || bytes.size() != 8 + static_cast<std::size_t>(h) * w * 4) {
    Fail(ErrorKind::kIntegrity, "raw heatmap length does not match its header");
  }
  return Volume(1, h, w, UnpackF32(bytes.substr(8)));
}

}  // namespace scbm
