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

#include "scbm/backbone_adapter.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "scbm/errors.h"

namespace scbm {

std::string_view BackboneKindName(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::kCnn: return "cnn";
    case BackboneKind::kVitPatchOnly: return "vit_patch_only";
    case BackboneKind::kVitPatchPlusCls: return "vit_patch_plus_cls";
  }
  return "unknown";
}

BackboneKind ParseBackboneKind(std::string_view name) {
  if (name == "cnn") return BackboneKind::kCnn;
  if (name == "vit_patch_only") return BackboneKind::kVitPatchOnly;
  if (name == "vit_patch_plus_cls") return BackboneKind::kVitPatchPlusCls;
  Fail(ErrorKind::kConfiguration, "unknown backbone kind '" + std::string(name) + "'");
}

Json BackboneConfig::ToJson() const {
  return {{"kind", std::string(BackboneKindName(kind))},
          {"feature_layer", feature_layer},
          {"input_size", input_size},
          {"frozen", frozen}};
}

BackboneConfig BackboneConfig::FromJson(const Json& json) {
  BackboneConfig c;
  c.kind = ParseBackboneKind(json.value("kind", std::string("cnn")));
  c.feature_layer = json.value("feature_layer", std::string());
  c.input_size = json.value("input_size", 224);
  c.frozen = json.value("frozen", true);
  if (!c.frozen) Fail(ErrorKind::kConfiguration, "backbone must stay frozen");
  if (c.input_size < 1) Fail(ErrorKind::kConfiguration, "input_size must be positive");
  return c;
}

FeatureMap ExtractFeatures(const Image& image, const Backbone& backbone,
                           const BackboneConfig& config) {
  if (image.height != config.input_size || image.width != config.input_size) {
    Fail(ErrorKind::kGeometry, "image is " + std::to_string(image.height) + "x" +
                                   std::to_string(image.width) + ", backbone expects " +
                                   std::to_string(config.input_size));
  }
  const auto layers = backbone.layers();
  if (std::find(layers.begin(), layers.end(), config.feature_layer) == layers.end()) {
    Fail(ErrorKind::kConfiguration, "backbone " + backbone.id() + " has no layer '" +
                                        config.feature_layer + "'");
  }
  Activations act = backbone.Forward(image, config.feature_layer);
  const auto finite = [&] {
    return std::all_of(act.data.begin(), act.data.end(),
                       [](float v) { return std::isfinite(v); });
  };
  if (!finite()) Fail(ErrorKind::kDivergence, "backbone produced non-finite activations");

  FeatureMap fm{Volume(), backbone.id(), config.feature_layer};
  if (config.kind == BackboneKind::kCnn) {
    if (act.shape.size() != 3) {
      Fail(ErrorKind::kGeometry, "cnn layer must produce a [D, H, W] map");
    }
    fm.values = Volume(act.shape[0], act.shape[1], act.shape[2], std::move(act.data));
    return fm;
  }

  if (act.shape.size() != 2) Fail(ErrorKind::kGeometry, "vit layer must produce [T, D] tokens");
  const int tokens = act.shape[0];
  const int width = act.shape[1];
  auto side_of = [](int count) {
    const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(count))));
    return s * s == count && count > 0 ? s : -1;
  };
  bool has_cls = false;
  int side = -1;
  if (config.kind == BackboneKind::kVitPatchPlusCls) {
    side = side_of(tokens - 1);
    has_cls = true;
  } else if ((side = side_of(tokens)) < 0) {
    side = side_of(tokens - 1);
    has_cls = true;
  }
  if (side < 0) {
    Fail(ErrorKind::kGeometry, std::to_string(has_cls ? tokens - 1 : tokens) +
                                   " patch tokens do not form a square grid");
  }
  const int first_patch = has_cls ? 1 : 0;
  const bool concat = config.kind == BackboneKind::kVitPatchPlusCls;
  Volume v(concat ? 2 * width : width, side, side);
  for (int p = 0; p < side * side; ++p) {
    const int y = p / side;
    const int x = p % side;
    const float* tok = act.data.data() + static_cast<std::size_t>(first_patch + p) * width;
    for (int d = 0; d < width; ++d) v.at(d, y, x) = tok[d];
    if (concat) {
      for (int d = 0; d < width; ++d) v.at(width + d, y, x) = act.data[static_cast<std::size_t>(d)];
    }
  }
  fm.values = std::move(v);
  return fm;
}

FeatureMap ResizeToGrid(const FeatureMap& fm, const GridSpec& grid) {
  return {ResizeBilinear(fm.values, grid.grid_h, grid.grid_w), fm.backbone_id, fm.layer_tag};
}

PatchStatsBackbone::PatchStatsBackbone(int input_size, int patch, int channels,
                                       std::uint64_t seed)
    : input_size_(input_size), patch_(patch), channels_(channels), seed_(seed) {
  if (patch < 1 || input_size % patch != 0 || channels < 1) {
    Fail(ErrorKind::kConfiguration, "patch must divide input_size and channels >= 1");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  projection_.resize(static_cast<std::size_t>(channels) * kStats);
  for (float& w : projection_) w = normal(rng);
}

std::string PatchStatsBackbone::id() const {
  return "patch-stats-i" + std::to_string(input_size_) + "-p" + std::to_string(patch_) +
         "-d" + std::to_string(channels_) + "-s" + std::to_string(seed_);
}

Activations PatchStatsBackbone::Forward(const Image& image, const std::string& layer) const {
  if (layer != "patch_features") Fail(ErrorKind::kConfiguration, "unknown layer " + layer);
  const int side = input_size_ / patch_;
  Activations act{{channels_, side, side},
                  std::vector<float>(static_cast<std::size_t>(channels_) * side * side)};
  for (int py = 0; py < side; ++py) {
    for (int px = 0; px < side; ++px) {
      // Mean and spread of each channel over the patch, plus chroma terms.
      double sum[3] = {0, 0, 0};
      double sq[3] = {0, 0, 0};
      for (int y = py * patch_; y < (py + 1) * patch_; ++y) {
        for (int x = px * patch_; x < (px + 1) * patch_; ++x) {
          const std::uint8_t* p = image.px(y, x);
          for (int c = 0; c < 3; ++c) {
            const double v = p[c] / 255.0;
            sum[c] += v;
            sq[c] += v * v;
          }
        }
      }
      const double count = static_cast<double>(patch_) * patch_;
      float stats[kStats];
      for (int c = 0; c < 3; ++c) {
        const double mean = sum[c] / count;
        stats[c] = static_cast<float>(mean - 0.5);
        stats[3 + c] = static_cast<float>(std::sqrt(std::max(0.0, sq[c] / count - mean * mean)));
      }
      stats[6] = stats[0] - stats[1];
      stats[7] = stats[1] - stats[2];
      stats[8] = stats[2] - stats[0];
      for (int d = 0; d < channels_; ++d) {
        float acc = 0;
        for (int s = 0; s < kStats; ++s) {
          acc += projection_[static_cast<std::size_t>(d) * kStats + s] * stats[s];
        }
        act.data[(static_cast<std::size_t>(d) * side + py) * side + px] = std::tanh(acc);
      }
    }
  }
  return act;
}

}  // namespace scbm
