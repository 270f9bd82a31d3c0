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

#ifndef SCBM_BACKBONE_ADAPTER_H_
#define SCBM_BACKBONE_ADAPTER_H_

#include <cstdint>
#include <string>
#include <vector>

#include "scbm/image.h"
#include "scbm/io.h"
#include "scbm/similarity_engine.h"
#include "scbm/tensor.h"

namespace scbm {

enum class BackboneKind { kCnn, kVitPatchOnly, kVitPatchPlusCls };

std::string_view BackboneKindName(BackboneKind kind);
BackboneKind ParseBackboneKind(std::string_view name);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::kCnn;
  std::string feature_layer;
  int input_size = 224;
  // The backbone is never updated; kept explicit for provenance records.
  bool frozen = true;

  Json ToJson() const;
  static BackboneConfig FromJson(const Json& json);
};

// f(x): [D, H_f, W_f] activations plus where they came from.
struct FeatureMap {
  Volume values;
  std::string backbone_id;
  std::string layer_tag;

  int channels() const { return values.channels(); }
};

// Raw layer output of a backbone: either a spatial map with shape
// {D, H, W} or a token sequence with shape {T, D}.
struct Activations {
  std::vector<int> shape;
  std::vector<float> data;
};

// Frozen feature extractor. Forward() must be deterministic (inference mode)
// and callable concurrently.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual std::string id() const = 0;
  virtual std::vector<std::string> layers() const = 0;
  virtual Activations Forward(const Image& image, const std::string& layer) const = 0;
};

// CNN layers map directly; ViT token sequences are reshaped to a square patch
// grid, and for kVitPatchPlusCls the CLS token (index 0) is broadcast to every
// cell and appended along channels.
FeatureMap ExtractFeatures(const Image& image, const Backbone& backbone,
                           const BackboneConfig& config);

// Channel-wise align-corners bilinear resize to the grid's cell layout.
FeatureMap ResizeToGrid(const FeatureMap& fm, const GridSpec& grid);

// Small fixed-weight convolutional feature extractor: per-patch color
// statistics followed by a seeded random projection and tanh. Useful as a
// self-contained backbone for fixtures and smoke runs.
class PatchStatsBackbone : public Backbone {
 public:
  PatchStatsBackbone(int input_size, int patch, int channels, std::uint64_t seed);

  std::string id() const override;
  std::vector<std::string> layers() const override { return {"patch_features"}; }
  Activations Forward(const Image& image, const std::string& layer) const override;

  int input_size() const { return input_size_; }

 private:
  static constexpr int kStats = 9;
  int input_size_;
  int patch_;
  int channels_;
  std::uint64_t seed_;
  std::vector<float> projection_;  // [channels, kStats]
};

}  // namespace scbm

#endif  // SCBM_BACKBONE_ADAPTER_H_
