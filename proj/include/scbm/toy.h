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

#ifndef SCBM_TOY_H_
#define SCBM_TOY_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scbm/evaluator.h"
#include "scbm/similarity_engine.h"

namespace scbm {

// Named colors shared by the toy encoder and the toy dataset.
struct PaletteColor {
  std::string_view name;
  Rgb rgb;
};
std::span<const PaletteColor> ToyPalette();

// Color-keyword image/text encoder. Images are summarized as soft palette
// histograms; a pure-red ring, when present, restricts the local histogram
// to the pixels it encloses, which is blended with the whole-image one.
// Texts map palette words to their color axis and other words to a few
// hashed axes. Stateless and safe for concurrent use.
class ToyColorEncoder : public EmbeddingClient {
 public:
  explicit ToyColorEncoder(double local_weight = 0.75) : local_weight_(local_weight) {}

  std::vector<std::vector<float>> EncodeImages(std::span<const Image> images) override;
  std::vector<std::vector<float>> EncodeTexts(std::span<const std::string> texts) override;
  std::string encoder_id() const override;
  bool concurrent_safe() const override { return true; }

  std::vector<float> EncodeImage(const Image& image) const;
  std::vector<float> EncodeText(const std::string& text) const;

 private:
  double local_weight_;
};

// Loads images lazily from dataset entries.
class FileImages : public ImageSource {
 public:
  explicit FileImages(std::vector<DatasetEntry> entries);
  int size() const override { return static_cast<int>(entries_.size()); }
  std::string id(int index) const override;
  Image load(int index) const override;
  const std::vector<DatasetEntry>& entries() const { return entries_; }

 private:
  std::vector<DatasetEntry> entries_;
};

struct ToyDatasetOptions {
  int per_class_train = 16;
  int per_class_val = 4;
  int size = 64;
  std::uint64_t seed = 0;
};

// Ten classes, one per object color, each image a single disk or square on a
// gray or black background with pixel noise. Writes images/, masks/,
// train.jsonl, val.jsonl, classes.json and llm_responses.json (replayable
// answers to the concept prompts) under `dir`.
void GenerateToyDataset(const std::filesystem::path& dir, const ToyDatasetOptions& options);

std::vector<std::string> ToyClassNames();

}  // namespace scbm

#endif  // SCBM_TOY_H_
