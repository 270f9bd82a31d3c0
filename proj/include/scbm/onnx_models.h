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

#ifndef SCBM_ONNX_MODELS_H_
#define SCBM_ONNX_MODELS_H_

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "scbm/backbone_adapter.h"
#include "scbm/similarity_engine.h"

namespace scbm {

struct OnnxNet;

struct OnnxPreprocess {
  int input_size = 224;
  std::array<float, 3> mean = {0.485f, 0.456f, 0.406f};
  std::array<float, 3> std = {0.229f, 0.224f, 0.225f};
};

inline constexpr OnnxPreprocess kClipPreprocess = {
    224, {0.48145466f, 0.4578275f, 0.40821073f}, {0.26862954f, 0.26130258f, 0.27577711f}};

// Frozen backbone exported to ONNX. `output` names the graph output (or
// intermediate blob) that serves as the feature layer; 4-D outputs are read as
// [1, D, H, W], 3-D ones as [1, T, D] token sequences.
class OnnxBackbone : public Backbone {
 public:
  OnnxBackbone(const std::filesystem::path& model, std::string output,
               OnnxPreprocess preprocess = {});
  ~OnnxBackbone() override;

  std::string id() const override { return id_; }
  std::vector<std::string> layers() const override { return {output_}; }
  Activations Forward(const Image& image, const std::string& layer) const override;

 private:
  std::string output_;
  OnnxPreprocess pre_;
  std::string id_;
  std::unique_ptr<OnnxNet> net_;
  mutable std::mutex mu_;
};

// CLIP-style encoder pair: an ONNX image tower plus text embeddings computed
// offline and stored as JSON {"model": id, "embeddings": {text: [floats]}}.
class OnnxClipEncoder : public EmbeddingClient {
 public:
  OnnxClipEncoder(const std::filesystem::path& image_model,
                  const std::filesystem::path& text_embeddings,
                  OnnxPreprocess preprocess = kClipPreprocess);
  ~OnnxClipEncoder() override;

  std::vector<std::vector<float>> EncodeImages(std::span<const Image> images) override;
  std::vector<std::vector<float>> EncodeTexts(std::span<const std::string> texts) override;
  std::string encoder_id() const override { return id_; }
  bool concurrent_safe() const override { return true; }

 private:
  OnnxPreprocess pre_;
  std::string id_;
  std::map<std::string, std::vector<float>> text_;
  std::unique_ptr<OnnxNet> net_;
  std::mutex mu_;
};

}  // namespace scbm

#endif  // SCBM_ONNX_MODELS_H_
