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

#include "scbm/onnx_models.h"

#include <opencv2/dnn.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>

#include "scbm/errors.h"
#include "scbm/io.h"

namespace scbm {

struct OnnxNet {
  cv::dnn::Net net;
};

namespace {

std::unique_ptr<OnnxNet> ReadNet(const std::filesystem::path& model) {
  if (!std::filesystem::exists(model)) {
    Fail(ErrorKind::kConfiguration, "ONNX model not found: " + model.string());
  }
  auto out = std::make_unique<OnnxNet>();
  try {
    out->net = cv::dnn::readNetFromONNX(model.string());
  } catch (const cv::Exception& e) {
    Fail(ErrorKind::kConfiguration, "cannot load " + model.string() + ": " + e.what());
  }
  out->net.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
  out->net.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);
  return out;
}

std::string ModelDigest(const std::filesystem::path& model) {
  return Sha256Hex(ReadFile(model)).substr(0, 16);
}

cv::Mat ToBlob(const Image& image, const OnnxPreprocess& pre) {
  cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.rgb.data()));
  cv::Mat resized;
  if (image.height != pre.input_size || image.width != pre.input_size) {
    cv::resize(rgb, resized, cv::Size(pre.input_size, pre.input_size), 0, 0, cv::INTER_CUBIC);
  } else {
    resized = rgb;
  }
  const int sizes[] = {1, 3, pre.input_size, pre.input_size};
  cv::Mat blob(4, sizes, CV_32F);
  float* out = blob.ptr<float>();
  const std::size_t plane = static_cast<std::size_t>(pre.input_size) * pre.input_size;
  for (int y = 0; y < pre.input_size; ++y) {
    const auto* row = resized.ptr<std::uint8_t>(y);
    for (int x = 0; x < pre.input_size; ++x) {
      for (int c = 0; c < 3; ++c) {
        out[c * plane + static_cast<std::size_t>(y) * pre.input_size + x] =
            (row[3 * x + c] / 255.0f - pre.mean[c]) / pre.std[c];
      }
    }
  }
  return blob;
}

}  // namespace

OnnxBackbone::OnnxBackbone(const std::filesystem::path& model, std::string output,
                           OnnxPreprocess preprocess)
    : output_(std::move(output)), pre_(preprocess), net_(ReadNet(model)) {
  id_ = "onnx-" + ModelDigest(model) + "-" + output_ + "-i" + std::to_string(pre_.input_size);
}

OnnxBackbone::~OnnxBackbone() = default;

Activations OnnxBackbone::Forward(const Image& image, const std::string& layer) const {
  if (layer != output_) Fail(ErrorKind::kConfiguration, "backbone has no layer '" + layer + "'");
  const cv::Mat blob = ToBlob(image, pre_);
  cv::Mat out;
  {
    std::lock_guard<std::mutex> lock(mu_);
    net_->net.setInput(blob);
    out = net_->net.forward(output_).clone();
  }
  Activations a;
  const float* p = out.ptr<float>();
  if (out.dims == 4 && out.size[0] == 1) {
    a.shape = {out.size[1], out.size[2], out.size[3]};
  } else if (out.dims == 3 && out.size[0] == 1) {
    a.shape = {out.size[1], out.size[2]};
  } else if (out.dims == 2) {
    a.shape = {out.size[0], out.size[1]};
  } else {
    Fail(ErrorKind::kGeometry, "unsupported backbone output rank " + std::to_string(out.dims));
  }
  a.data.assign(p, p + out.total());
  return a;
}

OnnxClipEncoder::OnnxClipEncoder(const std::filesystem::path& image_model,
                                 const std::filesystem::path& text_embeddings,
                                 OnnxPreprocess preprocess)
    : pre_(preprocess), net_(ReadNet(image_model)) {
  const Json j = ReadJson(text_embeddings);
  const std::string text_model = j.value("model", "unknown");
  for (const auto& [text, vec] : j.at("embeddings").items()) {
    text_[text] = vec.get<std::vector<float>>();
  }
  id_ = "onnx-clip-" + ModelDigest(image_model) + "-text-" + text_model;
}

OnnxClipEncoder::~OnnxClipEncoder() = default;

std::vector<std::vector<float>> OnnxClipEncoder::EncodeImages(std::span<const Image> images) {
  std::vector<std::vector<float>> out;
  for (const auto& im : images) {
    const cv::Mat blob = ToBlob(im, pre_);
    cv::Mat emb;
    {
      std::lock_guard<std::mutex> lock(mu_);
      net_->net.setInput(blob);
      emb = net_->net.forward().clone();
    }
    const float* p = emb.ptr<float>();
    out.emplace_back(p, p + emb.total());
  }
  return out;
}

std::vector<std::vector<float>> OnnxClipEncoder::EncodeTexts(std::span<const std::string> texts) {
  std::vector<std::vector<float>> out;
  for (const auto& t : texts) {
    auto it = text_.find(t);
    if (it == text_.end()) {
      Fail(ErrorKind::kTransport, "no precomputed text embedding for '" + t + "'");
    }
    out.push_back(it->second);
  }
  return out;
}

}  // namespace scbm
