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

#ifndef SCBM_IMAGE_H_
#define SCBM_IMAGE_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "scbm/tensor.h"

namespace scbm {

// 8-bit interleaved RGB image.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int h, int w, std::array<std::uint8_t, 3> fill = {0, 0, 0});

  std::uint8_t* px(int y, int x) {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* px(int y, int x) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  bool contains(int y, int x) const {
    return y >= 0 && y < height && x >= 0 && x < width;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

Image LoadImage(const std::filesystem::path& path);
// Decodes PNG/JPEG bytes; throws Error(kInvalidInput) on malformed data.
Image DecodeImage(std::string_view bytes);
std::string EncodePng(const Image& image);
void SaveImage(const Image& image, const std::filesystem::path& path);
// Bilinear resize (OpenCV INTER_LINEAR).
Image ResizeImage(const Image& image, int height, int width);

// Single-channel 8-bit masks and heatmaps.
std::string EncodeGrayPng(const std::vector<std::uint8_t>& gray, int height,
                          int width);
// Returns the decoded single-channel image; any nonzero pixel is foreground
// when used as a mask.
std::vector<std::uint8_t> DecodeGrayPng(std::string_view bytes, int* height,
                                        int* width);

}  // namespace scbm

#endif  // SCBM_IMAGE_H_
