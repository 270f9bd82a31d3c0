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

#ifndef SCBM_TENSOR_H_
#define SCBM_TENSOR_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace scbm {

// Dense [channels, height, width] float array, row-major.
class Volume {
 public:
  Volume() = default;
  Volume(int channels, int height, int width, float fill = 0.0f);
  Volume(int channels, int height, int width, std::vector<float> values);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int plane_size() const { return height_ * width_; }
  std::size_t size() const { return values_.size(); }

  float& at(int c, int h, int w) {
    return values_[(static_cast<std::size_t>(c) * height_ + h) * width_ + w];
  }
  float at(int c, int h, int w) const {
    return values_[(static_cast<std::size_t>(c) * height_ + h) * width_ + w];
  }

  std::span<float> plane(int c) {
    return {values_.data() + static_cast<std::size_t>(c) * plane_size(),
            static_cast<std::size_t>(plane_size())};
  }
  std::span<const float> plane(int c) const {
    return {values_.data() + static_cast<std::size_t>(c) * plane_size(),
            static_cast<std::size_t>(plane_size())};
  }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }
  bool AllFinite() const;

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> values_;
};

// Concept maps c(x): one [height, width] plane per concept.
using ConceptMaps = Volume;

// Dense [n, channels, height, width] array, row-major.
struct Tensor4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<float> values;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, float fill = 0.0f)
      : n(n_), c(c_), h(h_), w(w_),
        values(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t index(int i, int j, int y, int x) const {
    return ((static_cast<std::size_t>(i) * c + j) * h + y) * w + x;
  }
  float& at(int i, int j, int y, int x) { return values[index(i, j, y, x)]; }
  float at(int i, int j, int y, int x) const { return values[index(i, j, y, x)]; }
  bool SameShape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

// Bilinear resize with the align-corners convention: output corner samples
// coincide with input corner samples. Identity when sizes already match.
Volume ResizeBilinear(const Volume& in, int out_h, int out_w);

}  // namespace scbm

#endif  // SCBM_TENSOR_H_
