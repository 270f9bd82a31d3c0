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

#include "scbm/tensor.h"

#include <algorithm>
#include <cmath>
#include <utility>

#include "scbm/errors.h"

namespace scbm {

Volume::Volume(int channels, int height, int width, float fill)
    : channels_(channels), height_(height), width_(width),
      values_(static_cast<std::size_t>(channels) * height * width, fill) {
  if (channels < 0 || height < 0 || width < 0) {
    Fail(ErrorKind::kGeometry, "negative volume dimension");
  }
}

Volume::Volume(int channels, int height, int width, std::vector<float> values)
    : channels_(channels), height_(height), width_(width),
      values_(std::move(values)) {
  if (values_.size() != static_cast<std::size_t>(channels) * height * width) {
    Fail(ErrorKind::kGeometry, "volume payload does not match its dimensions");
  }
}

bool Volume::AllFinite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](float v) { return std::isfinite(v); });
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

std::vector<Tap> Taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale =
      out > 1 ? static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
  for (int i = 0; i < out; ++i) {
    const double src = i * scale;
    int lo = static_cast<int>(std::floor(src));
    lo = std::clamp(lo, 0, in - 1);
    const int hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace

Volume ResizeBilinear(const Volume& in, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) Fail(ErrorKind::kGeometry, "resize to empty size");
  if (in.height() < 1 || in.width() < 1) {
    Fail(ErrorKind::kGeometry, "resize of empty volume");
  }
  if (in.height() == out_h && in.width() == out_w) return in;
  const auto ty = Taps(in.height(), out_h);
  const auto tx = Taps(in.width(), out_w);
  Volume out(in.channels(), out_h, out_w);
  for (int c = 0; c < in.channels(); ++c) {
    for (int y = 0; y < out_h; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      for (int x = 0; x < out_w; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(x)];
        const double top = (1.0 - b.frac) * in.at(c, a.lo, b.lo) +
                           b.frac * in.at(c, a.lo, b.hi);
        const double bottom = (1.0 - b.frac) * in.at(c, a.hi, b.lo) +
                              b.frac * in.at(c, a.hi, b.hi);
        double v = (1.0 - a.frac) * top + a.frac * bottom;
        // Convex combination; clamp away rounding past the corner values.
        const float lo = std::min({in.at(c, a.lo, b.lo), in.at(c, a.lo, b.hi),
                                   in.at(c, a.hi, b.lo), in.at(c, a.hi, b.hi)});
        const float hi = std::max({in.at(c, a.lo, b.lo), in.at(c, a.lo, b.hi),
                                   in.at(c, a.hi, b.lo), in.at(c, a.hi, b.hi)});
        out.at(c, y, x) = std::clamp(static_cast<float>(v), lo, hi);
      }
    }
  }
  return out;
}

}  // namespace scbm
