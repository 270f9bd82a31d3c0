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

#include "scbm/toy.h"

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "scbm/concept_catalog.h"
#include "scbm/errors.h"

namespace scbm {
namespace {

constexpr std::array<PaletteColor, 12> kPalette = {{
    {"red", {220, 40, 40}},
    {"green", {40, 170, 60}},
    {"blue", {40, 70, 210}},
    {"yellow", {230, 210, 50}},
    {"purple", {130, 50, 160}},
    {"orange", {240, 140, 30}},
    {"cyan", {40, 200, 210}},
    {"pink", {240, 140, 190}},
    {"brown", {120, 80, 40}},
    {"white", {245, 245, 245}},
    {"gray", {128, 128, 128}},
    {"black", {20, 20, 20}},
}};
constexpr int kObjectColors = 10;
constexpr int kHashedAxes = 4;
constexpr std::array<std::string_view, 12> kNouns = {
    "paint", "leaves", "sky", "sunlight", "flowers", "fruit",
    "water", "petals", "wood", "snow", "concrete", "shadow"};

int NearestPalette(const std::uint8_t* p) {
  int best = 0;
  int best_d = 1 << 30;
  for (int k = 0; k < static_cast<int>(kPalette.size()); ++k) {
    int d = 0;
    for (int c = 0; c < 3; ++c) {
      const int diff = static_cast<int>(p[c]) - kPalette[k].rgb[c];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

bool IsRing(const std::uint8_t* p) { return p[0] == 255 && p[1] == 0 && p[2] == 0; }

struct Circle {
  double cy = 0;
  double cx = 0;
  double r = 0;
};

// Algebraic least-squares circle through the ring pixels; works on arcs
// clipped by the image border.
std::optional<Circle> FitRing(const Image& image) {
  std::vector<std::pair<double, double>> pts;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (IsRing(image.px(y, x))) pts.emplace_back(y, x);
    }
  }
  if (pts.size() < 8) return std::nullopt;
  Eigen::MatrixXd a(pts.size(), 3);
  Eigen::VectorXd b(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto [y, x] = pts[i];
    a.row(static_cast<Eigen::Index>(i)) << x, y, 1.0;
    b(static_cast<Eigen::Index>(i)) = -(x * x + y * y);
  }
  const Eigen::Vector3d s = a.colPivHouseholderQr().solve(b);
  Circle c{-s(1) / 2, -s(0) / 2, 0};
  const double r2 = c.cx * c.cx + c.cy * c.cy - s(2);
  if (!(r2 > 0) || !std::isfinite(r2)) return std::nullopt;
  c.r = std::sqrt(r2);
  return c;
}

std::vector<std::string> Words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isalpha(static_cast<unsigned char>(ch))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::uint64_t Fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  // Uniform integer in [lo, hi].
  int Int(int lo, int hi) {
    return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace

std::span<const PaletteColor> ToyPalette() { return kPalette; }

std::vector<std::string> ToyClassNames() {
  std::vector<std::string> out;
  for (int k = 0; k < kObjectColors; ++k) out.push_back(std::string(kPalette[k].name) + " object");
  return out;
}

std::vector<float> ToyColorEncoder::EncodeImage(const Image& image) const {
  const int k = static_cast<int>(kPalette.size());
  std::vector<double> global(k, 0.0), local(k, 0.0);
  double n_global = 0, n_local = 0;
  const auto ring = FitRing(image);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const auto* p = image.px(y, x);
      if (IsRing(p)) continue;
      const int c = NearestPalette(p);
      global[c] += 1;
      n_global += 1;
      if (ring && std::hypot(y - ring->cy, x - ring->cx) < ring->r - 1.0) {
        local[c] += 1;
        n_local += 1;
      }
    }
  }
  std::vector<float> out(static_cast<std::size_t>(k + kHashedAxes), 0.0f);
  const double wl = n_local > 0 ? local_weight_ : 0.0;
  for (int c = 0; c < k; ++c) {
    const double g = n_global > 0 ? global[c] / n_global : 0.0;
    const double l = n_local > 0 ? local[c] / n_local : 0.0;
    out[c] = static_cast<float>(wl * l + (1.0 - wl) * g);
  }
  return out;
}

std::vector<float> ToyColorEncoder::EncodeText(const std::string& text) const {
  const int k = static_cast<int>(kPalette.size());
  std::vector<float> out(static_cast<std::size_t>(k + kHashedAxes), 0.0f);
  for (const auto& w : Words(text)) {
    const auto it = std::find_if(kPalette.begin(), kPalette.end(),
                                 [&](const PaletteColor& p) { return p.name == w; });
    if (it != kPalette.end()) {
      out[static_cast<std::size_t>(it - kPalette.begin())] += 1.0f;
    } else {
      out[static_cast<std::size_t>(k) + Fnv1a(w) % kHashedAxes] += 0.3f;
    }
  }
  double n = 0;
  for (float v : out) n += static_cast<double>(v) * v;
  if (n > 0) {
    for (auto& v : out) v = static_cast<float>(v / std::sqrt(n));
  }
  return out;
}

std::vector<std::vector<float>> ToyColorEncoder::EncodeImages(std::span<const Image> images) {
  std::vector<std::vector<float>> out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back(EncodeImage(im));
  return out;
}

std::vector<std::vector<float>> ToyColorEncoder::EncodeTexts(std::span<const std::string> texts) {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(EncodeText(t));
  return out;
}

std::string ToyColorEncoder::encoder_id() const {
  return "toy-color-v1-l" + std::to_string(static_cast<int>(std::lround(local_weight_ * 100)));
}

FileImages::FileImages(std::vector<DatasetEntry> entries) : entries_(std::move(entries)) {}

std::string FileImages::id(int index) const {
  return entries_.at(static_cast<std::size_t>(index)).image.filename().string();
}

Image FileImages::load(int index) const {
  return LoadImage(entries_.at(static_cast<std::size_t>(index)).image);
}

void GenerateToyDataset(const std::filesystem::path& dir, const ToyDatasetOptions& options) {
  if (options.size < 32) Fail(ErrorKind::kConfiguration, "toy images must be at least 32 px");
  if (options.per_class_train < 1 || options.per_class_val < 0) {
    Fail(ErrorKind::kConfiguration, "per-class counts must be positive");
  }
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  Rng rng(options.seed);
  const int s = options.size;
  std::string train, val;
  for (int l = 0; l < kObjectColors; ++l) {
    const int total = options.per_class_train + options.per_class_val;
    for (int i = 0; i < total; ++i) {
      const bool is_val = i >= options.per_class_train;
      const Rgb bg = kPalette[rng.Int(0, 1) ? 10 : 11].rgb;
      Image img(s, s, bg);
      std::vector<std::uint8_t> mask(static_cast<std::size_t>(s) * s, 0);
      const int r = rng.Int(s / 6, s / 3);
      const int cy = rng.Int(r + 1, s - r - 2);
      const int cx = rng.Int(r + 1, s - r - 2);
      const bool disk = rng.Int(0, 1) == 1;
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          const bool in = disk ? (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r
                               : std::abs(y - cy) <= r && std::abs(x - cx) <= r;
          if (!in) continue;
          std::copy_n(kPalette[l].rgb.begin(), 3, img.px(y, x));
          mask[static_cast<std::size_t>(y) * s + x] = 255;
        }
      }
      if (rng.Int(0, 1) == 1) {
        // Small distractor patch of another object color in a free corner.
        const int other = (l + rng.Int(1, kObjectColors - 1)) % kObjectColors;
        const int side = s / 10;
        const int oy = cy < s / 2 ? s - side - 1 : 1;
        const int ox = cx < s / 2 ? s - side - 1 : 1;
        for (int y = oy; y < oy + side; ++y) {
          for (int x = ox; x < ox + side; ++x) {
            if (mask[static_cast<std::size_t>(y) * s + x]) continue;
            std::copy_n(kPalette[other].rgb.begin(), 3, img.px(y, x));
          }
        }
      }
      for (auto& v : img.rgb) v = static_cast<std::uint8_t>(std::clamp(v + rng.Int(-8, 8), 0, 254));
      const std::string stem = std::string(is_val ? "val" : "train") + "_" + std::to_string(l) +
                               "_" + std::to_string(i);
      SaveImage(img, dir / "images" / (stem + ".png"));
      WriteFileAtomic(dir / "masks" / (stem + ".png"), EncodeGrayPng(mask, s, s));
      const Json line = {{"image", "images/" + stem + ".png"},
                         {"label", l},
                         {"mask", "masks/" + stem + ".png"}};
      (is_val ? val : train) += line.dump() + "\n";
    }
  }
  WriteFileAtomic(dir / "train.jsonl", train);
  WriteFileAtomic(dir / "val.jsonl", val);
  const auto classes = ToyClassNames();
  WriteJson(dir / "classes.json", classes);

  const auto prompts = BuildPrompts(classes);
  Json responses = Json::object();
  for (int l = 0; l < kObjectColors; ++l) {
    const std::string color(kPalette[l].name);
    const std::string noun(kNouns[l]);
    const int next = (l + 1) % kObjectColors;
    responses[prompts[3 * l]] = "- " + color + " " + noun + "\n- " + classes[l] +
                                "\n- a shiny surface that reflects the light\n";
    responses[prompts[3 * l + 1]] = "1. gray concrete\n2. black shadow\n3. " +
                                    std::string(kPalette[next].name) + " " +
                                    std::string(kNouns[next]) + "\n";
    // A near-duplicate of the first answer: plural, or re-cased when already plural.
    std::string variant = color + " " + noun + "s";
    if (noun.back() == 's') {
      variant = color + "  " + noun;
      variant[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(variant[0])));
    }
    responses[prompts[3 * l + 2]] = "- " + variant + "\n- geometric shape\n";
  }
  WriteJson(dir / "llm_responses.json", responses);
}

}  // namespace scbm
