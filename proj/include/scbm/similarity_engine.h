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

#ifndef SCBM_SIMILARITY_ENGINE_H_
#define SCBM_SIMILARITY_ENGINE_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scbm/concept_catalog.h"
#include "scbm/image.h"
#include "scbm/io.h"
#include "scbm/tensor.h"

namespace scbm {

// Where the first row/column of circle centers sits.
enum class GridAnchor { kZero, kRadius };

struct GridSpec {
  int image_h = 0;
  int image_w = 0;
  int grid_h = 0;
  int grid_w = 0;
  int radius = 0;
  int stride_h = 0;
  int stride_w = 0;
  GridAnchor anchor = GridAnchor::kZero;
  // Pixel (row, col) of each circle center, row-major over the grid.
  std::vector<std::pair<int, int>> centers;

  int cells() const { return grid_h * grid_w; }
  Json ToJson() const;
  static GridSpec FromJson(const Json& json);
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// Strides are floor(image / (grid - 1)); center i sits at i * stride (offset
// by the radius for GridAnchor::kRadius), clamped to the last pixel.
GridSpec MakeGrid(int image_h, int image_w, int grid_h, int grid_w, int radius,
                  GridAnchor anchor = GridAnchor::kZero);

using Rgb = std::array<std::uint8_t, 3>;
inline constexpr Rgb kPureRed = {255, 0, 0};

// True when pixel offset (dy, dx) from a center lies on the ring
// |dist - radius| <= line_width / 2.
bool OnRing(int dy, int dx, int radius, double line_width);

// Paints a non-anti-aliased ring onto a copy of `image`; out-of-bounds ring
// pixels are clipped.
Image DrawCircle(const Image& image, int center_row, int center_col, int radius,
                 double line_width = 2.0, Rgb color = kPureRed);

// Image-text encoder pair. Preprocessing (resize, normalization) belongs to
// the client and must be reflected in encoder_id().
class EmbeddingClient {
 public:
  virtual ~EmbeddingClient() = default;
  virtual std::vector<std::vector<float>> EncodeImages(std::span<const Image> images) = 0;
  virtual std::vector<std::vector<float>> EncodeTexts(std::span<const std::string> texts) = 0;
  virtual std::string encoder_id() const = 0;
  // Whether Encode* may be called from several threads at once.
  virtual bool concurrent_safe() const = 0;
};

// Random-access image provider so large datasets need not sit in memory.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual int size() const = 0;
  virtual std::string id(int index) const = 0;
  virtual Image load(int index) const = 0;
};

class InMemoryImages : public ImageSource {
 public:
  InMemoryImages(std::vector<Image> images, std::vector<std::string> ids);
  int size() const override { return static_cast<int>(images_.size()); }
  std::string id(int index) const override { return ids_.at(static_cast<std::size_t>(index)); }
  Image load(int index) const override { return images_.at(static_cast<std::size_t>(index)); }

 private:
  std::vector<Image> images_;
  std::vector<std::string> ids_;
};

struct SimilarityMatrix {
  Tensor4 values;  // [N, M, grid_h, grid_w]
  GridSpec grid;
  std::string catalog_hash;
  std::string encoder_id;
  std::vector<std::string> image_manifest;

  int num_images() const { return values.n; }
  int num_concepts() const { return values.c; }
  std::string ValuesHash() const { return Sha256Hex(values.values); }
  // Copy of the [M, grid_h, grid_w] slice for one image.
  Volume ImageSlice(int n) const;
};

struct SimilarityOptions {
  int grid_h = 7;
  int grid_w = 7;
  int radius = 32;
  GridAnchor anchor = GridAnchor::kZero;
  double line_width = 2.0;
  int batch_size = 64;
  // Worker threads; only used when the client is concurrent_safe().
  int threads = 1;
};

// P[n, m, h, w] = cosine(E_I(image n circled at cell (h, w)), E_T(concept m)).
SimilarityMatrix ComputeSimilarities(const ImageSource& images,
                                     const ConceptCatalog& catalog,
                                     EmbeddingClient& client,
                                     const SimilarityOptions& options);

// Cosine between each un-prompted image and each concept, [N][M].
std::vector<std::vector<float>> GlobalSimilarities(const ImageSource& images,
                                                   std::span<const std::string> concepts,
                                                   EmbeddingClient& client,
                                                   int batch_size = 64);

struct StoreOptions {
  int images_per_chunk = 256;
  bool resume = false;
  // Stored verbatim under "run" in the manifest.
  Json annotations = Json::object();
};

// Computes P chunk by chunk straight into a matrix store. With resume set,
// chunks already present with the right size are kept.
void ComputeSimilaritiesToStore(const ImageSource& images,
                                const ConceptCatalog& catalog,
                                EmbeddingClient& client,
                                const SimilarityOptions& options,
                                const std::filesystem::path& dir,
                                const StoreOptions& store);

void SaveMatrix(const SimilarityMatrix& p, const std::filesystem::path& dir,
                int images_per_chunk = 256);
// Validates the manifest, chunk completeness, chunk sizes and the values
// digest; any violation raises kIntegrity.
SimilarityMatrix LoadMatrix(const std::filesystem::path& dir);
// Manifest only, without touching the chunks.
Json LoadMatrixManifest(const std::filesystem::path& dir);

}  // namespace scbm

#endif  // SCBM_SIMILARITY_ENGINE_H_
