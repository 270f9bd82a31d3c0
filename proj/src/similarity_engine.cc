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

#include "scbm/similarity_engine.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>

#include "scbm/errors.h"

namespace scbm {
namespace {

constexpr int kStoreVersion = 1;

std::string_view AnchorName(GridAnchor a) {
  return a == GridAnchor::kZero ? "zero" : "radius";
}

GridAnchor ParseAnchor(std::string_view s) {
  if (s == "zero") return GridAnchor::kZero;
  if (s == "radius") return GridAnchor::kRadius;
  Fail(ErrorKind::kConfiguration, "unknown grid anchor '" + std::string(s) + "'");
}

struct TextTable {
  std::vector<std::vector<float>> vecs;
  std::vector<double> norms;
  std::size_t dim = 0;
};

TextTable EncodeConcepts(EmbeddingClient& client, std::span<const std::string> concepts) {
  TextTable t;
  try {
    t.vecs = client.EncodeTexts(concepts);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    Fail(ErrorKind::kTransport, std::string("text encoding failed: ") + e.what());
  }
  if (t.vecs.size() != concepts.size()) {
    Fail(ErrorKind::kTransport, "text encoder returned wrong number of embeddings");
  }
  t.dim = t.vecs.empty() ? 0 : t.vecs.front().size();
  for (const auto& v : t.vecs) {
    if (v.size() != t.dim || t.dim == 0) {
      Fail(ErrorKind::kGeometry, "inconsistent text embedding dimensionality");
    }
    double s = 0;
    for (float x : v) s += static_cast<double>(x) * x;
    t.norms.push_back(std::sqrt(s));
  }
  return t;
}

float CosineToText(const std::vector<float>& img, const TextTable& text, std::size_t m) {
  const auto& t = text.vecs[m];
  double dot = 0, nn = 0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    dot += static_cast<double>(img[i]) * t[i];
    nn += static_cast<double>(img[i]) * img[i];
  }
  const double denom = std::sqrt(nn) * text.norms[m];
  if (denom == 0) return 0.0f;
  return static_cast<float>(std::clamp(dot / denom, -1.0, 1.0));
}

// Fills out[(n - n_begin), m, h, w] for images in [n_begin, n_end).
void ComputeRange(const ImageSource& images, int n_begin, int n_end,
                  const TextTable& text, EmbeddingClient& client,
                  const GridSpec& grid, const SimilarityOptions& options,
                  std::span<float> out) {
  const int cells = grid.cells();
  const int m_count = static_cast<int>(text.vecs.size());
  const long long items = static_cast<long long>(n_end - n_begin) * cells;
  const int batch = std::max(1, options.batch_size);
  const long long num_batches = (items + batch - 1) / batch;

  auto run_batch = [&](long long b, std::optional<std::pair<int, Image>>& cache) {
    const long long first = b * batch;
    const long long last = std::min(items, first + batch);
    std::vector<Image> augmented;
    augmented.reserve(static_cast<std::size_t>(last - first));
    for (long long k = first; k < last; ++k) {
      const int n = n_begin + static_cast<int>(k / cells);
      const int cell = static_cast<int>(k % cells);
      if (!cache || cache->first != n) {
        Image img = images.load(n);
        if (img.height != grid.image_h || img.width != grid.image_w) {
          Fail(ErrorKind::kGeometry,
               "image " + std::to_string(n) + " is " + std::to_string(img.height) +
                   "x" + std::to_string(img.width) + ", grid expects " +
                   std::to_string(grid.image_h) + "x" + std::to_string(grid.image_w));
        }
        cache.emplace(n, std::move(img));
      }
      const auto [cy, cx] = grid.centers[static_cast<std::size_t>(cell)];
      augmented.push_back(DrawCircle(cache->second, cy, cx, grid.radius,
                                     options.line_width));
    }
    std::vector<std::vector<float>> emb;
    try {
      emb = client.EncodeImages(augmented);
    } catch (const std::exception& e) {
      Fail(ErrorKind::kTransport,
           "image " + std::to_string(n_begin + first / cells) + ", cell " +
               std::to_string(first % cells) + ": " + e.what());
    }
    if (emb.size() != augmented.size()) {
      Fail(ErrorKind::kTransport, "image encoder returned wrong batch size");
    }
    for (long long k = first; k < last; ++k) {
      const auto& v = emb[static_cast<std::size_t>(k - first)];
      if (v.size() != text.dim) {
        Fail(ErrorKind::kGeometry, "image embedding dim " + std::to_string(v.size()) +
                                       " != text embedding dim " +
                                       std::to_string(text.dim));
      }
      const long long local_n = k / cells;
      const int cell = static_cast<int>(k % cells);
      for (int m = 0; m < m_count; ++m) {
        out[static_cast<std::size_t>((local_n * m_count + m) * cells + cell)] =
            CosineToText(v, text, static_cast<std::size_t>(m));
      }
    }
  };

  const int threads = client.concurrent_safe() ? std::max(1, options.threads) : 1;
  if (threads == 1 || num_batches < 2) {
    std::optional<std::pair<int, Image>> cache;
    for (long long b = 0; b < num_batches; ++b) run_batch(b, cache);
    return;
  }
  std::atomic<long long> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        std::optional<std::pair<int, Image>> cache;
        for (long long b = next++; b < num_batches; b = next++) {
          try {
            run_batch(b, cache);
          } catch (...) {
            std::lock_guard lock(error_mu);
            if (!error) error = std::current_exception();
            next = num_batches;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

GridSpec GridForSource(const ImageSource& images, const SimilarityOptions& options) {
  if (images.size() < 1) Fail(ErrorKind::kInvalidInput, "no images");
  const Image first = images.load(0);
  return MakeGrid(first.height, first.width, options.grid_h, options.grid_w,
                  options.radius, options.anchor);
}

std::vector<std::string> Manifest(const ImageSource& images) {
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(images.size()));
  for (int i = 0; i < images.size(); ++i) ids.push_back(images.id(i));
  return ids;
}

std::string ChunkName(int start, int end) {
  return "chunk_" + std::to_string(start) + "_" + std::to_string(end) + ".bin";
}

Json BuildManifest(int n, int m, const GridSpec& grid, const std::string& catalog_hash,
                   const std::string& encoder_id, const std::vector<std::string>& ids,
                   int images_per_chunk) {
  return {{"version", kStoreVersion},
          {"dims", {n, m, grid.grid_h, grid.grid_w}},
          {"dtype", "f32le"},
          {"layout", "row-major n,m,h,w"},
          {"grid", grid.ToJson()},
          {"catalog_hash", catalog_hash},
          {"encoder_id", encoder_id},
          {"image_manifest", ids},
          {"chunking", {{"images_per_chunk", images_per_chunk}}},
          {"complete", false}};
}

std::size_t ChunkBytes(int start, int end, int m, const GridSpec& grid) {
  return static_cast<std::size_t>(end - start) * m * grid.cells() * 4;
}

// Digest over all chunk payloads in image order; equals Sha256Hex(values).
std::string DigestChunks(const std::filesystem::path& dir, int n, int chunk) {
  std::string all;
  for (int s = 0; s < n; s += chunk) all += ReadFile(dir / ChunkName(s, std::min(n, s + chunk)));
  return Sha256Hex(all);
}

}  // namespace

Json GridSpec::ToJson() const {
  Json c = Json::array();
  for (const auto& [r, col] : centers) c.push_back({r, col});
  return {{"image_h", image_h}, {"image_w", image_w}, {"grid_h", grid_h},
          {"grid_w", grid_w},   {"radius", radius},   {"stride_h", stride_h},
          {"stride_w", stride_w}, {"anchor", std::string(AnchorName(anchor))},
          {"centers", c}};
}

GridSpec GridSpec::FromJson(const Json& json) {
  try {
    GridSpec g = MakeGrid(json.at("image_h").get<int>(), json.at("image_w").get<int>(),
                          json.at("grid_h").get<int>(), json.at("grid_w").get<int>(),
                          json.at("radius").get<int>(),
                          ParseAnchor(json.value("anchor", std::string("zero"))));
    if (json.contains("centers") && json.at("centers") != g.ToJson().at("centers")) {
      Fail(ErrorKind::kIntegrity, "stored grid centers disagree with the grid geometry");
    }
    return g;
  } catch (const Json::exception& e) {
    Fail(ErrorKind::kIntegrity, std::string("malformed grid spec: ") + e.what());
  }
}

GridSpec MakeGrid(int image_h, int image_w, int grid_h, int grid_w, int radius,
                  GridAnchor anchor) {
  if (grid_h < 2 || grid_w < 2) Fail(ErrorKind::kGeometry, "grid dims must be >= 2");
  if (radius < 1) Fail(ErrorKind::kGeometry, "radius must be >= 1");
  if (image_h < 2 * radius || image_w < 2 * radius) {
    Fail(ErrorKind::kGeometry, "image " + std::to_string(image_h) + "x" +
                                   std::to_string(image_w) + " too small for radius " +
                                   std::to_string(radius));
  }
  GridSpec g;
  g.image_h = image_h;
  g.image_w = image_w;
  g.grid_h = grid_h;
  g.grid_w = grid_w;
  g.radius = radius;
  g.anchor = anchor;
  g.stride_h = image_h / (grid_h - 1);
  g.stride_w = image_w / (grid_w - 1);
  const int offset = anchor == GridAnchor::kRadius ? radius : 0;
  for (int i = 0; i < grid_h; ++i) {
    for (int j = 0; j < grid_w; ++j) {
      g.centers.emplace_back(std::min(offset + i * g.stride_h, image_h - 1),
                             std::min(offset + j * g.stride_w, image_w - 1));
    }
  }
  return g;
}

bool OnRing(int dy, int dx, int radius, double line_width) {
  const double dist = std::sqrt(static_cast<double>(dy) * dy + static_cast<double>(dx) * dx);
  return std::abs(dist - radius) <= line_width / 2.0;
}

Image DrawCircle(const Image& image, int center_row, int center_col, int radius,
                 double line_width, Rgb color) {
  Image out = image;
  const int reach = radius + static_cast<int>(std::ceil(line_width / 2.0)) + 1;
  const int y0 = std::max(0, center_row - reach);
  const int y1 = std::min(image.height - 1, center_row + reach);
  const int x0 = std::max(0, center_col - reach);
  const int x1 = std::min(image.width - 1, center_col + reach);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (OnRing(y - center_row, x - center_col, radius, line_width)) {
        std::uint8_t* p = out.px(y, x);
        p[0] = color[0];
        p[1] = color[1];
        p[2] = color[2];
      }
    }
  }
  return out;
}

InMemoryImages::InMemoryImages(std::vector<Image> images, std::vector<std::string> ids)
    : images_(std::move(images)), ids_(std::move(ids)) {
  if (ids_.empty()) {
    for (std::size_t i = 0; i < images_.size(); ++i) ids_.push_back(std::to_string(i));
  }
  if (ids_.size() != images_.size()) {
    Fail(ErrorKind::kInvalidInput, "image id count differs from image count");
  }
}

Volume SimilarityMatrix::ImageSlice(int n) const {
  const std::size_t per = static_cast<std::size_t>(values.c) * values.h * values.w;
  const auto begin = values.values.begin() + static_cast<std::ptrdiff_t>(per * n);
  return Volume(values.c, values.h, values.w,
                std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(per)));
}

SimilarityMatrix ComputeSimilarities(const ImageSource& images,
                                     const ConceptCatalog& catalog,
                                     EmbeddingClient& client,
                                     const SimilarityOptions& options) {
  SimilarityMatrix p;
  p.grid = GridForSource(images, options);
  p.catalog_hash = catalog.content_hash();
  p.encoder_id = client.encoder_id();
  p.image_manifest = Manifest(images);
  const TextTable text = EncodeConcepts(client, catalog.concepts());
  p.values = Tensor4(images.size(), catalog.size(), p.grid.grid_h, p.grid.grid_w);
  ComputeRange(images, 0, images.size(), text, client, p.grid, options, p.values.values);
  return p;
}

std::vector<std::vector<float>> GlobalSimilarities(const ImageSource& images,
                                                   std::span<const std::string> concepts,
                                                   EmbeddingClient& client,
                                                   int batch_size) {
  const TextTable text = EncodeConcepts(client, concepts);
  std::vector<std::vector<float>> out;
  const int batch = std::max(1, batch_size);
  for (int start = 0; start < images.size(); start += batch) {
    std::vector<Image> imgs;
    for (int n = start; n < std::min(images.size(), start + batch); ++n) {
      imgs.push_back(images.load(n));
    }
    std::vector<std::vector<float>> emb;
    try {
      emb = client.EncodeImages(imgs);
    } catch (const std::exception& e) {
      Fail(ErrorKind::kTransport, "image " + std::to_string(start) + ": " + e.what());
    }
    for (const auto& v : emb) {
      if (v.size() != text.dim) Fail(ErrorKind::kGeometry, "embedding dim mismatch");
      std::vector<float> row;
      for (std::size_t m = 0; m < concepts.size(); ++m) row.push_back(CosineToText(v, text, m));
      out.push_back(std::move(row));
    }
  }
  return out;
}

void ComputeSimilaritiesToStore(const ImageSource& images,
                                const ConceptCatalog& catalog,
                                EmbeddingClient& client,
                                const SimilarityOptions& options,
                                const std::filesystem::path& dir,
                                const StoreOptions& store) {
  if (store.images_per_chunk < 1) {
    Fail(ErrorKind::kConfiguration, "images_per_chunk must be >= 1");
  }
  const GridSpec grid = GridForSource(images, options);
  const int n = images.size();
  const int m = catalog.size();
  Json manifest = BuildManifest(n, m, grid, catalog.content_hash(), client.encoder_id(),
                                Manifest(images), store.images_per_chunk);
  manifest["run"] = store.annotations;
  const auto manifest_path = dir / "manifest.json";
  if (store.resume && std::filesystem::exists(manifest_path)) {
    Json existing = ReadJson(manifest_path);
    existing.erase("complete");
    existing.erase("values_sha256");
    Json expected = manifest;
    expected.erase("complete");
    if (existing != expected) {
      Fail(ErrorKind::kIntegrity,
           "cannot resume: existing store at " + dir.string() + " was built with different inputs");
    }
  } else {
    std::filesystem::remove_all(dir);
  }
  std::filesystem::create_directories(dir);
  WriteJson(manifest_path, manifest);

  const TextTable text = EncodeConcepts(client, catalog.concepts());
  for (int start = 0; start < n; start += store.images_per_chunk) {
    const int end = std::min(n, start + store.images_per_chunk);
    const auto path = dir / ChunkName(start, end);
    if (store.resume && std::filesystem::exists(path) &&
        std::filesystem::file_size(path) == ChunkBytes(start, end, m, grid)) {
      continue;
    }
    std::vector<float> buf(static_cast<std::size_t>(end - start) * m * grid.cells());
    ComputeRange(images, start, end, text, client, grid, options, buf);
    WriteFileAtomic(path, PackF32(buf));
  }
  manifest["complete"] = true;
  manifest["values_sha256"] = DigestChunks(dir, n, store.images_per_chunk);
  WriteJson(manifest_path, manifest);
}

void SaveMatrix(const SimilarityMatrix& p, const std::filesystem::path& dir,
                int images_per_chunk) {
  if (images_per_chunk < 1) Fail(ErrorKind::kConfiguration, "images_per_chunk must be >= 1");
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const int n = p.values.n;
  const std::size_t per = static_cast<std::size_t>(p.values.c) * p.values.h * p.values.w;
  for (int start = 0; start < n; start += images_per_chunk) {
    const int end = std::min(n, start + images_per_chunk);
    const std::span<const float> slice(p.values.values.data() + per * start,
                                       per * static_cast<std::size_t>(end - start));
    WriteFileAtomic(dir / ChunkName(start, end), PackF32(slice));
  }
  Json manifest = BuildManifest(n, p.values.c, p.grid, p.catalog_hash, p.encoder_id,
                                p.image_manifest, images_per_chunk);
  manifest["complete"] = true;
  manifest["values_sha256"] = p.ValuesHash();
  WriteJson(dir / "manifest.json", manifest);
}

Json LoadMatrixManifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) {
    Fail(ErrorKind::kStageOrder, "no similarity matrix at " + dir.string());
  }
  return ReadJson(path);
}

SimilarityMatrix LoadMatrix(const std::filesystem::path& dir) {
  const Json manifest = LoadMatrixManifest(dir);
  SimilarityMatrix p;
  int n = 0, m = 0, chunk = 0;
  std::string digest;
  try {
    if (manifest.at("version").get<int>() != kStoreVersion ||
        manifest.at("dtype").get<std::string>() != "f32le") {
      Fail(ErrorKind::kIntegrity, "unsupported matrix store version or dtype");
    }
    if (!manifest.value("complete", false)) {
      Fail(ErrorKind::kIntegrity, "matrix store is incomplete; rerun with --resume");
    }
    const auto dims = manifest.at("dims").get<std::vector<int>>();
    if (dims.size() != 4) Fail(ErrorKind::kIntegrity, "dims must have 4 entries");
    n = dims[0];
    m = dims[1];
    p.grid = GridSpec::FromJson(manifest.at("grid"));
    if (dims[2] != p.grid.grid_h || dims[3] != p.grid.grid_w) {
      Fail(ErrorKind::kIntegrity, "dims disagree with grid spec");
    }
    p.catalog_hash = manifest.at("catalog_hash").get<std::string>();
    p.encoder_id = manifest.at("encoder_id").get<std::string>();
    p.image_manifest = manifest.at("image_manifest").get<std::vector<std::string>>();
    chunk = manifest.at("chunking").at("images_per_chunk").get<int>();
    digest = manifest.at("values_sha256").get<std::string>();
  } catch (const Json::exception& e) {
    Fail(ErrorKind::kIntegrity, std::string("malformed manifest: ") + e.what());
  }
  if (static_cast<int>(p.image_manifest.size()) != n) {
    Fail(ErrorKind::kIntegrity, "image manifest has " + std::to_string(p.image_manifest.size()) +
                                    " entries, dims say " + std::to_string(n));
  }
  if (chunk < 1) Fail(ErrorKind::kIntegrity, "bad images_per_chunk");

  std::string missing;
  for (int s = 0; s < n; s += chunk) {
    const int e = std::min(n, s + chunk);
    if (!std::filesystem::exists(dir / ChunkName(s, e))) {
      missing += " [" + std::to_string(s) + ", " + std::to_string(e) + ")";
    }
  }
  if (!missing.empty()) Fail(ErrorKind::kIntegrity, "missing image ranges:" + missing);

  p.values = Tensor4(n, m, p.grid.grid_h, p.grid.grid_w);
  const std::size_t per = static_cast<std::size_t>(m) * p.grid.cells();
  for (int s = 0; s < n; s += chunk) {
    const int e = std::min(n, s + chunk);
    const std::string bytes = ReadFile(dir / ChunkName(s, e));
    if (bytes.size() != ChunkBytes(s, e, m, p.grid)) {
      Fail(ErrorKind::kIntegrity, ChunkName(s, e) + " has " + std::to_string(bytes.size()) +
                                      " bytes, expected " +
                                      std::to_string(ChunkBytes(s, e, m, p.grid)));
    }
    const auto vals = UnpackF32(bytes);
    std::copy(vals.begin(), vals.end(), p.values.values.begin() +
                                            static_cast<std::ptrdiff_t>(per * s));
  }
  if (p.ValuesHash() != digest) {
    Fail(ErrorKind::kIntegrity, "matrix values do not match values_sha256");
  }
  return p;
}

}  // namespace scbm
