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

#ifndef SCBM_PIPELINE_H_
#define SCBM_PIPELINE_H_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scbm/concept_bottleneck.h"
#include "scbm/concept_catalog.h"
#include "scbm/errors.h"
#include "scbm/evaluator.h"
#include "scbm/explainer.h"
#include "scbm/onnx_models.h"
#include "scbm/similarity_engine.h"
#include "scbm/sparse_head.h"

namespace scbm {

// Everything one run needs. Paths in the JSON file are relative to the file.
struct RunConfig {
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  std::filesystem::path classes;  // JSON array of class names
  std::filesystem::path train_manifest;
  std::optional<std::filesystem::path> val_manifest;

  struct Catalog {
    CatalogSource source = CatalogSource::kLlmGenerated;
    std::filesystem::path llm_responses;  // recorded {prompt: response}
    std::string llm_base_url;
    std::string llm_model;
    std::string llm_api_key_env = "OPENAI_API_KEY";
    std::filesystem::path user_concepts;  // one concept per line
    FilterConfig filter;
  } catalog;

  struct Encoder {
    std::string kind = "toy";  // toy | onnx
    double local_weight = 0.75;
    std::filesystem::path image_model;
    std::filesystem::path text_embeddings;
  } encoder;

  BackboneConfig backbone;
  struct BackboneImpl {
    std::string impl = "patch_stats";  // patch_stats | onnx
    int patch = 8;
    int channels = 32;
    std::filesystem::path model;
    OnnxPreprocess preprocess;
  } backbone_impl;

  SimilarityOptions similarity;
  int images_per_chunk = 256;
  CblTrainConfig cbl;

  struct Head {
    double alpha = 0.99;
    std::vector<double> lambdas = {1.0};
    Pooling pooling = Pooling::kMean;
    SolverConfig solver;
  } head;

  Json raw;

  static RunConfig FromJson(const Json& json, const std::filesystem::path& base_dir);
  static RunConfig Load(const std::filesystem::path& path);
  std::string Hash() const { return Sha256Hex(raw.dump()); }

  std::filesystem::path catalog_path() const { return out_dir / "catalog.json"; }
  std::filesystem::path similarity_dir() const { return out_dir / "similarities"; }
  std::filesystem::path cbl_dir() const { return out_dir / "cbl"; }
  std::filesystem::path head_dir() const { return out_dir / "head"; }
  std::filesystem::path eval_dir() const { return out_dir / "eval"; }
};

// Process exit status for an error kind: 2 configuration, 3 provenance or
// integrity, 4 everything else.
int ExitCodeFor(ErrorKind kind);

// Exclusive per-directory lock held for the lifetime of the object. A lock
// left behind by a dead process is taken over.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

std::vector<std::string> LoadClassNames(const std::filesystem::path& path);
std::unique_ptr<EmbeddingClient> MakeEncoder(const RunConfig& cfg);
std::shared_ptr<const Backbone> MakeBackbone(const RunConfig& cfg);

// Grid-resolution features for every image, in order.
FeatureBank BuildFeatureBank(const ImageSource& images, const Backbone& backbone,
                             const BackboneConfig& config, const GridSpec& grid);

Json RunConcepts(const RunConfig& cfg);
Json RunSimilarities(const RunConfig& cfg, bool resume);
Json RunTrainCbl(const RunConfig& cfg);
Json RunTrainHead(const RunConfig& cfg);

// Loads catalog, bottleneck and head, checking that each one was built from
// the others.
std::shared_ptr<const ModelBundle> LoadBundle(const RunConfig& cfg);

Json RunExplain(const RunConfig& cfg, const std::filesystem::path& image, int k,
                const std::filesystem::path& out_dir);
Json RunEvalClassify(const RunConfig& cfg, const std::optional<std::filesystem::path>& manifest);
Json RunEvalSegment(const RunConfig& cfg, const std::optional<std::filesystem::path>& manifest,
                    const ThresholdPolicy& policy, MiouAggregation aggregation,
                    bool external_heatmaps);
// Dense ridge-logistic probe on mean-pooled backbone features: the baseline
// the sparse head is compared against. Picks the lambda with the best
// validation accuracy.
Json RunDenseProbe(const RunConfig& cfg, std::span<const double> lambdas);

}  // namespace scbm

#endif  // SCBM_PIPELINE_H_
