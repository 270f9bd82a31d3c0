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

#ifndef SCBM_CONCEPT_CATALOG_H_
#define SCBM_CONCEPT_CATALOG_H_

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scbm/io.h"

namespace scbm {

enum class CatalogSource { kLlmGenerated, kUserProvided, kClassTemplate };

std::string_view CatalogSourceName(CatalogSource source);
CatalogSource ParseCatalogSource(std::string_view name);

// Why a raw concept was dropped. Exactly one record per removed concept.
struct FilterRemoval {
  std::string text;
  std::string reason;  // too_long | class_match | class_similar | duplicate |
                       // low_presence
  std::string detail;
};

struct FilterConfig {
  int max_length_chars = 30;
  double concept_class_similarity_cutoff = 0.85;
  double concept_concept_similarity_cutoff = 0.90;
  double min_training_presence = 0.0;

  void Validate() const;
};

// Lowercased, trimmed, internal whitespace collapsed. Used for every
// uniqueness and class-collision comparison.
std::string NormalizeConcept(std::string_view text);

class ConceptCatalog {
 public:
  // Validates the invariants: non-empty, unique (normalized), no concept equal
  // to a class name, no empty concept.
  ConceptCatalog(std::vector<std::string> concepts,
                 std::vector<std::string> class_names, CatalogSource source,
                 std::vector<FilterRemoval> filter_report = {});

  const std::vector<std::string>& concepts() const { return concepts_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  const std::vector<FilterRemoval>& filter_report() const { return report_; }
  CatalogSource source() const { return source_; }
  const std::string& content_hash() const { return hash_; }
  int size() const { return static_cast<int>(concepts_.size()); }

  Json ToJson() const;
  // Rejects payloads whose stored content_hash disagrees with the concepts
  // (kProvenance).
  static ConceptCatalog FromJson(const Json& json);
  void Save(const std::filesystem::path& path) const;
  static ConceptCatalog Load(const std::filesystem::path& path);

  // Length-prefixed SHA-256 over the ordered concept list.
  static std::string HashConcepts(std::span<const std::string> concepts);

 private:
  std::vector<std::string> concepts_;
  std::vector<std::string> class_names_;
  std::vector<FilterRemoval> report_;
  CatalogSource source_;
  std::string hash_;
};

// The three generation templates, instantiated per class in class order.
std::vector<std::string> BuildPrompts(std::span<const std::string> class_names);

// Text-generation backend. Implementations document whether Complete() may be
// called concurrently.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string Complete(const std::string& prompt) = 0;
  virtual bool concurrent_safe() const = 0;
};

// Replays responses from a JSON object {prompt: response}. Read-only after
// construction, so safe for concurrent use.
class RecordedLlmClient : public LlmClient {
 public:
  explicit RecordedLlmClient(std::map<std::string, std::string> responses);
  static RecordedLlmClient FromFile(const std::filesystem::path& path);

  std::string Complete(const std::string& prompt) override;
  bool concurrent_safe() const override { return true; }

 private:
  std::map<std::string, std::string> responses_;
};

// Chat-completions client for OpenAI-compatible endpoints. Each call opens
// its own connection, so concurrent calls are allowed.
class ChatCompletionsClient : public LlmClient {
 public:
  ChatCompletionsClient(std::string base_url, std::string model,
                        std::string api_key, double temperature = 0.0);

  std::string Complete(const std::string& prompt) override;
  bool concurrent_safe() const override { return true; }

 private:
  std::string base_url_;
  std::string model_;
  std::string api_key_;
  double temperature_;
};

// Splits a free-text list response into concept strings: one per line,
// list markers and trailing periods stripped, blank lines dropped.
std::vector<std::string> ParseConceptLines(std::string_view response);

// Queries every prompt in order and returns the de-duplicated union
// (first occurrence wins).
std::vector<std::string> CollectRawConcepts(std::span<const std::string> prompts,
                                            LlmClient& llm);

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::vector<std::vector<float>> Embed(
      std::span<const std::string> texts) = 0;
  virtual std::string id() const = 0;
};

// Offline embedder over hashed character trigrams and (plural-folded) words
// of the normalized text. Stateless; safe for concurrent use.
class HashingTextEmbedder : public TextEmbedder {
 public:
  explicit HashingTextEmbedder(int dim = 512) : dim_(dim) {}
  std::vector<std::vector<float>> Embed(std::span<const std::string> texts) override;
  std::string id() const override;

 private:
  int dim_;
};

// Applies, in order: length cap, class collision (exact or embedding cosine),
// greedy near-duplicate removal, and the optional training-presence floor.
ConceptCatalog FilterConcepts(
    std::span<const std::string> raw, std::span<const std::string> class_names,
    TextEmbedder& embedder,
    const std::optional<std::map<std::string, double>>& training_presence,
    const FilterConfig& cfg,
    CatalogSource source = CatalogSource::kLlmGenerated);

ConceptCatalog ClassTemplateCatalog(std::span<const std::string> class_names);

// Presence of each concept in the training set from a global [N][M]
// image-concept similarity table: the fraction of images whose similarity to
// concept m exceeds the median of the whole table.
std::map<std::string, double> TrainingPresence(
    std::span<const std::string> concepts,
    const std::vector<std::vector<float>>& global_similarity);

}  // namespace scbm

#endif  // SCBM_CONCEPT_CATALOG_H_
