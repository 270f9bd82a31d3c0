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

#include "scbm/concept_catalog.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include <httplib.h>

#include "scbm/errors.h"

namespace scbm {
namespace {

constexpr int kCatalogVersion = 1;

std::string Trim(std::string_view s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

double Cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / std::sqrt(na * nb);
}

std::uint64_t Fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string FormatScore(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << std::fixed << v;
  return ss.str();
}

}  // namespace

std::string_view CatalogSourceName(CatalogSource source) {
  switch (source) {
    case CatalogSource::kLlmGenerated: return "llm_generated";
    case CatalogSource::kUserProvided: return "user_provided";
    case CatalogSource::kClassTemplate: return "class_template";
  }
  return "unknown";
}

CatalogSource ParseCatalogSource(std::string_view name) {
  if (name == "llm_generated") return CatalogSource::kLlmGenerated;
  if (name == "user_provided") return CatalogSource::kUserProvided;
  if (name == "class_template") return CatalogSource::kClassTemplate;
  Fail(ErrorKind::kConfiguration, "unknown catalog source '" + std::string(name) + "'");
}

void FilterConfig::Validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (max_length_chars < 1) {
    Fail(ErrorKind::kConfiguration, "max_length_chars must be >= 1");
  }
  if (!unit(concept_class_similarity_cutoff) ||
      !unit(concept_concept_similarity_cutoff) || !unit(min_training_presence)) {
    Fail(ErrorKind::kConfiguration, "filter cutoffs must lie in [0, 1]");
  }
}

std::string NormalizeConcept(std::string_view text) {
  std::string out;
  bool space = false;
  for (char ch : Trim(text)) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

ConceptCatalog::ConceptCatalog(std::vector<std::string> concepts,
                               std::vector<std::string> class_names,
                               CatalogSource source,
                               std::vector<FilterRemoval> filter_report)
    : concepts_(std::move(concepts)),
      class_names_(std::move(class_names)),
      report_(std::move(filter_report)),
      source_(source) {
  if (concepts_.empty()) Fail(ErrorKind::kEmptyCatalog, "catalog has no concepts");
  std::set<std::string> classes;
  for (const auto& c : class_names_) classes.insert(NormalizeConcept(c));
  std::set<std::string> seen;
  for (const auto& c : concepts_) {
    const std::string key = NormalizeConcept(c);
    if (key.empty()) Fail(ErrorKind::kInvalidInput, "empty concept string");
    if (!seen.insert(key).second) {
      Fail(ErrorKind::kInvalidInput, "duplicate concept '" + c + "'");
    }
    if (classes.count(key) != 0) {
      Fail(ErrorKind::kInvalidInput, "concept '" + c + "' equals a class name");
    }
  }
  hash_ = HashConcepts(concepts_);
}

std::string ConceptCatalog::HashConcepts(std::span<const std::string> concepts) {
  std::string buf = "scbm-catalog-v1";
  for (const auto& c : concepts) {
    buf += std::to_string(c.size());
    buf.push_back(':');
    buf += c;
  }
  return Sha256Hex(buf);
}

Json ConceptCatalog::ToJson() const {
  Json report = Json::array();
  for (const auto& r : report_) {
    report.push_back({{"concept", r.text}, {"reason", r.reason}, {"detail", r.detail}});
  }
  return {{"version", kCatalogVersion},
          {"classes", class_names_},
          {"concepts", concepts_},
          {"source", std::string(CatalogSourceName(source_))},
          {"filter_report", report},
          {"content_hash", hash_}};
}

ConceptCatalog ConceptCatalog::FromJson(const Json& json) {
  try {
    if (json.at("version").get<int>() != kCatalogVersion) {
      Fail(ErrorKind::kIntegrity, "unsupported catalog version");
    }
    std::vector<FilterRemoval> report;
    for (const auto& r : json.at("filter_report")) {
      report.push_back({r.at("concept").get<std::string>(),
                        r.at("reason").get<std::string>(),
                        r.value("detail", std::string())});
    }
    ConceptCatalog catalog(json.at("concepts").get<std::vector<std::string>>(),
                           json.at("classes").get<std::vector<std::string>>(),
                           ParseCatalogSource(json.at("source").get<std::string>()),
                           std::move(report));
    const auto stored = json.at("content_hash").get<std::string>();
    if (stored != catalog.content_hash()) {
      Fail(ErrorKind::kProvenance, "catalog content_hash " + stored +
                                       " does not match its concepts (" +
                                       catalog.content_hash() + ")");
    }
    return catalog;
  } catch (const Json::exception& e) {
    Fail(ErrorKind::kIntegrity, std::string("malformed catalog: ") + e.what());
  }
}

void ConceptCatalog::Save(const std::filesystem::path& path) const {
  WriteJson(path, ToJson());
}

ConceptCatalog ConceptCatalog::Load(const std::filesystem::path& path) {
  return FromJson(ReadJson(path));
}

std::vector<std::string> BuildPrompts(std::span<const std::string> class_names) {
  if (class_names.empty()) Fail(ErrorKind::kInvalidInput, "no class names");
  std::vector<std::string> prompts;
  prompts.reserve(3 * class_names.size());
  for (const auto& c : class_names) {
    prompts.push_back("List the most important features for recognizing something as a " + c);
    prompts.push_back("List the things most commonly seen around a " + c);
    prompts.push_back("Give superclasses for the word " + c);
  }
  return prompts;
}

RecordedLlmClient::RecordedLlmClient(std::map<std::string, std::string> responses)
    : responses_(std::move(responses)) {}

RecordedLlmClient RecordedLlmClient::FromFile(const std::filesystem::path& path) {
  const Json json = ReadJson(path);
  if (!json.is_object()) {
    Fail(ErrorKind::kConfiguration, "llm fixture must be a JSON object");
  }
  return RecordedLlmClient(json.get<std::map<std::string, std::string>>());
}

std::string RecordedLlmClient::Complete(const std::string& prompt) {
  auto it = responses_.find(prompt);
  if (it == responses_.end()) {
    Fail(ErrorKind::kTransport, "no recorded response for prompt '" + prompt + "'");
  }
  return it->second;
}

ChatCompletionsClient::ChatCompletionsClient(std::string base_url,
                                             std::string model,
                                             std::string api_key,
                                             double temperature)
    : base_url_(std::move(base_url)),
      model_(std::move(model)),
      api_key_(std::move(api_key)),
      temperature_(temperature) {}

std::string ChatCompletionsClient::Complete(const std::string& prompt) {
  httplib::Client cli(base_url_);
  cli.set_connection_timeout(10);
  cli.set_read_timeout(120);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  const Json body = {
      {"model", model_},
      {"temperature", temperature_},
      {"messages", Json::array({{{"role", "user"}, {"content", prompt}}})}};
  auto res = cli.Post("/v1/chat/completions", headers, body.dump(), "application/json");
  if (!res) {
    Fail(ErrorKind::kTransport, "request failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    Fail(ErrorKind::kTransport, "HTTP " + std::to_string(res->status));
  }
  try {
    return Json::parse(res->body)
        .at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const Json::exception& e) {
    Fail(ErrorKind::kTransport, std::string("unexpected response body: ") + e.what());
  }
}

std::vector<std::string> ParseConceptLines(std::string_view response) {
  std::vector<std::string> out;
  std::istringstream in{std::string(response)};
  std::string line;
  while (std::getline(in, line)) {
    std::string s = Trim(line);
    // Strip list markers: "-", "*", "•", "1.", "2)".
    if (s.rfind("\xe2\x80\xa2", 0) == 0) s = Trim(s.substr(3));
    while (!s.empty() && (s.front() == '-' || s.front() == '*')) s = Trim(s.substr(1));
    std::size_t digits = 0;
    while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits]))) ++digits;
    if (digits > 0 && digits < s.size() && (s[digits] == '.' || s[digits] == ')')) {
      s = Trim(s.substr(digits + 1));
    }
    while (!s.empty() && s.back() == '.') s.pop_back();
    s = Trim(s);
    if (!s.empty()) out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::string> CollectRawConcepts(std::span<const std::string> prompts,
                                            LlmClient& llm) {
  if (prompts.empty()) Fail(ErrorKind::kInvalidInput, "no prompts");
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    std::string response;
    try {
      response = llm.Complete(prompts[i]);
    } catch (const std::exception& e) {
      Fail(ErrorKind::kTransport, "prompt " + std::to_string(i) + ": " + e.what());
    }
    for (auto& c : ParseConceptLines(response)) {
      if (seen.insert(NormalizeConcept(c)).second) out.push_back(std::move(c));
    }
  }
  if (out.empty()) Fail(ErrorKind::kEmptyCatalog, "no concepts in any response");
  return out;
}

std::vector<std::vector<float>> HashingTextEmbedder::Embed(
    std::span<const std::string> texts) {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  const auto dim = static_cast<std::uint64_t>(dim_);
  for (const auto& t : texts) {
    std::vector<float> v(static_cast<std::size_t>(dim_), 0.0f);
    const std::string s = " " + NormalizeConcept(t) + " ";
    for (std::size_t i = 0; i + 3 <= s.size(); ++i) {
      v[Fnv1a(s.substr(i, 3)) % dim] += 1.0f;
    }
    std::istringstream words(s);
    std::string w;
    while (words >> w) {
      // Plural folding for the word feature.
      if (w.size() > 3 && w.back() == 's') w.pop_back();
      v[Fnv1a("w:" + w) % dim] += 2.0f;
    }
    double norm = 0;
    for (float x : v) norm += static_cast<double>(x) * x;
    if (norm > 0) {
      const auto inv = static_cast<float>(1.0 / std::sqrt(norm));
      for (float& x : v) x *= inv;
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::string HashingTextEmbedder::id() const {
  return "hashing-trigram-" + std::to_string(dim_);
}

ConceptCatalog FilterConcepts(
    std::span<const std::string> raw, std::span<const std::string> class_names,
    TextEmbedder& embedder,
    const std::optional<std::map<std::string, double>>& training_presence,
    const FilterConfig& cfg, CatalogSource source) {
  cfg.Validate();
  if (raw.empty()) Fail(ErrorKind::kInvalidInput, "no raw concepts");

  std::vector<FilterRemoval> report;
  std::vector<std::string> survivors;
  for (const auto& c : raw) {
    if (NormalizeConcept(c).empty()) {
      report.push_back({c, "too_long", "empty after normalization"});
    } else if (static_cast<int>(c.size()) > cfg.max_length_chars) {
      report.push_back({c, "too_long", std::to_string(c.size()) + " > " +
                                           std::to_string(cfg.max_length_chars) +
                                           " chars"});
    } else {
      survivors.push_back(c);
    }
  }

  std::vector<std::string> classes(class_names.begin(), class_names.end());
  const auto class_vecs = embedder.Embed(classes);
  const auto concept_vecs = embedder.Embed(survivors);

  std::vector<std::size_t> stage2;
  for (std::size_t i = 0; i < survivors.size(); ++i) {
    const std::string key = NormalizeConcept(survivors[i]);
    bool removed = false;
    for (std::size_t j = 0; j < classes.size() && !removed; ++j) {
      if (key == NormalizeConcept(classes[j])) {
        report.push_back({survivors[i], "class_match", classes[j]});
        removed = true;
      }
    }
    for (std::size_t j = 0; j < classes.size() && !removed; ++j) {
      const double cos = Cosine(concept_vecs[i], class_vecs[j]);
      if (cos >= cfg.concept_class_similarity_cutoff) {
        report.push_back({survivors[i], "class_similar",
                          classes[j] + " cos=" + FormatScore(cos)});
        removed = true;
      }
    }
    if (!removed) stage2.push_back(i);
  }

  std::vector<std::size_t> stage3;
  for (std::size_t i : stage2) {
    const std::string key = NormalizeConcept(survivors[i]);
    bool removed = false;
    for (std::size_t k : stage3) {
      const double cos = NormalizeConcept(survivors[k]) == key
                             ? 1.0
                             : Cosine(concept_vecs[i], concept_vecs[k]);
      if (cos >= cfg.concept_concept_similarity_cutoff) {
        report.push_back({survivors[i], "duplicate",
                          survivors[k] + " cos=" + FormatScore(cos)});
        removed = true;
        break;
      }
    }
    if (!removed) stage3.push_back(i);
  }

  std::vector<std::string> kept;
  for (std::size_t i : stage3) {
    if (training_presence) {
      auto it = training_presence->find(survivors[i]);
      const double presence = it == training_presence->end() ? 0.0 : it->second;
      if (presence < cfg.min_training_presence) {
        report.push_back({survivors[i], "low_presence",
                          "presence=" + FormatScore(presence)});
        continue;
      }
    }
    kept.push_back(survivors[i]);
  }

  if (kept.empty()) {
    std::string msg = "all " + std::to_string(raw.size()) + " concepts removed;";
    const std::size_t from = report.size() > 5 ? report.size() - 5 : 0;
    for (std::size_t i = from; i < report.size(); ++i) {
      msg += " [" + report[i].text + ": " + report[i].reason + "]";
    }
    Fail(ErrorKind::kEmptyCatalog, msg);
  }
  return ConceptCatalog(std::move(kept), std::move(classes), source, std::move(report));
}

ConceptCatalog ClassTemplateCatalog(std::span<const std::string> class_names) {
  if (class_names.empty()) Fail(ErrorKind::kInvalidInput, "no class names");
  std::vector<std::string> concepts;
  concepts.reserve(class_names.size());
  for (const auto& c : class_names) concepts.push_back("An image of a " + c);
  return ConceptCatalog(std::move(concepts),
                        std::vector<std::string>(class_names.begin(), class_names.end()),
                        CatalogSource::kClassTemplate);
}

std::map<std::string, double> TrainingPresence(
    std::span<const std::string> concepts,
    const std::vector<std::vector<float>>& global_similarity) {
  if (global_similarity.empty()) {
    Fail(ErrorKind::kInsufficientData, "no training images for presence check");
  }
  std::vector<float> all;
  for (const auto& row : global_similarity) {
    if (row.size() != concepts.size()) {
      Fail(ErrorKind::kGeometry, "similarity row length differs from concept count");
    }
    all.insert(all.end(), row.begin(), row.end());
  }
  std::sort(all.begin(), all.end());
  const std::size_t k = all.size();
  const double median = k % 2 == 1 ? all[k / 2]
                                   : 0.5 * (static_cast<double>(all[k / 2 - 1]) + all[k / 2]);
  std::map<std::string, double> out;
  for (std::size_t m = 0; m < concepts.size(); ++m) {
    std::size_t above = 0;
    for (const auto& row : global_similarity) {
      if (row[m] > median) ++above;
    }
    out[concepts[m]] = static_cast<double>(above) / global_similarity.size();
  }
  return out;
}

}  // namespace scbm
