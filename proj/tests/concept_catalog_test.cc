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

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

#include "test_support.h"

namespace scbm {
namespace {

using testing::KindOf;
using testing::TempDir;

class StubLlm : public LlmClient {
 public:
  explicit StubLlm(std::string reply, int fail_at = -1) : reply_(std::move(reply)), fail_at_(fail_at) {}
  std::string Complete(const std::string&) override {
    if (calls_++ == fail_at_) throw std::runtime_error("connection reset");
    return reply_;
  }
  bool concurrent_safe() const override { return false; }

 private:
  std::string reply_;
  int fail_at_;
  int calls_ = 0;
};

class FixedEmbedder : public TextEmbedder {
 public:
  explicit FixedEmbedder(std::map<std::string, std::vector<float>> table) : table_(std::move(table)) {}
  std::vector<std::vector<float>> Embed(std::span<const std::string> texts) override {
    std::vector<std::vector<float>> out;
    for (const auto& t : texts) out.push_back(table_.at(t));
    return out;
  }
  std::string id() const override { return "fixed"; }

 private:
  std::map<std::string, std::vector<float>> table_;
};

double Cos(const std::vector<float>& a, const std::vector<float>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return na == 0 || nb == 0 ? 0.0 : d / std::sqrt(na * nb);
}

TEST(BuildPrompts, SingleClass) {
  const std::vector<std::string> classes = {"dog"};
  const auto p = BuildPrompts(classes);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p[0], "List the most important features for recognizing something as a dog");
  EXPECT_EQ(p[1], "List the things most commonly seen around a dog");
  EXPECT_EQ(p[2], "Give superclasses for the word dog");
}

TEST(BuildPrompts, ClassOrderAndLength) {
  const std::vector<std::string> classes = {"dog", "cat"};
  const auto p = BuildPrompts(classes);
  ASSERT_EQ(p.size(), 6u);
  EXPECT_NE(p[2].find("dog"), std::string::npos);
  EXPECT_NE(p[3].find("cat"), std::string::npos);
}

TEST(BuildPrompts, EmptyIsInvalid) {
  EXPECT_EQ(KindOf([] { BuildPrompts({}); }), ErrorKind::kInvalidInput);
}

TEST(CollectRawConcepts, DeduplicatesAcrossPrompts) {
  StubLlm llm("a wagging tail\nfur");
  const std::vector<std::string> prompts = {"p0", "p1", "p2"};
  const auto raw = CollectRawConcepts(prompts, llm);
  EXPECT_EQ(raw, (std::vector<std::string>{"a wagging tail", "fur"}));
}

TEST(CollectRawConcepts, TransportErrorNamesPrompt) {
  StubLlm llm("fur", 2);
  const std::vector<std::string> prompts = {"p0", "p1", "p2", "p3"};
  try {
    CollectRawConcepts(prompts, llm);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTransport);
    EXPECT_NE(std::string(e.what()).find("prompt 2"), std::string::npos);
  }
}

TEST(CollectRawConcepts, EmptyAggregate) {
  StubLlm llm("\n  \n");
  const std::vector<std::string> prompts = {"p0"};
  EXPECT_EQ(KindOf([&] { CollectRawConcepts(prompts, llm); }), ErrorKind::kEmptyCatalog);
}

TEST(CollectRawConcepts, RecordedFixture) {
  TempDir dir;
  const std::vector<std::string> prompts = BuildPrompts(std::vector<std::string>{"heron"});
  Json fixture = {{prompts[0], "1. long legs\n2. Grey feathers.\n3) a pointed beak\n"},
                  {prompts[1], "- water\n* reeds\n\xe2\x80\xa2 long legs\n"},
                  {prompts[2], "bird\n\nanimal\n"}};
  WriteJson(dir / "llm.json", fixture);
  auto llm = RecordedLlmClient::FromFile(dir / "llm.json");
  const auto raw = CollectRawConcepts(prompts, llm);
  EXPECT_EQ(raw, (std::vector<std::string>{"long legs", "Grey feathers", "a pointed beak", "water",
                                           "reeds", "bird", "animal"}));
}

TEST(RecordedLlm, UnknownPromptIsTransportError) {
  RecordedLlmClient llm(std::map<std::string, std::string>{{"a", "b"}});
  const std::vector<std::string> prompts = {"zzz"};
  EXPECT_EQ(KindOf([&] { CollectRawConcepts(prompts, llm); }), ErrorKind::kTransport);
}

TEST(FilterConcepts, IdentityCollisionEmptiesCatalog) {
  HashingTextEmbedder e;
  const std::vector<std::string> raw = {"x"}, classes = {"x"};
  EXPECT_EQ(KindOf([&] { FilterConcepts(raw, classes, e, std::nullopt, {}); }),
            ErrorKind::kEmptyCatalog);
}

TEST(FilterConcepts, IdenticalStringsKeepFirst) {
  HashingTextEmbedder e;
  const std::vector<std::string> raw = {"striped fur", "Striped  Fur"}, classes = {"tiger"};
  const auto c = FilterConcepts(raw, classes, e, std::nullopt, {});
  EXPECT_EQ(c.concepts(), (std::vector<std::string>{"striped fur"}));
  ASSERT_EQ(c.filter_report().size(), 1u);
  EXPECT_EQ(c.filter_report()[0].reason, "duplicate");
}

TEST(FilterConcepts, TooLong) {
  HashingTextEmbedder e;
  FilterConfig cfg;
  cfg.max_length_chars = 5;
  const std::vector<std::string> raw = {"fur", "feathers"}, classes = {"owl"};
  const auto c = FilterConcepts(raw, classes, e, std::nullopt, cfg);
  EXPECT_EQ(c.concepts(), (std::vector<std::string>{"fur"}));
  EXPECT_EQ(c.filter_report()[0].reason, "too_long");
}

// Twenty concepts with fixed random embeddings; the kept set must match an
// exhaustive pairwise scan written from the filter's definition.
TEST(FilterConcepts, MatchesPairwiseOracle) {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    std::map<std::string, std::vector<float>> table;
    std::vector<std::string> raw, classes = {"class a", "class b"};
    auto vec = [&] {
      std::vector<float> v(4);
      for (auto& x : v) x = n(rng);
      return v;
    };
    for (const auto& c : classes) table[c] = vec();
    for (int i = 0; i < 20; ++i) {
      std::string s = "concept " + std::to_string(i);
      if (i % 7 == 3) s += " with a rather long tail text";
      raw.push_back(s);
      // Some concepts sit close to a class or to an earlier concept.
      std::vector<float> v = vec();
      if (i % 5 == 1) {
        v = table[classes[static_cast<std::size_t>(i) % 2]];
        v[0] += 0.05f;
      } else if (i % 4 == 2 && i > 2) {
        v = table[raw[static_cast<std::size_t>(i - 2)]];
        v[1] += 0.1f * n(rng);
      }
      table[s] = v;
    }
    FilterConfig cfg;
    cfg.concept_class_similarity_cutoff = 0.8;
    cfg.concept_concept_similarity_cutoff = 0.85;
    FixedEmbedder e(table);

    std::vector<std::string> expect;
    std::size_t removed = 0;
    for (const auto& s : raw) {
      bool drop = static_cast<int>(s.size()) > cfg.max_length_chars;
      for (const auto& c : classes) {
        drop = drop || Cos(table[s], table[c]) >= cfg.concept_class_similarity_cutoff;
      }
      for (const auto& k : expect) {
        drop = drop || Cos(table[s], table[k]) >= cfg.concept_concept_similarity_cutoff;
      }
      if (drop) ++removed;
      else expect.push_back(s);
    }
    const auto c = FilterConcepts(raw, classes, e, std::nullopt, cfg);
    EXPECT_EQ(c.concepts(), expect) << "seed " << seed;
    EXPECT_EQ(c.filter_report().size(), removed);
    EXPECT_EQ(c.filter_report().size() + c.concepts().size(), raw.size());

    // Idempotence.
    const auto again = FilterConcepts(c.concepts(), classes, e, std::nullopt, cfg);
    EXPECT_EQ(again.concepts(), c.concepts());
    EXPECT_TRUE(again.filter_report().empty());
  }
}

TEST(FilterConcepts, PresenceFloor) {
  HashingTextEmbedder e;
  FilterConfig cfg;
  cfg.min_training_presence = 0.3;
  const std::vector<std::string> raw = {"fur", "whiskers", "wheels"}, classes = {"cat"};
  std::map<std::string, double> presence = {{"fur", 0.9}, {"whiskers", 0.3}, {"wheels", 0.1}};
  const auto c = FilterConcepts(raw, classes, e, presence, cfg);
  EXPECT_EQ(c.concepts(), (std::vector<std::string>{"fur", "whiskers"}));
  EXPECT_EQ(c.filter_report().back().reason, "low_presence");
}

TEST(FilterConcepts, ConfigValidation) {
  HashingTextEmbedder e;
  FilterConfig cfg;
  cfg.concept_class_similarity_cutoff = 1.5;
  const std::vector<std::string> raw = {"fur"}, classes = {"cat"};
  EXPECT_EQ(KindOf([&] { FilterConcepts(raw, classes, e, std::nullopt, cfg); }),
            ErrorKind::kConfiguration);
}

TEST(TrainingPresence, FractionAboveTableMedian) {
  const std::vector<std::string> concepts = {"a", "b"};
  // Median of {0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6} is 0.5.
  const std::vector<std::vector<float>> sims = {{0.1f, 0.9f}, {0.2f, 0.8f}, {0.3f, 0.7f}, {0.6f, 0.4f}};
  const auto p = TrainingPresence(concepts, sims);
  EXPECT_DOUBLE_EQ(p.at("a"), 0.25);
  EXPECT_DOUBLE_EQ(p.at("b"), 0.75);
}

TEST(ClassTemplate, Goose) {
  const auto c = ClassTemplateCatalog(std::vector<std::string>{"goose"});
  EXPECT_EQ(c.concepts(), (std::vector<std::string>{"An image of a goose"}));
  EXPECT_EQ(c.source(), CatalogSource::kClassTemplate);
}

TEST(ClassTemplate, OrderAndLength) {
  std::vector<std::string> classes;
  for (int i = 0; i < 1000; ++i) classes.push_back("class" + std::to_string(i));
  EXPECT_EQ(ClassTemplateCatalog(classes).size(), 1000);
  const auto c = ClassTemplateCatalog(std::vector<std::string>{"b", "a"});
  EXPECT_EQ(c.concepts()[0], "An image of a b");
  EXPECT_EQ(c.concepts()[1], "An image of a a");
}

TEST(ConceptCatalog, InvariantsEnforced) {
  const std::vector<std::string> cls = {"cat"};
  EXPECT_EQ(KindOf([&] { ConceptCatalog({}, cls, CatalogSource::kUserProvided); }),
            ErrorKind::kEmptyCatalog);
  EXPECT_EQ(KindOf([&] { ConceptCatalog({"Fur", "fur "}, cls, CatalogSource::kUserProvided); }),
            ErrorKind::kInvalidInput);
  EXPECT_EQ(KindOf([&] { ConceptCatalog({"CAT"}, cls, CatalogSource::kUserProvided); }),
            ErrorKind::kInvalidInput);
  EXPECT_EQ(KindOf([&] { ConceptCatalog({"  "}, cls, CatalogSource::kUserProvided); }),
            ErrorKind::kInvalidInput);
}

TEST(ConceptCatalog, HashChangesIffOrderedListChanges) {
  const std::vector<std::string> a = {"fur", "tail"}, b = {"tail", "fur"}, c = {"fur", "tail"};
  EXPECT_NE(ConceptCatalog::HashConcepts(a), ConceptCatalog::HashConcepts(b));
  EXPECT_EQ(ConceptCatalog::HashConcepts(a), ConceptCatalog::HashConcepts(c));
  // Length prefixing keeps concatenation-equal lists apart.
  const std::vector<std::string> d = {"ab", "c"}, e = {"a", "bc"};
  EXPECT_NE(ConceptCatalog::HashConcepts(d), ConceptCatalog::HashConcepts(e));
}

TEST(ConceptCatalog, RoundTripAndTamper) {
  TempDir dir;
  HashingTextEmbedder e;
  const std::vector<std::string> raw = {"fur", "whiskers", "long tail", "Fur"}, classes = {"cat", "dog"};
  const auto c = FilterConcepts(raw, classes, e, std::nullopt, {});
  c.Save(dir / "catalog.json");
  const auto back = ConceptCatalog::Load(dir / "catalog.json");
  EXPECT_EQ(back.concepts(), c.concepts());
  EXPECT_EQ(back.class_names(), c.class_names());
  EXPECT_EQ(back.content_hash(), c.content_hash());
  EXPECT_EQ(back.filter_report().size(), c.filter_report().size());
  EXPECT_EQ(ReadFile(dir / "catalog.json"), [&] {
    back.Save(dir / "again.json");
    return ReadFile(dir / "again.json");
  }());

  Json j = ReadJson(dir / "catalog.json");
  j["concepts"][0] = "feathers";
  WriteJson(dir / "tampered.json", j);
  EXPECT_EQ(KindOf([&] { ConceptCatalog::Load(dir / "tampered.json"); }), ErrorKind::kProvenance);
}

TEST(ConceptCatalog, DeterministicAcrossRuns) {
  HashingTextEmbedder e;
  const std::vector<std::string> raw = {"fur", "whiskers", "a long and winding tail text here"};
  const std::vector<std::string> classes = {"cat"};
  const auto a = FilterConcepts(raw, classes, e, std::nullopt, {});
  const auto b = FilterConcepts(raw, classes, e, std::nullopt, {});
  EXPECT_EQ(a.ToJson().dump(), b.ToJson().dump());
}

TEST(NormalizeConcept, CaseAndWhitespace) {
  EXPECT_EQ(NormalizeConcept("  Long   Tail\t"), "long tail");
}

}  // namespace
}  // namespace scbm
