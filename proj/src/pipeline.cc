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

#include "scbm/pipeline.h"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>

#include "scbm/errors.h"
#include "scbm/toy.h"

namespace scbm {
namespace {

std::filesystem::path Resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path fp(p);
  return fp.is_absolute() ? fp : base / fp;
}

std::array<float, 3> Triple(const Json& j, std::array<float, 3> fallback) {
  if (j.is_null()) return fallback;
  const auto v = j.get<std::vector<float>>();
  if (v.size() != 3) Fail(ErrorKind::kConfiguration, "expected three channel values");
  return {v[0], v[1], v[2]};
}

// Text embeddings from the configured encoder, for concept filtering in the
// encoder's own space.
class EncoderTextEmbedder : public TextEmbedder {
 public:
  explicit EncoderTextEmbedder(EmbeddingClient& client) : client_(client) {}
  std::vector<std::vector<float>> Embed(std::span<const std::string> texts) override {
    return client_.EncodeTexts(texts);
  }
  std::string id() const override { return client_.encoder_id(); }

 private:
  EmbeddingClient& client_;
};

std::vector<std::string> ReadLines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kConfiguration, "cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) out.push_back(line);
  }
  return out;
}

void RequireFile(const std::filesystem::path& path, const std::string& stage) {
  if (!std::filesystem::exists(path)) {
    Fail(ErrorKind::kStageOrder, path.string() + " is missing; run '" + stage + "' first");
  }
}

ConceptCatalog LoadCatalog(const RunConfig& cfg) {
  RequireFile(cfg.catalog_path(), "concepts");
  return ConceptCatalog::Load(cfg.catalog_path());
}

void CheckHash(const std::string& what, const std::string& recorded, const std::string& actual) {
  if (recorded != actual) {
    Fail(ErrorKind::kProvenance, what + ": recorded " + recorded + ", found " + actual);
  }
}

std::vector<int> Labels(const std::vector<DatasetEntry>& entries) {
  std::vector<int> out;
  for (const auto& e : entries) out.push_back(e.label);
  return out;
}

std::vector<std::string> Ids(const ImageSource& images) {
  std::vector<std::string> out;
  for (int i = 0; i < images.size(); ++i) out.push_back(images.id(i));
  return out;
}

Eigen::MatrixXd PooledRows(const FeatureBank& bank, const BottleneckWeights& w, Pooling pooling) {
  Eigen::MatrixXd out(bank.size(), w.concepts());
  for (int n = 0; n < bank.size(); ++n) {
    out.row(n) = Pool(Project(bank.volume(n), w), pooling).transpose();
  }
  return out;
}

Json ReadSidecar(const std::filesystem::path& path) {
  RequireFile(path, "the upstream stage");
  return ReadJson(path);
}

}  // namespace

RunConfig RunConfig::FromJson(const Json& json, const std::filesystem::path& base_dir) {
  RunConfig c;
  c.raw = json;
  try {
    c.out_dir = Resolve(base_dir, json.value("out_dir", std::string("run")));
    c.seed = json.value("seed", std::uint64_t{0});
    const Json& data = json.at("dataset");
    c.classes = Resolve(base_dir, data.at("classes").get<std::string>());
    c.train_manifest = Resolve(base_dir, data.at("train").get<std::string>());
    if (data.contains("val")) c.val_manifest = Resolve(base_dir, data.at("val").get<std::string>());

    const Json cat = json.value("catalog", Json::object());
    c.catalog.source = ParseCatalogSource(cat.value("source", std::string("llm_generated")));
    c.catalog.llm_responses = Resolve(base_dir, cat.value("llm_responses", std::string()));
    c.catalog.llm_base_url = cat.value("llm_base_url", std::string());
    c.catalog.llm_model = cat.value("llm_model", std::string());
    c.catalog.llm_api_key_env = cat.value("llm_api_key_env", c.catalog.llm_api_key_env);
    c.catalog.user_concepts = Resolve(base_dir, cat.value("user_concepts", std::string()));
    const Json f = cat.value("filter", Json::object());
    auto& fc = c.catalog.filter;
    fc.max_length_chars = f.value("max_length_chars", fc.max_length_chars);
    fc.concept_class_similarity_cutoff =
        f.value("concept_class_similarity_cutoff", fc.concept_class_similarity_cutoff);
    fc.concept_concept_similarity_cutoff =
        f.value("concept_concept_similarity_cutoff", fc.concept_concept_similarity_cutoff);
    fc.min_training_presence = f.value("min_training_presence", fc.min_training_presence);
    fc.Validate();

    const Json enc = json.value("encoder", Json::object());
    c.encoder.kind = enc.value("kind", c.encoder.kind);
    c.encoder.local_weight = enc.value("local_weight", c.encoder.local_weight);
    c.encoder.image_model = Resolve(base_dir, enc.value("image_model", std::string()));
    c.encoder.text_embeddings = Resolve(base_dir, enc.value("text_embeddings", std::string()));
    if (c.encoder.kind != "toy" && c.encoder.kind != "onnx") {
      Fail(ErrorKind::kConfiguration, "encoder.kind must be toy or onnx");
    }

    const Json bb = json.value("backbone", Json::object());
    c.backbone = BackboneConfig::FromJson(bb);
    c.backbone_impl.impl = bb.value("impl", c.backbone_impl.impl);
    c.backbone_impl.patch = bb.value("patch", c.backbone_impl.patch);
    c.backbone_impl.channels = bb.value("channels", c.backbone_impl.channels);
    c.backbone_impl.model = Resolve(base_dir, bb.value("model", std::string()));
    c.backbone_impl.preprocess.input_size = c.backbone.input_size;
    c.backbone_impl.preprocess.mean = Triple(bb.value("mean", Json()), c.backbone_impl.preprocess.mean);
    c.backbone_impl.preprocess.std = Triple(bb.value("std", Json()), c.backbone_impl.preprocess.std);
    if (c.backbone_impl.impl == "patch_stats" && c.backbone.feature_layer.empty()) {
      c.backbone.feature_layer = "patch_features";
    }
    if (c.backbone_impl.impl != "patch_stats" && c.backbone_impl.impl != "onnx") {
      Fail(ErrorKind::kConfiguration, "backbone.impl must be patch_stats or onnx");
    }

    const Json g = json.value("grid", Json::object());
    c.similarity.grid_h = g.value("h", c.similarity.grid_h);
    c.similarity.grid_w = g.value("w", c.similarity.grid_w);
    c.similarity.radius = g.value("radius", c.similarity.radius);
    const std::string anchor = g.value("anchor", std::string("zero"));
    if (anchor == "zero") c.similarity.anchor = GridAnchor::kZero;
    else if (anchor == "radius") c.similarity.anchor = GridAnchor::kRadius;
    else Fail(ErrorKind::kConfiguration, "grid.anchor must be zero or radius");
    c.similarity.line_width = g.value("line_width", c.similarity.line_width);
    const Json sim = json.value("similarity", Json::object());
    c.similarity.batch_size = sim.value("batch_size", c.similarity.batch_size);
    c.similarity.threads = sim.value("threads", c.similarity.threads);
    c.images_per_chunk = sim.value("images_per_chunk", c.images_per_chunk);
    if (c.similarity.batch_size < 1 || c.similarity.threads < 1 || c.images_per_chunk < 1) {
      Fail(ErrorKind::kConfiguration, "similarity batch_size, threads and images_per_chunk must be >= 1");
    }

    Json cbl = json.value("cbl", Json::object());
    cbl["seed"] = c.seed;
    c.cbl = CblTrainConfig::FromJson(cbl);

    const Json h = json.value("head", Json::object());
    c.head.alpha = h.value("alpha", c.head.alpha);
    if (h.contains("lambdas")) {
      c.head.lambdas = h.at("lambdas").get<std::vector<double>>();
    } else if (h.contains("lambda")) {
      c.head.lambdas = {h.at("lambda").get<double>()};
    }
    std::sort(c.head.lambdas.begin(), c.head.lambdas.end());
    if (c.head.lambdas.empty() || c.head.lambdas.front() < 0) {
      Fail(ErrorKind::kConfiguration, "head lambdas must be non-negative");
    }
    if (!(c.head.alpha >= 0 && c.head.alpha <= 1)) {
      Fail(ErrorKind::kConfiguration, "head alpha must lie in [0, 1]");
    }
    c.head.pooling = ParsePooling(h.value("pooling", std::string("mean")));
    Json solver = h.value("solver", Json::object());
    solver["seed"] = c.seed;
    c.head.solver = SolverConfig::FromJson(solver);
  } catch (const Json::exception& e) {
    Fail(ErrorKind::kConfiguration, std::string("bad config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::Load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    Fail(ErrorKind::kConfiguration, "config file not found: " + path.string());
  }
  Json j;
  try {
    j = Json::parse(ReadFile(path));
  } catch (const Json::exception& e) {
    Fail(ErrorKind::kConfiguration, path.string() + ": " + e.what());
  }
  return FromJson(j, std::filesystem::absolute(path).parent_path());
}

int ExitCodeFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfiguration:
    case ErrorKind::kInvalidInput:
      return 2;
    case ErrorKind::kProvenance:
    case ErrorKind::kIntegrity:
      return 3;
    default:
      return 4;
  }
}

RunLock::RunLock(const std::filesystem::path& dir) : path_(dir / ".scbm.lock") {
  std::filesystem::create_directories(dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid());
      const auto written = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      if (written == static_cast<ssize_t>(pid.size())) return;
      std::filesystem::remove(path_);
      Fail(ErrorKind::kIo, "cannot write lock file " + path_.string());
    }
    if (errno != EEXIST) Fail(ErrorKind::kIo, "cannot create lock file " + path_.string());
    std::string holder;
    try {
      holder = ReadFile(path_);
    } catch (const Error&) {
    }
    const long pid = std::strtol(holder.c_str(), nullptr, 10);
    if (pid > 0 && (::kill(static_cast<pid_t>(pid), 0) == 0 || errno != ESRCH)) {
      Fail(ErrorKind::kIo, dir.string() + " is locked by process " + std::to_string(pid));
    }
    std::filesystem::remove(path_);
  }
  Fail(ErrorKind::kIo, "cannot acquire " + path_.string());
}

RunLock::~RunLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

std::vector<std::string> LoadClassNames(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    Fail(ErrorKind::kConfiguration, "class list not found: " + path.string());
  }
  const Json j = ReadJson(path);
  if (!j.is_array() || j.empty()) Fail(ErrorKind::kConfiguration, "class list must be a non-empty array");
  return j.get<std::vector<std::string>>();
}

std::unique_ptr<EmbeddingClient> MakeEncoder(const RunConfig& cfg) {
  if (cfg.encoder.kind == "toy") return std::make_unique<ToyColorEncoder>(cfg.encoder.local_weight);
  return std::make_unique<OnnxClipEncoder>(cfg.encoder.image_model, cfg.encoder.text_embeddings);
}

std::shared_ptr<const Backbone> MakeBackbone(const RunConfig& cfg) {
  if (cfg.backbone_impl.impl == "patch_stats") {
    return std::make_shared<PatchStatsBackbone>(cfg.backbone.input_size, cfg.backbone_impl.patch,
                                                cfg.backbone_impl.channels, cfg.seed);
  }
  return std::make_shared<OnnxBackbone>(cfg.backbone_impl.model, cfg.backbone.feature_layer,
                                        cfg.backbone_impl.preprocess);
}

FeatureBank BuildFeatureBank(const ImageSource& images, const Backbone& backbone,
                             const BackboneConfig& config, const GridSpec& grid) {
  std::optional<FeatureBank> bank;
  for (int n = 0; n < images.size(); ++n) {
    const Image input = ResizeImage(images.load(n), config.input_size, config.input_size);
    const FeatureMap fm = ResizeToGrid(ExtractFeatures(input, backbone, config), grid);
    if (!bank) bank.emplace(fm.channels(), grid.grid_h, grid.grid_w, backbone.id());
    bank->Add(images.id(n), fm.values);
  }
  if (!bank) Fail(ErrorKind::kInvalidInput, "no images");
  return std::move(*bank);
}

Json RunConcepts(const RunConfig& cfg) {
  const auto classes = LoadClassNames(cfg.classes);
  std::optional<ConceptCatalog> catalog;
  if (cfg.catalog.source == CatalogSource::kClassTemplate) {
    catalog.emplace(ClassTemplateCatalog(classes));
  } else {
    std::vector<std::string> raw;
    if (cfg.catalog.source == CatalogSource::kUserProvided) {
      raw = ReadLines(cfg.catalog.user_concepts);
    } else {
      const auto prompts = BuildPrompts(classes);
      std::unique_ptr<LlmClient> llm;
      if (!cfg.catalog.llm_responses.empty()) {
        llm = std::make_unique<RecordedLlmClient>(RecordedLlmClient::FromFile(cfg.catalog.llm_responses));
      } else if (!cfg.catalog.llm_base_url.empty()) {
        const char* key = std::getenv(cfg.catalog.llm_api_key_env.c_str());
        llm = std::make_unique<ChatCompletionsClient>(cfg.catalog.llm_base_url, cfg.catalog.llm_model,
                                                      key ? key : "");
      } else {
        Fail(ErrorKind::kConfiguration, "catalog needs llm_responses or llm_base_url");
      }
      raw = CollectRawConcepts(prompts, *llm);
    }
    std::optional<std::map<std::string, double>> presence;
    if (cfg.catalog.filter.min_training_presence > 0) {
      auto encoder = MakeEncoder(cfg);
      FileImages train(LoadDatasetManifest(cfg.train_manifest, classes));
      presence = TrainingPresence(raw, GlobalSimilarities(train, raw, *encoder,
                                                          cfg.similarity.batch_size));
    }
    HashingTextEmbedder embedder;
    catalog.emplace(FilterConcepts(raw, classes, embedder, presence, cfg.catalog.filter,
                                   cfg.catalog.source));
  }
  Json j = catalog->ToJson();
  j["run"] = {{"seed", cfg.seed}, {"config_sha256", cfg.Hash()}};
  std::filesystem::create_directories(cfg.out_dir);
  WriteJson(cfg.catalog_path(), j);
  return {{"stage", "concepts"}, {"concepts", catalog->size()},
          {"removed", catalog->filter_report().size()}, {"content_hash", catalog->content_hash()}};
}

Json RunSimilarities(const RunConfig& cfg, bool resume) {
  const ConceptCatalog catalog = LoadCatalog(cfg);
  FileImages train(LoadDatasetManifest(cfg.train_manifest, catalog.class_names()));
  auto encoder = MakeEncoder(cfg);
  StoreOptions store;
  store.images_per_chunk = cfg.images_per_chunk;
  store.resume = resume;
  store.annotations = {{"seed", cfg.seed}};
  ComputeSimilaritiesToStore(train, catalog, *encoder, cfg.similarity, cfg.similarity_dir(), store);
  const Json manifest = LoadMatrixManifest(cfg.similarity_dir());
  return {{"stage", "similarities"}, {"images", train.size()}, {"concepts", catalog.size()},
          {"values_sha256", manifest.at("values_sha256")}};
}

Json RunTrainCbl(const RunConfig& cfg) {
  const ConceptCatalog catalog = LoadCatalog(cfg);
  const Json manifest = LoadMatrixManifest(cfg.similarity_dir());
  CheckHash("similarity store catalog hash vs catalog.json",
            manifest.at("catalog_hash").get<std::string>(), catalog.content_hash());
  const SimilarityMatrix p = LoadMatrix(cfg.similarity_dir());
  FileImages train(LoadDatasetManifest(cfg.train_manifest, catalog.class_names()));
  if (Ids(train) != p.image_manifest) {
    Fail(ErrorKind::kProvenance, "similarity store was computed over a different image list");
  }
  auto backbone = MakeBackbone(cfg);
  const FeatureBank bank = BuildFeatureBank(train, *backbone, cfg.backbone, p.grid);
  const CblTrainResult result = TrainBottleneck(bank, p, cfg.cbl);
  Json extra = {{"seed", cfg.seed},
                {"config_sha256", cfg.Hash()},
                {"similarity_values_sha256", p.ValuesHash()},
                {"similarity_manifest_sha256", Sha256Hex(ReadFile(cfg.similarity_dir() / "manifest.json"))},
                {"encoder_id", p.encoder_id},
                {"grid_spec", p.grid.ToJson()},
                {"backbone_config", cfg.backbone.ToJson()},
                {"train", cfg.cbl.ToJson()}};
  std::filesystem::create_directories(cfg.cbl_dir());
  SaveBottleneck(result.weights, cfg.cbl_dir(), extra);
  Json report = result.report.ToJson();
  report["seed"] = cfg.seed;
  WriteJson(cfg.cbl_dir() / "report.json", report);
  return {{"stage", "train-cbl"}, {"final_heldout_loss", result.report.final_heldout_loss},
          {"checksum", result.weights.Checksum()}};
}

Json RunTrainHead(const RunConfig& cfg) {
  const ConceptCatalog catalog = LoadCatalog(cfg);
  const Json cbl_sidecar = ReadSidecar(cfg.cbl_dir() / "bottleneck.json");
  const BottleneckWeights w = LoadBottleneck(cfg.cbl_dir());
  CheckHash("bottleneck catalog hash vs catalog.json", w.catalog_hash, catalog.content_hash());
  RequireFile(cfg.similarity_dir() / "manifest.json", "similarities");
  CheckHash("bottleneck similarity manifest hash vs similarity store",
            cbl_sidecar.at("similarity_manifest_sha256").get<std::string>(),
            Sha256Hex(ReadFile(cfg.similarity_dir() / "manifest.json")));
  auto backbone = MakeBackbone(cfg);
  CheckHash("bottleneck backbone id vs configured backbone", w.backbone_id, backbone->id());
  const GridSpec grid = GridSpec::FromJson(cbl_sidecar.at("grid_spec"));

  const auto train_entries = LoadDatasetManifest(cfg.train_manifest, catalog.class_names());
  FileImages train(train_entries);
  const Eigen::MatrixXd pooled =
      PooledRows(BuildFeatureBank(train, *backbone, cfg.backbone, grid), w, cfg.head.pooling);
  const ActivationStats stats = FitStats(pooled);
  const Eigen::MatrixXd x = stats.NormalizeRows(pooled);
  const auto y = Labels(train_entries);
  const int classes = static_cast<int>(catalog.class_names().size());

  std::optional<Eigen::MatrixXd> xv;
  std::vector<int> yv;
  if (cfg.val_manifest) {
    const auto val_entries = LoadDatasetManifest(*cfg.val_manifest, catalog.class_names());
    if (!val_entries.empty()) {
      FileImages val(val_entries);
      xv = stats.NormalizeRows(
          PooledRows(BuildFeatureBank(val, *backbone, cfg.backbone, grid), w, cfg.head.pooling));
      yv = Labels(val_entries);
    }
  }
  const RegularizationPath path = FitRegularizationPath(
      x, y, classes, cfg.head.alpha, cfg.head.lambdas, cfg.head.solver, xv ? &*xv : nullptr, yv);
  // Best validation (else training) accuracy; ties go to the larger lambda.
  std::size_t best = 0;
  for (std::size_t i = 1; i < path.table.size(); ++i) {
    const auto score = [&](std::size_t j) {
      return path.table[j].val_accuracy.value_or(path.table[j].train_accuracy);
    };
    if (score(i) >= score(best)) best = i;
  }
  SparseHead head = path.fits[best].head;
  head.stats = stats;
  head.pooling = cfg.head.pooling;
  head.catalog_hash = catalog.content_hash();

  Json table = Json::array();
  for (const auto& e : path.table) {
    table.push_back({{"lambda", e.lambda}, {"nnz", e.nnz}, {"train_accuracy", e.train_accuracy},
                     {"val_accuracy", e.val_accuracy ? Json(*e.val_accuracy) : Json()},
                     {"kkt_residual", e.kkt_residual}});
  }
  Json extra = {{"seed", cfg.seed},
                {"config_sha256", cfg.Hash()},
                {"bottleneck_checksum", w.Checksum()},
                {"selected_lambda", path.table[best].lambda},
                {"solver", path.fits[best].report.ToJson()},
                {"lambda_path", table}};
  std::filesystem::create_directories(cfg.head_dir());
  SaveHead(head, cfg.head_dir(), extra);
  return {{"stage", "train-head"}, {"lambda", path.table[best].lambda}, {"nnz", head.nnz()},
          {"train_accuracy", path.table[best].train_accuracy},
          {"val_accuracy", path.table[best].val_accuracy ? Json(*path.table[best].val_accuracy) : Json()},
          {"kkt_residual", path.table[best].kkt_residual}};
}

std::shared_ptr<const ModelBundle> LoadBundle(const RunConfig& cfg) {
  ConceptCatalog catalog = LoadCatalog(cfg);
  const Json cbl_sidecar = ReadSidecar(cfg.cbl_dir() / "bottleneck.json");
  BottleneckWeights w = LoadBottleneck(cfg.cbl_dir());
  CheckHash("bottleneck catalog hash vs catalog.json", w.catalog_hash, catalog.content_hash());
  const Json head_sidecar = ReadSidecar(cfg.head_dir() / "head.json");
  SparseHead head = LoadHead(cfg.head_dir());
  CheckHash("head bottleneck checksum vs bottleneck", head_sidecar.at("bottleneck_checksum").get<std::string>(),
            w.Checksum());
  GridSpec grid = GridSpec::FromJson(cbl_sidecar.at("grid_spec"));
  return std::make_shared<const ModelBundle>(std::move(catalog), std::move(grid), cfg.backbone,
                                             MakeBackbone(cfg), std::move(w), std::move(head));
}

Json RunExplain(const RunConfig& cfg, const std::filesystem::path& image, int k,
                const std::filesystem::path& out_dir) {
  const auto bundle = LoadBundle(cfg);
  const Image img = LoadImage(image);
  const ForwardPass pass = bundle->Forward(img);
  const Explanation e = ExplainPass(pass, *bundle, k, image.filename().string());
  std::filesystem::create_directories(out_dir);
  for (const auto& s : e.top_k) {
    const HeatmapPng png = EncodeHeatmapPng(ConceptHeatmap(pass.maps, s.m, img.height, img.width));
    WriteFileAtomic(out_dir / (s.heatmap_ref + ".png"), png.png);
    WriteJson(out_dir / (s.heatmap_ref + ".json"), png.sidecar);
  }
  Json j = e.ToJson();
  j["class_name"] = bundle->catalog().class_names()[static_cast<std::size_t>(e.y_hat)];
  j["bundle_hash"] = bundle->hash();
  WriteJson(out_dir / "explanation.json", j);
  return j;
}

Json RunEvalClassify(const RunConfig& cfg, const std::optional<std::filesystem::path>& manifest) {
  const auto bundle = LoadBundle(cfg);
  const auto path = manifest ? *manifest : cfg.val_manifest.value_or(cfg.train_manifest);
  const auto entries = LoadDatasetManifest(path, bundle->catalog().class_names());
  const ClassificationReport r = ClassificationAccuracy(*bundle, entries);
  Json j = r.ToJson();
  j["manifest"] = path.filename().string();
  j["bundle_hash"] = bundle->hash();
  std::filesystem::create_directories(cfg.eval_dir());
  WriteJson(cfg.eval_dir() / "classify.json", j);
  WriteFileAtomic(cfg.eval_dir() / "classify.txt", r.Table());
  return j;
}

Json RunEvalSegment(const RunConfig& cfg, const std::optional<std::filesystem::path>& manifest,
                    const ThresholdPolicy& policy, MiouAggregation aggregation,
                    bool external_heatmaps) {
  const auto path = manifest ? *manifest : cfg.val_manifest.value_or(cfg.train_manifest);
  std::vector<SegSample> samples;
  Json j;
  if (external_heatmaps) {
    samples = LoadExternalSegSamples(LoadDatasetManifest(path, LoadClassNames(cfg.classes)));
    j["heatmaps"] = "external";
  } else {
    const auto bundle = LoadBundle(cfg);
    samples = BuildSegSamples(*bundle, LoadDatasetManifest(path, bundle->catalog().class_names()));
    j["heatmaps"] = "class-template concept";
    j["bundle_hash"] = bundle->hash();
  }
  const MetricsReport r = SegMetrics(samples, policy, aggregation);
  j.update(r.ToJson());
  j["manifest"] = path.filename().string();
  std::filesystem::create_directories(cfg.eval_dir());
  WriteJson(cfg.eval_dir() / "segment.json", j);
  WriteFileAtomic(cfg.eval_dir() / "segment.txt", r.Table());
  return j;
}

Json RunDenseProbe(const RunConfig& cfg, std::span<const double> lambdas) {
  const auto classes = LoadClassNames(cfg.classes);
  if (!cfg.val_manifest) Fail(ErrorKind::kConfiguration, "the dense probe needs a validation set");
  auto backbone = MakeBackbone(cfg);
  const GridSpec grid = MakeGrid(cfg.backbone.input_size, cfg.backbone.input_size,
                                 cfg.similarity.grid_h, cfg.similarity.grid_w,
                                 cfg.similarity.radius, cfg.similarity.anchor);
  auto pooled = [&](const std::vector<DatasetEntry>& entries) {
    FileImages images(entries);
    const FeatureBank bank = BuildFeatureBank(images, *backbone, cfg.backbone, grid);
    Eigen::MatrixXd out(bank.size(), bank.feature_dim());
    for (int n = 0; n < bank.size(); ++n) out.row(n) = Pool(bank.volume(n)).transpose();
    return out;
  };
  const auto train = LoadDatasetManifest(cfg.train_manifest, classes);
  const auto val = LoadDatasetManifest(*cfg.val_manifest, classes);
  const Eigen::MatrixXd raw = pooled(train);
  const ActivationStats stats = FitStats(raw);
  const Eigen::MatrixXd x = stats.NormalizeRows(raw);
  const Eigen::MatrixXd xv = stats.NormalizeRows(pooled(val));
  const auto y = Labels(train);
  const auto yv = Labels(val);
  const RegularizationPath path = FitRegularizationPath(
      x, y, static_cast<int>(classes.size()), 0.0, lambdas, cfg.head.solver, &xv, yv);
  std::size_t best = 0;
  for (std::size_t i = 1; i < path.table.size(); ++i) {
    if (*path.table[i].val_accuracy >= *path.table[best].val_accuracy) best = i;
  }
  Json table = Json::array();
  for (const auto& e : path.table) {
    table.push_back({{"lambda", e.lambda}, {"train_accuracy", e.train_accuracy},
                     {"val_accuracy", *e.val_accuracy}});
  }
  Json j = {{"stage", "dense-probe"},
            {"backbone_id", backbone->id()},
            {"feature_dim", x.cols()},
            {"lambda", path.table[best].lambda},
            {"val_accuracy", *path.table[best].val_accuracy},
            {"lambda_path", table}};
  std::filesystem::create_directories(cfg.eval_dir());
  WriteJson(cfg.eval_dir() / "dense_probe.json", j);
  return j;
}

}  // namespace scbm
