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

// scbm: command-line driver for the spatial concept bottleneck pipeline.

#include <algorithm>
#include <iostream>
#include <optional>

#include "scbm/errors.h"
#include "scbm/pipeline.h"
#include "scbm/service.h"
#include "scbm/toy.h"

// After the Eigen users: <resolv.h>, pulled in by httplib, defines _res.
#include <CLI11.hpp>
#include <httplib.h>

namespace {

using scbm::Json;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> grid_h, grid_w, radius, batch_size, threads, steps, cbl_batch;
};

scbm::RunConfig LoadConfig(const std::string& path, const Overrides& o) {
  if (!std::filesystem::exists(path)) {
    scbm::Fail(scbm::ErrorKind::kConfiguration, "config file not found: " + path);
  }
  Json j;
  try {
    j = Json::parse(scbm::ReadFile(path));
  } catch (const Json::exception& e) {
    scbm::Fail(scbm::ErrorKind::kConfiguration, path + ": " + e.what());
  }
  if (o.seed) j["seed"] = *o.seed;
  if (o.grid_h) j["grid"]["h"] = *o.grid_h;
  if (o.grid_w) j["grid"]["w"] = *o.grid_w;
  if (o.radius) j["grid"]["radius"] = *o.radius;
  if (o.batch_size) j["similarity"]["batch_size"] = *o.batch_size;
  if (o.threads) j["similarity"]["threads"] = *o.threads;
  if (o.steps) j["cbl"]["steps"] = *o.steps;
  if (o.cbl_batch) j["cbl"]["batch_size"] = *o.cbl_batch;
  return scbm::RunConfig::FromJson(j, std::filesystem::absolute(path).parent_path());
}

Json ToyConfig(const std::string& source, const std::string& out_dir) {
  return {{"out_dir", out_dir},
          {"seed", 0},
          {"dataset", {{"classes", "classes.json"}, {"train", "train.jsonl"}, {"val", "val.jsonl"}}},
          {"catalog", {{"source", source}, {"llm_responses", "llm_responses.json"}}},
          {"encoder", {{"kind", "toy"}}},
          {"backbone", {{"kind", "cnn"}, {"impl", "patch_stats"}, {"input_size", 64},
                        {"patch", 8}, {"channels", 32}}},
          {"grid", {{"h", 7}, {"w", 7}, {"radius", 8}}},
          {"similarity", {{"batch_size", 64}, {"threads", 1}, {"images_per_chunk", 64}}},
          {"cbl", {{"steps", 1500}, {"batch_size", 32}, {"step_size", 0.01}, {"eval_every", 100}}},
          {"head", {{"alpha", 0.99}, {"lambdas", {0.5, 2.0, 8.0}}, {"pooling", "mean"}}}};
}

void Print(const Json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial concept bottleneck pipeline"};
  app.require_subcommand(1);
  std::string config;
  Overrides o;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "run config (JSON)")->required();
    cmd->add_option("--seed", o.seed, "override the run seed");
  };

  auto* toy = app.add_subcommand("make-toy", "write the ten-class toy dataset and configs");
  std::string toy_out;
  scbm::ToyDatasetOptions toy_opts;
  toy->add_option("--out", toy_out, "output directory")->required();
  toy->add_option("--per-class", toy_opts.per_class_train, "training images per class");
  toy->add_option("--val-per-class", toy_opts.per_class_val, "validation images per class");
  toy->add_option("--size", toy_opts.size, "image side in pixels");
  toy->add_option("--seed", toy_opts.seed, "generator seed");

  auto* concepts = app.add_subcommand("concepts", "build and filter the concept catalog");
  add_config(concepts);

  auto* sims = app.add_subcommand("similarities", "compute the spatial similarity matrix");
  add_config(sims);
  bool resume = false;
  sims->add_flag("--resume", resume, "keep finished chunks of an interrupted run");
  sims->add_option("--grid-h", o.grid_h);
  sims->add_option("--grid-w", o.grid_w);
  sims->add_option("--radius", o.radius);
  sims->add_option("--batch-size", o.batch_size);
  sims->add_option("--threads", o.threads);

  auto* cbl = app.add_subcommand("train-cbl", "train the convolutional concept bottleneck");
  add_config(cbl);
  cbl->add_option("--steps", o.steps);
  cbl->add_option("--batch-size", o.cbl_batch);

  auto* head = app.add_subcommand("train-head", "fit the sparse classification head");
  add_config(head);

  auto* explain = app.add_subcommand("explain", "explain one image");
  add_config(explain);
  std::string image, explain_out;
  int k = 5;
  explain->add_option("--image", image)->required()->check(CLI::ExistingFile);
  explain->add_option("-k,--k", k, "number of concepts")->check(CLI::NonNegativeNumber);
  explain->add_option("--out", explain_out, "output directory (default <out_dir>/explain/<image>)");

  auto* eval = app.add_subcommand("eval", "evaluate a trained model");
  eval->require_subcommand(1);
  std::optional<std::string> manifest;
  auto* classify = eval->add_subcommand("classify", "top-1 accuracy");
  add_config(classify);
  classify->add_option("--manifest", manifest, "dataset manifest (default: val, else train)");
  auto* segment = eval->add_subcommand("segment", "zero-shot segmentation metrics");
  add_config(segment);
  segment->add_option("--manifest", manifest, "dataset manifest with masks");
  std::string policy = "mean";
  bool per_image = false, external = false;
  segment->add_option("--threshold-policy", policy, "mean or fixed:<t>");
  segment->add_flag("--per-image-miou", per_image, "average IoU per image instead of over the dataset");
  segment->add_flag("--external-heatmaps", external, "score the manifest's 'heatmap' files");
  auto* probe = eval->add_subcommand("probe", "dense linear probe on pooled backbone features");
  add_config(probe);
  std::vector<double> probe_lambdas = {0.01, 0.1, 1.0, 10.0};
  probe->add_option("--lambdas", probe_lambdas, "ridge strengths to try (ascending)");

  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  add_config(serve);
  std::string host = "127.0.0.1";
  int port = 8080;
  int ttl_minutes = 30;
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--ttl-minutes", ttl_minutes)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (toy->parsed()) {
      scbm::GenerateToyDataset(toy_out, toy_opts);
      scbm::WriteJson(std::filesystem::path(toy_out) / "config.json", ToyConfig("llm_generated", "run"));
      scbm::WriteJson(std::filesystem::path(toy_out) / "config_template.json",
                      ToyConfig("class_template", "run_template"));
      Print({{"stage", "make-toy"}, {"out", toy_out}});
      return 0;
    }
    const scbm::RunConfig cfg = LoadConfig(config, o);
    if (serve->parsed()) {
      scbm::ServiceOptions opts;
      opts.ttl = std::chrono::minutes(ttl_minutes);
      scbm::Service service(scbm::LoadBundle(cfg), opts);
      httplib::Server server;
      service.Mount(server);
      std::cerr << "listening on " << host << ":" << port << "\n";
      if (!server.listen(host, port)) {
        scbm::Fail(scbm::ErrorKind::kIo, "cannot listen on " + host + ":" + std::to_string(port));
      }
      return 0;
    }
    scbm::RunLock lock(cfg.out_dir);
    if (concepts->parsed()) Print(scbm::RunConcepts(cfg));
    else if (sims->parsed()) Print(scbm::RunSimilarities(cfg, resume));
    else if (cbl->parsed()) Print(scbm::RunTrainCbl(cfg));
    else if (head->parsed()) Print(scbm::RunTrainHead(cfg));
    else if (explain->parsed()) {
      const std::filesystem::path out = explain_out.empty()
          ? cfg.out_dir / "explain" / std::filesystem::path(image).stem()
          : std::filesystem::path(explain_out);
      Print(scbm::RunExplain(cfg, image, k, out));
    } else if (classify->parsed()) {
      Print(scbm::RunEvalClassify(cfg, manifest ? std::optional<std::filesystem::path>(*manifest)
                                                : std::nullopt));
    } else if (segment->parsed()) {
      Print(scbm::RunEvalSegment(
          cfg, manifest ? std::optional<std::filesystem::path>(*manifest) : std::nullopt,
          scbm::ThresholdPolicy::Parse(policy),
          per_image ? scbm::MiouAggregation::kPerImage : scbm::MiouAggregation::kDataset, external));
    } else if (probe->parsed()) {
      std::sort(probe_lambdas.begin(), probe_lambdas.end());
      Print(scbm::RunDenseProbe(cfg, probe_lambdas));
    }
    return 0;
  } catch (const scbm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return scbm::ExitCodeFor(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
