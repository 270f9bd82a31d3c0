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

#include "scbm/service.h"

#include <httplib.h>

#include <cmath>
#include <ctime>
#include <random>
#include <regex>

#include "scbm/errors.h"

namespace scbm {
namespace {

constexpr std::size_t kExpiredMemory = 4096;

std::vector<float> ToVector(const Eigen::VectorXf& v) { return {v.data(), v.data() + v.size()}; }

std::string UtcNow() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int StatusFor(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kRange:
    case ErrorKind::kEmptyRoi:
    case ErrorKind::kGeometry:
      return 422;
    default:
      return 400;
  }
}

std::optional<int> ParseIndex(const std::string& s) {
  if (s.empty() || s.size() > 9) return std::nullopt;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
  }
  return std::stoi(s);
}

Json MaskRecord(const RoiMask& mask, const std::string& encoding) {
  Json j = {{"encoding", encoding}};
  if (!mask.downsample_record().empty()) j["downsampling"] = mask.downsample_record();
  return j;
}

}  // namespace

Service::Service(std::shared_ptr<const ModelBundle> bundle, ServiceOptions options)
    : bundle_(std::move(bundle)), options_(std::move(options)) {
  if (!options_.clock) options_.clock = [] { return std::chrono::steady_clock::now(); };
  if (options_.max_sessions < 1) options_.max_sessions = 1;
  std::random_device rd;
  salt_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

std::chrono::steady_clock::time_point Service::Now() const { return options_.clock(); }

Reply Service::JsonReply(int status, Json body) const {
  Reply r;
  r.status = status;
  if (bundle_) {
    body["bundle_hash"] = bundle_->hash();
    r.headers["X-Bundle-Hash"] = bundle_->hash();
  }
  r.body = body.dump();
  return r;
}

Reply Service::ErrorReply(int status, const std::string& message) const {
  return JsonReply(status, {{"error", message}, {"status", status}});
}

std::size_t Service::session_count() {
  std::lock_guard<std::mutex> lock(mu_);
  return sessions_.size();
}

std::string Service::NewSessionId() {
  return Sha256Hex("session|" + std::to_string(salt_) + "|" + std::to_string(++counter_)).substr(0, 32);
}

Service::SessionPtr Service::Lookup(const std::string& id, int* status) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) {
    *status = expired_.count(id) ? 410 : 404;
    return nullptr;
  }
  if (Now() > it->second->expires) {
    lru_.erase(lru_pos_.at(id));
    lru_pos_.erase(id);
    sessions_.erase(it);
    expired_.insert(id);
    expired_order_.push_back(id);
    *status = 410;
    return nullptr;
  }
  it->second->expires = Now() + options_.ttl;
  lru_.splice(lru_.begin(), lru_, lru_pos_.at(id));
  return it->second;
}

Reply Service::Handle(const std::string& method, const std::string& path, const std::string& body) {
  static const std::regex kSession(R"(^/sessions/([0-9a-f]+)/(explain|roi|edits|edits/last|heatmaps/([^/]+))$)");
  static const std::regex kRules(R"(^/classes/([^/]+)/rules$)");
  try {
    if (path == "/healthz") {
      if (method != "GET") return ErrorReply(405, "method not allowed");
      if (!bundle_) return ErrorReply(503, "model bundle not loaded");
      return JsonReply(200, {{"status", "ok"}});
    }
    if (!bundle_) return ErrorReply(503, "model bundle not loaded");
    if (path == "/predict") {
      if (method != "POST") return ErrorReply(405, "method not allowed");
      return Predict(body);
    }
    if (path == "/concepts") {
      if (method != "GET") return ErrorReply(405, "method not allowed");
      return Concepts();
    }
    std::smatch match;
    if (std::regex_match(path, match, kRules)) {
      if (method != "GET") return ErrorReply(405, "method not allowed");
      return Rules(match[1]);
    }
    if (!std::regex_match(path, match, kSession)) return ErrorReply(404, "no route for " + path);
    const std::string action = match[2];
    const bool is_heatmap = action.rfind("heatmaps/", 0) == 0;
    const std::string want = is_heatmap ? "GET" : action == "edits/last" ? "DELETE" : "POST";
    if (method != want) return ErrorReply(405, "method not allowed");

    int status = 0;
    SessionPtr s = Lookup(match[1], &status);
    if (!s) return ErrorReply(status, status == 410 ? "session expired" : "unknown session");
    std::lock_guard<std::mutex> lock(s->mu);
    if (is_heatmap) return Heatmap(*s, match[3]);
    if (action == "edits/last") return RevertEdit(*s);
    Json req = Json::object();
    if (!body.empty()) {
      try {
        req = Json::parse(body);
      } catch (const Json::exception&) {
        return ErrorReply(400, "request body is not valid JSON");
      }
      if (!req.is_object()) return ErrorReply(400, "request body must be a JSON object");
    }
    if (action == "explain") return ExplainSession(*s, req);
    if (action == "roi") return Roi(*s, req);
    return AddEdit(*s, req);
  } catch (const Error& e) {
    return ErrorReply(StatusFor(e), e.what());
  } catch (const Json::exception& e) {
    return ErrorReply(400, std::string("malformed request: ") + e.what());
  } catch (const std::exception& e) {
    return ErrorReply(500, e.what());
  }
}

Reply Service::Predict(const std::string& body) {
  std::string bytes = body;
  std::string image_id;
  if (!body.empty() && body.front() == '{') {
    try {
      const Json j = Json::parse(body);
      bytes = Base64Decode(j.at("image_base64").get<std::string>());
      image_id = j.value("image_id", std::string());
    } catch (const Json::exception&) {
      return ErrorReply(400, "expected raw image bytes or {\"image_base64\": ...}");
    }
  }
  Image image;
  try {
    image = DecodeImage(bytes);
  } catch (const Error& e) {
    return ErrorReply(400, e.what());
  }
  const ForwardPass pass = bundle_->Forward(image);
  auto s = std::make_shared<Session>();
  s->image_id = image_id.empty() ? Sha256Hex(bytes).substr(0, 16) : image_id;
  s->image_h = image.height;
  s->image_w = image.width;
  s->maps = pass.maps;
  {
    std::lock_guard<std::mutex> lock(mu_);
    s->id = NewSessionId();
    s->expires = Now() + options_.ttl;
    while (sessions_.size() >= options_.max_sessions) {
      const std::string victim = lru_.back();
      lru_.pop_back();
      lru_pos_.erase(victim);
      sessions_.erase(victim);
      expired_.insert(victim);
      expired_order_.push_back(victim);
    }
    while (expired_order_.size() > kExpiredMemory) {
      expired_.erase(expired_order_.front());
      expired_order_.pop_front();
    }
    sessions_[s->id] = s;
    lru_.push_front(s->id);
    lru_pos_[s->id] = lru_.begin();
  }
  const int y = pass.prediction.y_hat;
  return JsonReply(200, {{"session_id", s->id},
                         {"image_id", s->image_id},
                         {"y_hat", y},
                         {"class_name", bundle_->catalog().class_names()[static_cast<std::size_t>(y)]},
                         {"logits", ToVector(pass.prediction.logits)},
                         {"ttl_seconds", options_.ttl.count()}});
}

Reply Service::ExplainSession(Session& s, const Json& req) {
  const int k = req.value("k", options_.default_k);
  if (k < 0) return ErrorReply(422, "k must be >= 0");
  const ForwardPass pass = bundle_->FromMaps(Intervene(s.maps, s.edits));
  Json j = ExplainPass(pass, *bundle_, k, s.image_id, "/sessions/" + s.id + "/heatmaps/").ToJson();
  j["session_id"] = s.id;
  j["edits"] = s.edits.size();
  return JsonReply(200, std::move(j));
}

RoiMask Service::ParseMask(const Session& s, const Json& mask, std::string* encoding) const {
  if (!mask.is_object()) Fail(ErrorKind::kInvalidInput, "mask must be an object with 'png' or 'cells'");
  const GridSpec& grid = bundle_->grid();
  if (mask.contains("cells")) {
    *encoding = "cells";
    const auto cells = mask.at("cells").get<std::vector<int>>();
    return RoiMask::FromCells(grid.grid_h, grid.grid_w, cells);
  }
  if (mask.contains("png")) {
    *encoding = "png";
    int h = 0, w = 0;
    auto px = DecodeGrayPng(Base64Decode(mask.at("png").get<std::string>()), &h, &w);
    if (h != s.image_h || w != s.image_w) {
      Fail(ErrorKind::kGeometry, "mask is " + std::to_string(h) + "x" + std::to_string(w) +
                                     ", image is " + std::to_string(s.image_h) + "x" +
                                     std::to_string(s.image_w));
    }
    return RoiMask::FromImage(h, w, std::move(px));
  }
  Fail(ErrorKind::kInvalidInput, "mask must carry 'png' or 'cells'");
}

Reply Service::Roi(Session& s, const Json& req) {
  const int k = req.value("k", options_.default_k);
  if (k < 0) return ErrorReply(422, "k must be >= 0");
  std::string encoding;
  const RoiMask mask = ParseMask(s, req.at("mask"), &encoding);
  if (mask.count() == 0) return ErrorReply(422, "mask is empty");
  RoiOptions opts;
  opts.normalized = req.value("normalized", false);
  opts.stats = &bundle_->head().stats;
  opts.catalog = &bundle_->catalog();
  const ConceptMaps maps = Intervene(s.maps, s.edits);
  const RoiResult r = ExplainAnything(maps, mask, k, opts);
  Json top = Json::array();
  for (const auto& e : r.top_k) top.push_back({{"m", e.m}, {"concept", e.name}, {"aggregate", e.aggregate}});
  return JsonReply(200, {{"session_id", s.id}, {"resolution", r.resolution},
                         {"mask", MaskRecord(mask, encoding)}, {"normalized", opts.normalized},
                         {"top_k", top}});
}

Reply Service::AddEdit(Session& s, const Json& req) {
  if (!req.contains("concept") || !req.at("concept").is_number_integer()) {
    return ErrorReply(400, "edit needs an integer 'concept'");
  }
  if (!req.contains("beta") || !req.at("beta").is_number()) {
    return ErrorReply(400, "edit needs a numeric 'beta'");
  }
  const int m = req.at("concept").get<int>();
  const double beta = req.at("beta").get<double>();
  if (m < 0 || m >= bundle_->catalog().size()) {
    return ErrorReply(422, "concept index " + std::to_string(m) + " out of range");
  }
  if (!std::isfinite(beta)) return ErrorReply(422, "beta must be finite");
  std::string encoding;
  RoiMask mask = ParseMask(s, req.at("mask"), &encoding);
  if (mask.count() == 0) return ErrorReply(422, "mask is empty");
  mask = mask.ToGrid(bundle_->grid().grid_h, bundle_->grid().grid_w);
  if (mask.count() == 0) return ErrorReply(422, "mask covers no grid cell after downsampling");

  const ForwardPass before = bundle_->FromMaps(Intervene(s.maps, s.edits));
  s.edits.push_back({m, mask, beta, UtcNow(), s.id});
  const ForwardPass after = bundle_->FromMaps(Intervene(s.maps, s.edits));
  const Eigen::VectorXf deltas = after.prediction.logits - before.prediction.logits;
  Json history = Json::array();
  for (const auto& e : s.edits) {
    history.push_back({{"concept", e.m}, {"beta", e.beta}, {"cells", e.mask.count()},
                       {"timestamp", e.timestamp}});
  }
  return JsonReply(200, {{"session_id", s.id},
                         {"old_y_hat", before.prediction.y_hat},
                         {"new_y_hat", after.prediction.y_hat},
                         {"old_logits", ToVector(before.prediction.logits)},
                         {"new_logits", ToVector(after.prediction.logits)},
                         {"logit_deltas", ToVector(deltas)},
                         {"mask", MaskRecord(mask, encoding)},
                         {"edits", history}});
}

Reply Service::RevertEdit(Session& s) {
  if (s.edits.empty()) return ErrorReply(422, "session has no edits to revert");
  const EditRecord last = s.edits.back();
  s.edits.pop_back();
  const ForwardPass pass = bundle_->FromMaps(Intervene(s.maps, s.edits));
  return JsonReply(200, {{"session_id", s.id},
                         {"reverted", {{"concept", last.m}, {"beta", last.beta}, {"timestamp", last.timestamp}}},
                         {"y_hat", pass.prediction.y_hat},
                         {"logits", ToVector(pass.prediction.logits)},
                         {"edits_remaining", s.edits.size()}});
}

Reply Service::Heatmap(Session& s, const std::string& m_text) {
  const auto m = ParseIndex(m_text);
  if (!m || *m >= bundle_->catalog().size()) return ErrorReply(422, "concept index out of range");
  const ConceptMaps maps = Intervene(s.maps, s.edits);
  const HeatmapPng png = EncodeHeatmapPng(ConceptHeatmap(maps, *m, s.image_h, s.image_w));
  Reply r;
  r.content_type = "image/png";
  r.body = png.png;
  r.headers["X-Bundle-Hash"] = bundle_->hash();
  r.headers["X-Heatmap-Min"] = png.sidecar.at("min").dump();
  r.headers["X-Heatmap-Max"] = png.sidecar.at("max").dump();
  return r;
}

Reply Service::Rules(const std::string& l_text) {
  const auto l = ParseIndex(l_text);
  if (!l || *l >= bundle_->head().classes()) return ErrorReply(404, "unknown class " + l_text);
  const auto& name = bundle_->catalog().class_names()[static_cast<std::size_t>(*l)];
  return JsonReply(200, {{"class", *l}, {"class_name", name},
                         {"edges", RulesToSankey(ClassRules(bundle_->head(), *l, &bundle_->catalog()), name)}});
}

Reply Service::Concepts() {
  const auto& c = bundle_->catalog();
  return JsonReply(200, {{"concepts", c.concepts()}, {"classes", c.class_names()},
                         {"source", CatalogSourceName(c.source())}, {"content_hash", c.content_hash()}});
}

void Service::Mount(httplib::Server& server) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    const Reply r = Handle(req.method, req.path, req.body);
    res.status = r.status;
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
    res.set_content(r.body, r.content_type);
  };
  server.Get(R"(/.*)", handler);
  server.Post(R"(/.*)", handler);
  server.Delete(R"(/.*)", handler);
}

}  // namespace scbm
