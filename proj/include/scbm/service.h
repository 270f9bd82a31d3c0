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

#ifndef SCBM_SERVICE_H_
#define SCBM_SERVICE_H_

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "scbm/explainer.h"

namespace httplib {
class Server;
}

namespace scbm {

struct ServiceOptions {
  std::chrono::seconds ttl{30 * 60};
  std::size_t max_sessions = 256;
  int default_k = 5;
  // Injectable for expiry tests.
  std::function<std::chrono::steady_clock::time_point()> clock;
};

struct Reply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;

  Json json() const { return Json::parse(body); }
};

// Session-scoped prediction, explanation, ROI query and intervention over an
// immutable model bundle. All methods may be called concurrently; edits are
// serialized per session.
class Service {
 public:
  explicit Service(std::shared_ptr<const ModelBundle> bundle, ServiceOptions options = {});

  Reply Handle(const std::string& method, const std::string& path, const std::string& body);
  // Routes every request on `server` through Handle().
  void Mount(httplib::Server& server);

  std::size_t session_count();

 private:
  struct Session {
    std::string id;
    std::string image_id;
    int image_h = 0;
    int image_w = 0;
    ConceptMaps maps;
    std::vector<EditRecord> edits;
    std::chrono::steady_clock::time_point expires;
    std::mutex mu;
  };
  using SessionPtr = std::shared_ptr<Session>;

  Reply Predict(const std::string& body);
  Reply ExplainSession(Session& s, const Json& req);
  Reply Roi(Session& s, const Json& req);
  Reply AddEdit(Session& s, const Json& req);
  Reply RevertEdit(Session& s);
  Reply Heatmap(Session& s, const std::string& m);
  Reply Rules(const std::string& l);
  Reply Concepts();

  Reply JsonReply(int status, Json body) const;
  Reply ErrorReply(int status, const std::string& message) const;
  std::chrono::steady_clock::time_point Now() const;
  // Returns the session, or sets *status to 404 (unknown) or 410 (expired).
  SessionPtr Lookup(const std::string& id, int* status);
  std::string NewSessionId();
  RoiMask ParseMask(const Session& s, const Json& mask, std::string* encoding) const;

  std::shared_ptr<const ModelBundle> bundle_;
  ServiceOptions options_;
  std::mutex mu_;
  std::unordered_map<std::string, SessionPtr> sessions_;
  std::list<std::string> lru_;  // most recent first
  std::unordered_map<std::string, std::list<std::string>::iterator> lru_pos_;
  std::unordered_set<std::string> expired_;
  std::deque<std::string> expired_order_;
  std::uint64_t counter_ = 0;
  std::uint64_t salt_ = 0;
};

}  // namespace scbm

#endif  // SCBM_SERVICE_H_
