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

#ifndef SCBM_ERRORS_H_
#define SCBM_ERRORS_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace scbm {

enum class ErrorKind {
  kInvalidInput,
  kGeometry,
  kIntegrity,
  kProvenance,
  kStageOrder,
  kTransport,
  kEmptyCatalog,
  kInsufficientData,
  kDivergence,
  kRange,
  kConfiguration,
  kEmptyRoi,
  kData,
  kIo,
};

std::string_view ErrorKindName(ErrorKind kind);

// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(ErrorKindName(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void Fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace scbm

#endif  // SCBM_ERRORS_H_
