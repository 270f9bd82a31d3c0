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

#include "scbm/errors.h"

namespace scbm {

std::string_view ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput: return "invalid input";
    case ErrorKind::kGeometry: return "geometry error";
    case ErrorKind::kIntegrity: return "integrity error";
    case ErrorKind::kProvenance: return "provenance error";
    case ErrorKind::kStageOrder: return "stage-order error";
    case ErrorKind::kTransport: return "transport error";
    case ErrorKind::kEmptyCatalog: return "empty catalog";
    case ErrorKind::kInsufficientData: return "insufficient data";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kRange: return "range error";
    case ErrorKind::kConfiguration: return "configuration error";
    case ErrorKind::kEmptyRoi: return "empty roi";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kIo: return "io error";
  }
  return "error";
}

}  // namespace scbm
