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

#ifndef SCBM_IO_H_
#define SCBM_IO_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace scbm {

using Json = nlohmann::json;

// Lowercase hex SHA-256 digest.
std::string Sha256Hex(std::string_view bytes);
std::string Sha256Hex(std::span<const float> values);

std::string ReadFile(const std::filesystem::path& path);

// Writes via a temporary sibling and rename so readers never see a partial
// file.
void WriteFileAtomic(const std::filesystem::path& path, std::string_view bytes);

Json ReadJson(const std::filesystem::path& path);
void WriteJson(const std::filesystem::path& path, const Json& value);

// Little-endian float32 packing, independent of host byte order.
std::string PackF32(std::span<const float> values);
std::vector<float> UnpackF32(std::string_view bytes);
void AppendI32(std::string& out, std::int32_t value);
std::int32_t ReadI32(std::string_view bytes, std::size_t offset);

std::string Base64Encode(std::string_view bytes);
// Throws Error(kInvalidInput) on malformed input.
std::string Base64Decode(std::string_view text);

}  // namespace scbm

#endif  // SCBM_IO_H_
