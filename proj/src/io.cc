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

#include "scbm/io.h"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "scbm/errors.h"

namespace scbm {
namespace {

std::uint32_t ToLittle(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) |
           (v >> 24);
  }
}

}  // namespace

std::string Sha256Hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(),
                 nullptr) != 1) {
    Fail(ErrorKind::kIo, "sha256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string Sha256Hex(std::span<const float> values) {
  return Sha256Hex(PackF32(values));
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFileAtomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) Fail(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) Fail(ErrorKind::kIo, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Json ReadJson(const std::filesystem::path& path) {
  const std::string text = ReadFile(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    Fail(ErrorKind::kIntegrity,
         "malformed json in " + path.string() + ": " + e.what());
  }
}

void WriteJson(const std::filesystem::path& path, const Json& value) {
  WriteFileAtomic(path, value.dump(2) + "\n");
}

std::string PackF32(std::span<const float> values) {
  std::string out(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = ToLittle(std::bit_cast<std::uint32_t>(values[i]));
    std::memcpy(out.data() + 4 * i, &bits, 4);
  }
  return out;
}

std::vector<float> UnpackF32(std::string_view bytes) {
  if (bytes.size() % 4 != 0) {
    Fail(ErrorKind::kIntegrity, "f32 payload length not a multiple of 4");
  }
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    out[i] = std::bit_cast<float>(ToLittle(bits));
  }
  return out;
}

void AppendI32(std::string& out, std::int32_t value) {
  const std::uint32_t bits = ToLittle(static_cast<std::uint32_t>(value));
  char buf[4];
  std::memcpy(buf, &bits, 4);
  out.append(buf, 4);
}

std::int32_t ReadI32(std::string_view bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) {
    Fail(ErrorKind::kIntegrity, "truncated int32 field");
  }
  std::uint32_t bits;
  std::memcpy(&bits, bytes.data() + offset, 4);
  return static_cast<std::int32_t>(ToLittle(bits));
}

std::string Base64Encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string Base64Decode(std::string_view text) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (c != '\n' && c != '\r' && c != ' ') clean.push_back(c);
  }
  if (clean.size() % 4 != 0) Fail(ErrorKind::kInvalidInput, "bad base64 length");
  std::string out(3 * clean.size() / 4 + 1, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) Fail(ErrorKind::kInvalidInput, "malformed base64");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  if (!clean.empty() && clean.back() == '=') --len;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

}  // namespace scbm
