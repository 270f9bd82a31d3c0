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

#include "scbm/image.h"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstring>

#include "scbm/errors.h"
#include "scbm/io.h"

namespace scbm {
namespace {

Image FromBgr(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Image out;
  out.height = rgb.rows;
  out.width = rgb.cols;
  out.rgb.resize(static_cast<std::size_t>(rgb.rows) * rgb.cols * 3);
  for (int y = 0; y < rgb.rows; ++y) {
    std::memcpy(out.rgb.data() + static_cast<std::size_t>(y) * rgb.cols * 3,
                rgb.ptr<std::uint8_t>(y), static_cast<std::size_t>(rgb.cols) * 3);
  }
  return out;
}

cv::Mat ToBgr(const Image& image) {
  cv::Mat rgb(image.height, image.width, CV_8UC3,
              const_cast<std::uint8_t*>(image.rgb.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

std::string Encode(const cv::Mat& mat) {
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", mat, buf)) Fail(ErrorKind::kIo, "png encode failed");
  return {buf.begin(), buf.end()};
}

}  // namespace

Image::Image(int h, int w, std::array<std::uint8_t, 3> fill)
    : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3) {
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = fill[0];
    rgb[i + 1] = fill[1];
    rgb[i + 2] = fill[2];
  }
}

Image LoadImage(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) Fail(ErrorKind::kIo, "cannot decode image " + path.string());
  return FromBgr(bgr);
}

Image DecodeImage(std::string_view bytes) {
  if (bytes.empty()) Fail(ErrorKind::kInvalidInput, "empty image payload");
  std::vector<std::uint8_t> buf(bytes.begin(), bytes.end());
  cv::Mat bgr;
  try {
    bgr = cv::imdecode(buf, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    Fail(ErrorKind::kInvalidInput, std::string("image decode failed: ") + e.what());
  }
  if (bgr.empty()) Fail(ErrorKind::kInvalidInput, "malformed image payload");
  return FromBgr(bgr);
}

std::string EncodePng(const Image& image) { return Encode(ToBgr(image)); }

void SaveImage(const Image& image, const std::filesystem::path& path) {
  WriteFileAtomic(path, EncodePng(image));
}

Image ResizeImage(const Image& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  cv::Mat src(image.height, image.width, CV_8UC3,
              const_cast<std::uint8_t*>(image.rgb.data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  Image out(height, width);
  for (int y = 0; y < height; ++y) {
    std::memcpy(out.rgb.data() + static_cast<std::size_t>(y) * width * 3,
                dst.ptr<std::uint8_t>(y), static_cast<std::size_t>(width) * 3);
  }
  return out;
}

std::string EncodeGrayPng(const std::vector<std::uint8_t>& gray, int height,
                          int width) {
  if (gray.size() != static_cast<std::size_t>(height) * width) {
    Fail(ErrorKind::kGeometry, "gray buffer does not match dimensions");
  }
  cv::Mat mat(height, width, CV_8UC1, const_cast<std::uint8_t*>(gray.data()));
  return Encode(mat);
}

std::vector<std::uint8_t> DecodeGrayPng(std::string_view bytes, int* height,
                                        int* width) {
  std::vector<std::uint8_t> buf(bytes.begin(), bytes.end());
  cv::Mat mat;
  try {
    mat = cv::imdecode(buf, cv::IMREAD_GRAYSCALE);
  } catch (const cv::Exception& e) {
    Fail(ErrorKind::kInvalidInput, std::string("mask decode failed: ") + e.what());
  }
  if (mat.empty()) Fail(ErrorKind::kInvalidInput, "malformed mask png");
  *height = mat.rows;
  *width = mat.cols;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(mat.rows) * mat.cols);
  for (int y = 0; y < mat.rows; ++y) {
    std::memcpy(out.data() + static_cast<std::size_t>(y) * mat.cols,
                mat.ptr<std::uint8_t>(y), static_cast<std::size_t>(mat.cols));
  }
  return out;
}

}  // namespace scbm
