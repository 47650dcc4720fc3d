// Copyright 2026 The xbar Authors. All Rights Reserved.
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

#include "xbar/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "xbar/rng.hpp"

namespace xbar {
namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset,
                        const std::filesystem::path& path) {
  if (buf.size() < offset + 4) {
    throw IdxError(IdxError::Kind::kTruncated, "truncated header in " + path.string());
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                 static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

}  // namespace

Eigen::MatrixXd Dataset::gather(std::span<const std::size_t> indices) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), images.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        images.row(static_cast<Eigen::Index>(indices[i])).cast<double>();
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels[i]);
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  if (n == 0 || n >= size()) return *this;
  Dataset out = *this;
  out.images = images.topRows(static_cast<Eigen::Index>(n));
  out.labels.resize(n);
  return out;
}

void Dataset::validate() const {
  if (static_cast<std::size_t>(images.rows()) != labels.size()) {
    throw std::invalid_argument("dataset: image and label counts differ");
  }
  if (images.size() > 0 && (images.minCoeff() < 0.0f || images.maxCoeff() > 1.0f)) {
    throw std::invalid_argument("dataset: pixel outside [0, 1]");
  }
  for (auto l : labels) {
    if (l >= n_classes) throw std::invalid_argument("dataset: label >= n_classes");
  }
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::string_view split) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  if (read_be32(img, 0, images_path) != kIdxImageMagic) {
    throw IdxError(IdxError::Kind::kBadMagic, "bad image magic in " + images_path.string());
  }
  if (read_be32(lab, 0, labels_path) != kIdxLabelMagic) {
    throw IdxError(IdxError::Kind::kBadMagic, "bad label magic in " + labels_path.string());
  }
  const std::size_t n = read_be32(img, 4, images_path);
  const std::size_t h = read_be32(img, 8, images_path);
  const std::size_t w = read_be32(img, 12, images_path);
  const std::size_t n_labels = read_be32(lab, 4, labels_path);
  if (n != n_labels) {
    throw IdxError(IdxError::Kind::kCountMismatch,
                   "image count " + std::to_string(n) + " != label count " + std::to_string(n_labels));
  }
  constexpr std::size_t kImageHeader = 16;
  constexpr std::size_t kLabelHeader = 8;
  if (img.size() < kImageHeader + n * h * w) {
    throw IdxError(IdxError::Kind::kTruncated, "truncated pixel data in " + images_path.string());
  }
  if (lab.size() < kLabelHeader + n) {
    throw IdxError(IdxError::Kind::kTruncated, "truncated label data in " + labels_path.string());
  }

  Dataset ds;
  ds.split = std::string(split);
  ds.height = h;
  ds.width = w;
  ds.images.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(h * w));
  const std::uint8_t* px = img.data() + kImageHeader;
  for (std::size_t i = 0; i < n * h * w; ++i) ds.images.data()[i] = static_cast<float>(px[i]) / 255.0f;
  ds.labels.assign(lab.begin() + kLabelHeader, lab.begin() + static_cast<std::ptrdiff_t>(kLabelHeader + n));
  int max_label = 0;
  for (auto l : ds.labels) max_label = std::max<int>(max_label, l);
  ds.n_classes = std::max(10, max_label + 1);
  return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw IdxError(IdxError::Kind::kIo, "cannot open IDX output files");
  std::size_t h = ds.height, w = ds.width;
  if (h * w != ds.features()) {
    h = 1;
    w = ds.features();
  }
  write_be32(img, kIdxImageMagic);
  write_be32(img, static_cast<std::uint32_t>(ds.size()));
  write_be32(img, static_cast<std::uint32_t>(h));
  write_be32(img, static_cast<std::uint32_t>(w));
  for (Eigen::Index i = 0; i < ds.images.size(); ++i) {
    const float v = std::clamp(ds.images.data()[i], 0.0f, 1.0f);
    img.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0f))));
  }
  write_be32(lab, kIdxLabelMagic);
  write_be32(lab, static_cast<std::uint32_t>(ds.size()));
  lab.write(reinterpret_cast<const char*>(ds.labels.data()), static_cast<std::streamsize>(ds.size()));
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream rng({seed, StreamDomain::kShuffle, 0, static_cast<std::uint32_t>(epoch),
                 static_cast<std::uint32_t>(epoch >> 32), 0});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

SyntheticKind parse_synthetic_kind(std::string_view s) {
  if (s == "blobs" || s == "gaussian-blobs-4class-16dim") return SyntheticKind::kBlobs4x16;
  if (s == "parity" || s == "parity-8dim") return SyntheticKind::kParity8;
  throw std::invalid_argument("unknown synthetic dataset '" + std::string(s) + "'");
}

Dataset synthetic_toy(SyntheticKind kind, std::size_t n, std::uint64_t seed) {
  Dataset ds;
  ds.split = "synthetic";
  RngStream rng({seed, StreamDomain::kSynthetic, static_cast<std::uint32_t>(kind), 0, 0, 0});
  if (kind == SyntheticKind::kBlobs4x16) {
    constexpr int kClasses = 4;
    constexpr int kDims = 16;
    // Class c is centred high on its own block of four features and low elsewhere.
    ds.n_classes = kClasses;
    ds.height = 4;
    ds.width = 4;
    ds.images.resize(static_cast<Eigen::Index>(n), kDims);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % kClasses);
      ds.labels[i] = static_cast<std::uint8_t>(label);
      for (int d = 0; d < kDims; ++d) {
        const double center = (d / 4 == label) ? 0.75 : 0.25;
        const double v = std::clamp(center + 0.08 * rng.normal(), 0.0, 1.0);
        ds.images(static_cast<Eigen::Index>(i), d) = static_cast<float>(v);
      }
    }
  } else {
    constexpr int kBits = 8;
    ds.n_classes = 2;
    ds.height = 1;
    ds.width = kBits;
    ds.images.resize(static_cast<Eigen::Index>(n), kBits);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto pattern = static_cast<std::uint32_t>(rng.below(1u << kBits));
      ds.labels[i] = static_cast<std::uint8_t>(std::popcount(pattern) % 2);
      for (int b = 0; b < kBits; ++b) {
        ds.images(static_cast<Eigen::Index>(i), b) = ((pattern >> b) & 1u) ? 1.0f : 0.0f;
      }
    }
  }
  return ds;
}

}  // namespace xbar
