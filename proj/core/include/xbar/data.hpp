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

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace xbar {

/// Images are stored one sample per row with values in [0, 1].
struct Dataset {
  using ImageMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  ImageMatrix images;
  std::vector<std::uint8_t> labels;
  int n_classes = 10;
  std::size_t height = 0;
  std::size_t width = 0;
  std::string split = "train";

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return static_cast<std::size_t>(images.cols()); }
  bool empty() const { return labels.empty(); }

  /// Gathers the listed samples into a double matrix (rows = samples).
  Eigen::MatrixXd gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
  /// First `n` samples (or all if n == 0 or n >= size()).
  Dataset head(std::size_t n) const;

  void validate() const;
};

class IdxError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kTruncated, kCountMismatch };
  IdxError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Parses a big-endian IDX image/label pair; pixels are divided by 255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::string_view split = "train");

/// Writes the inverse of load_idx; pixel bytes are round(255 v).
void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// Deterministic permutation keyed by (seed, epoch), chunked into batches.
/// The last partial batch is kept.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t epoch);

enum class SyntheticKind { kBlobs4x16, kParity8 };
SyntheticKind parse_synthetic_kind(std::string_view s);

/// Small generated datasets for fast tests. Blobs: 4 linearly separable
/// Gaussian classes in 16 dims. Parity: 8 binary inputs, label = XOR of all.
Dataset synthetic_toy(SyntheticKind kind, std::size_t n, std::uint64_t seed);

}  // namespace xbar
