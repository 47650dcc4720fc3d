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

#include <array>
#include <cstdint>

namespace xbar {

/// Philox4x32-10 block function (Salmon et al., "Parallel random numbers:
/// as easy as 1, 2, 3"). Stateless: the same (counter, key) always yields
/// the same four words, which is what makes per-cell streams independent of
/// evaluation order and thread count.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key);
};

std::uint64_t splitmix64(std::uint64_t x);

/// Separates draws that share a cell identity but serve different purposes.
enum class StreamDomain : std::uint32_t {
  kDeviceToDevice = 1,
  kPulseToPulse = 2,
  kRounding = 3,
  kShuffle = 4,
  kWeightInit = 5,
  kSynthetic = 6,
  kStudy = 7,
  kReadNoise = 8,
};

/// Identity of one stochastic event. For crossbar cells `a`/`b` are the row
/// and column and `event` is the cell's event counter; other users pick
/// whatever coordinates make their draws unique.
struct StreamKey {
  std::uint64_t seed = 0;
  StreamDomain domain = StreamDomain::kDeviceToDevice;
  std::uint32_t layer = 0;
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  std::uint32_t event = 0;
};

/// Sequential draws from a single keyed Philox stream.
class RngStream {
 public:
  explicit RngStream(const StreamKey& key);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();
  /// Uniform integer in [0, n). Rejection-sampled, so unbiased.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  void refill();

  Philox4x32::Key key_{};
  Philox4x32::Counter base_{};
  Philox4x32::Counter buf_{};
  std::uint32_t block_ = 0;
  int pos_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace xbar
