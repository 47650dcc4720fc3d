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
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "xbar/device.hpp"

namespace xbar {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Affine map between conductance G and network weight g = a G - b. Built
/// from the population-mean device so that the mean maximum and minimum
/// conductances land exactly on +1 and -1.
struct MappingConstants {
  double a = 0.0;
  double b = 0.0;
  double g_max_bar = 0.0;
  double g_min_bar = 0.0;
  double vr = kDefaultReadVoltage;

  static MappingConstants from_mean(const DeviceParams& mean, double vr = kDefaultReadVoltage);

  double weight(double conductance) const { return a * conductance - b; }
  double conductance(double weight) const { return (weight + b) / a; }
};

/// Input x in [0, 1] is driven as V = kInputVoltageScale * x.
inline constexpr double kInputVoltageScale = 0.1;

struct CrossbarConfig {
  std::size_t rows = 1;
  std::size_t cols = 1;
  DeviceParams mean = DeviceParams::nominal();
  VariationConfig variation{};
  PulsePair pulses{};
  std::uint64_t seed = 0;
  std::uint32_t layer = 0;
  double vr = kDefaultReadVoltage;
  double initial_omega = 0.5;
};

struct MacDiagnostics {
  std::size_t clamped_inputs = 0;
};

/// A rows x cols memristor array plus the caches the analog MAC needs.
///
/// The column current sum_i [w gamma sinh(delta V) + (1-w) alpha (1-e^{-beta V})]
/// is evaluated as a power series in V. Every cell contributes one
/// coefficient per power, so a batch MAC is a short sum of dense matrix
/// products. The series is truncated where the next term falls below 1e-17
/// of the leading one for the largest parameters in the array, i.e. it
/// reproduces the transcendental sum to double precision.
class Crossbar {
 public:
  explicit Crossbar(const CrossbarConfig& config);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return rows_ * cols_; }
  std::uint32_t layer() const { return layer_; }
  std::uint64_t seed() const { return seed_; }

  const DeviceParams& mean_params() const { return mean_; }
  const VariationConfig& variation() const { return variation_; }
  void set_variation(const VariationConfig& v) { variation_ = v; }
  const PulsePair& pulses() const { return pulses_; }
  void set_pulses(const PulsePair& p) { pulses_ = p; }
  const MappingConstants& mapping() const { return mapping_; }

  const DeviceParams& params(std::size_t r, std::size_t c) const { return params_[index(r, c)]; }
  double omega(std::size_t r, std::size_t c) const { return omega_[index(r, c)]; }
  /// Sets the state (clamped to [0, 1]) and refreshes the MAC caches.
  void set_omega(std::size_t r, std::size_t c, double omega);
  /// Overwrites a cell's parameters, e.g. when restoring a snapshot.
  void set_params(std::size_t r, std::size_t c, const DeviceParams& p);

  /// Noise-free read conductance of the cell's current state.
  double read_conductance(std::size_t r, std::size_t c) const;
  /// Read conductance mapped to weight space.
  double read_weight(std::size_t r, std::size_t c) const { return mapping_.weight(read_conductance(r, c)); }

  /// g_eff = a G_read - b for every cell, kept up to date by set_omega.
  const Matrix& effective_weights() const { return weights_; }

  /// Exact analog MAC for a batch: x is batch x rows, result batch x cols.
  /// Inputs outside [0, 1] are clamped and counted in `diag`.
  Matrix forward_mac(const Matrix& x, MacDiagnostics* diag = nullptr) const;
  /// Same mapping with the linear conductance model: x * g_eff.
  Matrix forward_linear(const Matrix& x) const;

  /// Returns the cell's current event counter and advances it.
  std::uint32_t next_event(std::size_t r, std::size_t c) { return events_[index(r, c)]++; }
  std::uint32_t event_count(std::size_t r, std::size_t c) const { return events_[index(r, c)]; }

  std::uint64_t pulse_count() const { return pulse_count_; }
  void add_pulses(std::uint64_t n) { pulse_count_ += n; }

  std::size_t series_order() const { return coeff_.size(); }

 private:
  std::size_t index(std::size_t r, std::size_t c) const { return r * cols_ + c; }
  void refresh_cell(std::size_t r, std::size_t c);
  void choose_series_order();

  std::size_t rows_;
  std::size_t cols_;
  std::uint32_t layer_;
  std::uint64_t seed_;
  DeviceParams mean_;
  VariationConfig variation_;
  PulsePair pulses_;
  MappingConstants mapping_;

  std::vector<DeviceParams> params_;
  std::vector<double> omega_;
  std::vector<double> g_full_;   // per-cell read conductance at w = 1
  std::vector<double> g_empty_;  // per-cell read conductance at w = 0
  std::vector<std::uint32_t> events_;
  std::uint64_t pulse_count_ = 0;

  Matrix weights_;
  std::vector<Matrix> coeff_;  // coeff_[p-1](r, c) multiplies V^p
};

/// Builds an array with D2D-sampled parameters and uniform initial state.
/// Throws std::invalid_argument for zero dimensions.
Crossbar init_crossbar(const CrossbarConfig& config);

/// State that reproduces weight `g` on a mean-parameter device. Weights
/// outside [-1, 1] are clamped; `clamped` (if given) is incremented.
double weight_to_omega(double g, const DeviceParams& mean, const MappingConstants& mapping,
                       std::size_t* clamped = nullptr);

/// Text snapshot: header lines then one row per cell with the state and
/// the seven parameters at full precision. See README for the layout.
void save_snapshot(const Crossbar& cb, std::ostream& out);
Crossbar load_snapshot(std::istream& in, const VariationConfig& variation = {});

}  // namespace xbar
