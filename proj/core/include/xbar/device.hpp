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

#include "xbar/rng.hpp"

namespace xbar {

/// Physical parameters of one memristor. The first three drive the state
/// dynamics, the last four the read current.
struct DeviceParams {
  double k = 1e-4;        ///< ion-hopping rate scale (1/s)
  double mu1 = 19.25;     ///< hopping barrier height 1 (1/V)
  double mu2 = 13.0;      ///< hopping barrier height 2 (1/V)
  double gamma = 3.01e-3; ///< effective tunneling distance
  double delta = 0.5;     ///< tunneling barrier (1/V)
  double alpha = 1.58e-3; ///< Schottky depletion width
  double beta = 0.5;      ///< Schottky barrier height (1/V)

  static constexpr std::size_t kFieldCount = 7;

  /// Mean parameter set of the modeled device technology.
  static DeviceParams nominal() { return {}; }

  std::array<double, kFieldCount> as_array() const {
    return {k, mu1, mu2, gamma, delta, alpha, beta};
  }
  static DeviceParams from_array(const std::array<double, kFieldCount>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
  }

  bool operator==(const DeviceParams&) const = default;
};

inline constexpr std::array<const char*, DeviceParams::kFieldCount> kDeviceParamNames = {
    "k", "mu1", "mu2", "gamma", "delta", "alpha", "beta"};

struct DeviceState {
  double omega = 0.5;  ///< filament-area fraction, kept in [0, 1]
};

struct PulseSpec {
  double voltage = 0.0;  ///< signed amplitude (V); < 0 potentiates
  double width = 0.0;    ///< duration (s)

  bool potentiates() const { return voltage < 0.0; }
};

struct PulsePair {
  PulseSpec potentiation{-1.1, 3e-6};
  PulseSpec depression{1.4, 30e-6};

  const PulseSpec& for_sign(double direction) const {
    return direction >= 0.0 ? potentiation : depression;
  }
};

inline constexpr double kDefaultReadVoltage = 0.05;

/// Device-to-device and pulse-to-pulse variation. `d2d_fraction` holds the
/// relative standard deviation of each parameter, in DeviceParams field order.
struct VariationConfig {
  DeviceParams d2d_fraction{0.03, 0.03, 0.03, 0.10, 0.03, 0.15, 0.03};
  double p2p_ratio = 0.1;
  double d2d_scale = 1.0;
  double p2p_scale = 1.0;
  bool d2d_enabled = false;
  bool p2p_enabled = false;
  /// Relative std of additive Gaussian noise on read conductance. Off by default.
  double read_noise = 0.0;

  void validate() const;
};

/// Draws one device's parameters around `mean`. Non-positive draws are
/// redrawn up to 16 times, then clamped to 1e-3 of the mean.
DeviceParams sample_device_params(const DeviceParams& mean, const VariationConfig& var,
                                  RngStream& rng);

/// Fresh, non-cumulative jitter around the device's own parameters. The
/// spread is referenced to the population mean, not to `base`.
DeviceParams perturb_p2p(const DeviceParams& base, const DeviceParams& mean,
                         const VariationConfig& var, RngStream& rng);

/// Current through the device at voltage `v`.
double current(const DeviceParams& p, DeviceState s, double v);

/// Conductance seen by a read pulse of amplitude `vr` (> 0).
double read_conductance(const DeviceParams& p, DeviceState s, double vr = kDefaultReadVoltage);

/// Read conductance at the two ends of the state range.
double conductance_at_full(const DeviceParams& p, double vr = kDefaultReadVoltage);
double conductance_at_empty(const DeviceParams& p, double vr = kDefaultReadVoltage);

/// Rate coefficient xi = k (e^{-mu1 V} - e^{mu2 V}); positive for
/// potentiating (negative) voltages. Throws std::invalid_argument for V = 0.
double rate_coefficient(const DeviceParams& p, double v);

/// Exact state after a pulse of width `width` with rate coefficient `xi`.
/// `potentiating` selects the (1-w)^2 or w^2 branch of the dynamics.
double evolve_state(double omega, double xi, double width, bool potentiating);

/// Applies one pulse with fixed parameters (no jitter).
DeviceState apply_pulse(DeviceState s, const DeviceParams& p, const PulseSpec& pulse);

/// Applies one pulse after drawing pulse-to-pulse jitter from `rng`.
DeviceState apply_pulse(DeviceState s, const DeviceParams& p, const PulseSpec& pulse,
                        const DeviceParams& mean, const VariationConfig& var, RngStream& rng);

}  // namespace xbar
