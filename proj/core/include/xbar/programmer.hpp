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

#include <cstdint>
#include <string_view>
#include <vector>

#include "xbar/crossbar.hpp"

namespace xbar {

enum class LoopMode { kOpen, kClosed };

/// How a real-valued pulse demand becomes something a pulse generator can
/// emit. kNone applies the exact demanded duration as a single
/// variable-width pulse; it models unlimited pulse-width precision.
enum class Rounding { kFloor, kStochastic, kNone };

enum class ReinitMode { kUniform, kGaussian };

LoopMode parse_loop_mode(std::string_view s);
Rounding parse_rounding(std::string_view s);
ReinitMode parse_reinit_mode(std::string_view s);
std::string_view to_string(LoopMode m);
std::string_view to_string(Rounding r);
std::string_view to_string(ReinitMode m);

struct SchemeConfig {
  LoopMode loop_mode = LoopMode::kOpen;
  Rounding rounding = Rounding::kStochastic;
  double n_coefficient = 2.0;  ///< open-loop amplification N
  bool compensation = false;
  /// Compensation applies only when the read state lies outside [low, high].
  double band_low = 0.1;
  double band_high = 0.9;
  /// Ignore the band and compensate every cell.
  bool compensation_full_range = false;
  ReinitMode reinit_mode = ReinitMode::kUniform;
  double reinit_epsilon = 0.1;
  /// Target weight std; <= 0 lets the network pick a per-layer default.
  double reinit_target_std = 0.0;
  int reinit_max_cycles = 40;
  /// Upper bound on pulses (or pulse-width multiples) in one programming event.
  int max_pulses = 64;

  void validate() const;
};

/// Intermediate quantities of one pulse-time solve.
struct PulseSolve {
  double xi = 0.0;      ///< rate coefficient at the chosen programming voltage
  double lambda = 0.0;  ///< 1 - w for potentiation, -w for depression
  double psi = 0.0;     ///< T xi lambda (compensation only)
  double delta_omega = 0.0;  ///< request after clamping to the reachable range
  double t = 0.0;       ///< continuous pulse time (s), >= 0
  std::int64_t n = 0;   ///< floor(t / T)
  bool potentiation = true;
  bool clamped = false;   ///< negative or non-finite time forced to zero
  bool fallback = false;  ///< compensation guard tripped, closed-loop solve used
};

struct ProgramReport {
  std::uint64_t pulses_potentiation = 0;
  std::uint64_t pulses_depression = 0;
  std::uint64_t reads = 0;
  std::uint64_t cells_touched = 0;
  std::uint64_t compensated_cells = 0;
  std::uint64_t compensation_pulses = 0;
  std::uint64_t diagnostics = 0;  ///< clamped solves, compensation fallbacks

  std::uint64_t pulses() const { return pulses_potentiation + pulses_depression; }
  ProgramReport& operator+=(const ProgramReport& o);
};

/// Signed real pulse demand N * dg / 2; positive means potentiation.
double open_loop_pulse_demand(double delta_g, double n_coefficient);

std::int64_t floor_round(double n_real);
/// floor(n) + Bernoulli(frac(n)); unbiased for n >= 0.
std::int64_t stochastic_round(double n_real, RngStream& rng);

/// Expected state change for a weight change, at mean parameters.
double delta_omega_from_delta_g(double delta_g, const MappingConstants& mapping,
                                const DeviceParams& mean);

/// Inverts a read conductance to a state estimate using mean parameters.
double omega_from_conductance(double conductance, const DeviceParams& mean, double vr);

/// Exact pulse time that moves a mean device from `omega` by `delta_omega`.
PulseSolve closed_loop_pulse_time(double omega, double delta_omega, const PulsePair& pulses,
                                  const DeviceParams& mean);

/// Boundary-aware pulse time t_c. Falls back to closed_loop_pulse_time when
/// psi + 1 <= 0 or lambda == delta_omega.
PulseSolve compensated_pulse_time(double omega, double delta_omega, const PulsePair& pulses,
                                  const DeviceParams& mean);

/// Programs the whole array toward `delta_g` (rows x cols). Requires
/// exclusive access to `cb`. Cells are independent and may be processed on
/// `threads` workers without changing the result.
ProgramReport program(Crossbar& cb, const Matrix& delta_g, const SchemeConfig& scheme,
                      int threads = 1);

struct ReinitReport {
  ProgramReport program;
  int cycles = 0;
  bool converged = false;
  double initial_std = 0.0;
  double final_std = 0.0;
  std::vector<double> std_history;   ///< weight std after each cycle
  std::vector<double> mean_history;  ///< weight mean after each cycle
};

/// Iterative pulse-and-measure narrowing of the weight distribution.
ReinitReport reinitialize(Crossbar& cb, const SchemeConfig& scheme, double target_std);

/// Population std / mean of the read weights.
double weight_std(const Crossbar& cb);
double weight_mean(const Crossbar& cb);

}  // namespace xbar
