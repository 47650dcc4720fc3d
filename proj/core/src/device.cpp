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

#include "xbar/device.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xbar {
namespace {

constexpr int kMaxRedraws = 16;
constexpr double kClampFraction = 1e-3;

double draw_positive(double center, double sigma, double mean_value, RngStream& rng) {
  if (sigma <= 0.0) return center;
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    const double v = center + sigma * rng.normal();
    if (v > 0.0) return v;
  }
  return mean_value * kClampFraction;
}

}  // namespace

void VariationConfig::validate() const {
  for (double f : d2d_fraction.as_array()) {
    if (f < 0.0) throw std::invalid_argument("variation: d2d fractions must be >= 0");
  }
  if (p2p_ratio < 0.0 || d2d_scale < 0.0 || p2p_scale < 0.0 || read_noise < 0.0) {
    throw std::invalid_argument("variation: ratios and scales must be >= 0");
  }
}

DeviceParams sample_device_params(const DeviceParams& mean, const VariationConfig& var,
                                  RngStream& rng) {
  if (!var.d2d_enabled) return mean;
  const auto m = mean.as_array();
  const auto frac = var.d2d_fraction.as_array();
  std::array<double, DeviceParams::kFieldCount> out{};
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = draw_positive(m[i], m[i] * frac[i] * var.d2d_scale, m[i], rng);
  }
  return DeviceParams::from_array(out);
}

DeviceParams perturb_p2p(const DeviceParams& base, const DeviceParams& mean,
                         const VariationConfig& var, RngStream& rng) {
  if (!var.p2p_enabled) return base;
  const auto b = base.as_array();
  const auto m = mean.as_array();
  const auto frac = var.d2d_fraction.as_array();
  std::array<double, DeviceParams::kFieldCount> out{};
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double sigma = m[i] * frac[i] * var.p2p_ratio * var.p2p_scale;
    out[i] = draw_positive(b[i], sigma, m[i], rng);
  }
  return DeviceParams::from_array(out);
}

double current(const DeviceParams& p, DeviceState s, double v) {
  return s.omega * p.gamma * std::sinh(p.delta * v) +
         (1.0 - s.omega) * p.alpha * (1.0 - std::exp(-p.beta * v));
}

double read_conductance(const DeviceParams& p, DeviceState s, double vr) {
  return current(p, s, vr) / vr;
}

double conductance_at_full(const DeviceParams& p, double vr) {
  return p.gamma * std::sinh(p.delta * vr) / vr;
}

double conductance_at_empty(const DeviceParams& p, double vr) {
  return p.alpha * -std::expm1(-p.beta * vr) / vr;
}

double rate_coefficient(const DeviceParams& p, double v) {
  if (v == 0.0) throw std::invalid_argument("rate_coefficient: zero voltage has no programming effect");
  return p.k * (std::exp(-p.mu1 * v) - std::exp(p.mu2 * v));
}

double evolve_state(double omega, double xi, double width, bool potentiating) {
  double next = omega;
  if (potentiating) {
    const double gap = 1.0 - omega;
    const double denom = 1.0 + gap * xi * width;
    next = denom > 0.0 ? 1.0 - gap / denom : 1.0;
  } else {
    const double denom = 1.0 - omega * xi * width;
    next = denom > 0.0 ? omega / denom : 0.0;
  }
  if (!std::isfinite(next)) return omega;
  return std::clamp(next, 0.0, 1.0);
}

DeviceState apply_pulse(DeviceState s, const DeviceParams& p, const PulseSpec& pulse) {
  const double xi = rate_coefficient(p, pulse.voltage);
  return {evolve_state(s.omega, xi, pulse.width, pulse.potentiates())};
}

DeviceState apply_pulse(DeviceState s, const DeviceParams& p, const PulseSpec& pulse,
                        const DeviceParams& mean, const VariationConfig& var, RngStream& rng) {
  return apply_pulse(s, perturb_p2p(p, mean, var, rng), pulse);
}

}  // namespace xbar
