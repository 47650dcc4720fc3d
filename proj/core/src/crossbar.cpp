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

#include "xbar/crossbar.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace xbar {
namespace {

constexpr std::size_t kMinSeriesOrder = 3;
constexpr std::size_t kMaxSeriesOrder = 30;
constexpr double kSeriesTolerance = 1e-17;
constexpr const char* kSnapshotMagic = "xbar-crossbar-snapshot";
constexpr int kSnapshotVersion = 1;

}  // namespace

MappingConstants MappingConstants::from_mean(const DeviceParams& mean, double vr) {
  MappingConstants m;
  m.vr = vr;
  m.g_max_bar = conductance_at_full(mean, vr);
  m.g_min_bar = conductance_at_empty(mean, vr);
  if (!(m.g_max_bar > m.g_min_bar && m.g_min_bar > 0.0)) {
    throw std::invalid_argument("mapping: mean device needs G_max > G_min > 0");
  }
  const double span = m.g_max_bar - m.g_min_bar;
  m.a = 2.0 / span;
  m.b = (m.g_max_bar + m.g_min_bar) / span;
  return m;
}

Crossbar::Crossbar(const CrossbarConfig& config)
    : rows_(config.rows),
      cols_(config.cols),
      layer_(config.layer),
      seed_(config.seed),
      mean_(config.mean),
      variation_(config.variation),
      pulses_(config.pulses),
      mapping_(MappingConstants::from_mean(config.mean, config.vr)) {
  if (rows_ == 0 || cols_ == 0) throw std::invalid_argument("crossbar: dimensions must be >= 1");
  variation_.validate();
  const std::size_t n = rows_ * cols_;
  params_.resize(n);
  omega_.assign(n, std::clamp(config.initial_omega, 0.0, 1.0));
  g_full_.resize(n);
  g_empty_.resize(n);
  events_.assign(n, 0);
  weights_.resize(static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_));

  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) {
      RngStream rng({seed_, StreamDomain::kDeviceToDevice, layer_, static_cast<std::uint32_t>(r),
                     static_cast<std::uint32_t>(c), 0});
      params_[index(r, c)] = sample_device_params(mean_, variation_, rng);
    }
  }
  choose_series_order();
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) refresh_cell(r, c);
  }
}

static std::size_t required_series_order(double z) {
  std::size_t order = kMinSeriesOrder;
  double term = 1.0;  // z^p / p! relative to the leading z
  for (std::size_t p = 2; p <= kMaxSeriesOrder; ++p) {
    term *= z / static_cast<double>(p);
    order = p;
    if (term < kSeriesTolerance) break;
  }
  return std::max(order, kMinSeriesOrder);
}

void Crossbar::choose_series_order() {
  // Largest series argument over the array at the maximum input voltage.
  double z = 0.0;
  for (const auto& p : params_) z = std::max({z, p.delta, p.beta});
  coeff_.assign(required_series_order(z * kInputVoltageScale),
                Matrix::Zero(static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)));
}

void Crossbar::refresh_cell(std::size_t r, std::size_t c) {
  const std::size_t i = index(r, c);
  const DeviceParams& p = params_[i];
  const double w = omega_[i];
  g_full_[i] = conductance_at_full(p, mapping_.vr);
  g_empty_[i] = conductance_at_empty(p, mapping_.vr);
  const auto er = static_cast<Eigen::Index>(r);
  const auto ec = static_cast<Eigen::Index>(c);
  weights_(er, ec) = mapping_.weight(w * g_full_[i] + (1.0 - w) * g_empty_[i]);

  // sinh(dV) = sum_{p odd} d^p V^p / p!;  1 - e^{-bV} = sum_{p>=1} (-1)^{p+1} b^p V^p / p!
  double dpow = 1.0;
  double bpow = 1.0;
  for (std::size_t k = 1; k <= coeff_.size(); ++k) {
    const double kd = static_cast<double>(k);
    dpow *= p.delta / kd;
    bpow *= p.beta / kd;
    const double full = (k % 2 == 1) ? p.gamma * dpow : 0.0;
    const double empty = (k % 2 == 1 ? 1.0 : -1.0) * p.alpha * bpow;
    coeff_[k - 1](er, ec) = w * full + (1.0 - w) * empty;
  }
}

void Crossbar::set_omega(std::size_t r, std::size_t c, double omega) {
  omega_[index(r, c)] = std::clamp(omega, 0.0, 1.0);
  refresh_cell(r, c);
}

void Crossbar::set_params(std::size_t r, std::size_t c, const DeviceParams& p) {
  params_[index(r, c)] = p;
  const double z = std::max(p.delta, p.beta) * kInputVoltageScale;
  if (required_series_order(z) > coeff_.size()) {
    choose_series_order();
    for (std::size_t rr = 0; rr < rows_; ++rr) {
      for (std::size_t cc = 0; cc < cols_; ++cc) refresh_cell(rr, cc);
    }
    return;
  }
  refresh_cell(r, c);
}

double Crossbar::read_conductance(std::size_t r, std::size_t c) const {
  const std::size_t i = index(r, c);
  return omega_[i] * g_full_[i] + (1.0 - omega_[i]) * g_empty_[i];
}

Matrix Crossbar::forward_mac(const Matrix& x, MacDiagnostics* diag) const {
  if (static_cast<std::size_t>(x.cols()) != rows_) {
    throw std::invalid_argument("forward_mac: input width does not match crossbar rows");
  }
  Matrix v = x;
  std::size_t clamped = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double& e = v.data()[i];
    if (e < 0.0 || e > 1.0 || std::isnan(e)) {
      ++clamped;
      e = std::isnan(e) ? 0.0 : std::clamp(e, 0.0, 1.0);
    }
  }
  if (diag) diag->clamped_inputs += clamped;
  const Vector input_sum = v.rowwise().sum();
  v *= kInputVoltageScale;

  Matrix current = v * coeff_[0];
  Matrix vp = v;
  for (std::size_t k = 1; k < coeff_.size(); ++k) {
    vp.array() *= v.array();
    current.noalias() += vp * coeff_[k];
  }
  Matrix y = (mapping_.a / kInputVoltageScale) * current;
  y.colwise() -= mapping_.b * input_sum;
  return y;
}

Matrix Crossbar::forward_linear(const Matrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != rows_) {
    throw std::invalid_argument("forward_linear: input width does not match crossbar rows");
  }
  return x * weights_;
}

Crossbar init_crossbar(const CrossbarConfig& config) { return Crossbar(config); }

double weight_to_omega(double g, const DeviceParams& mean, const MappingConstants& mapping,
                       std::size_t* clamped) {
  if (g < -1.0 || g > 1.0) {
    if (clamped) ++*clamped;
    g = std::clamp(g, -1.0, 1.0);
  }
  const double vr = mapping.vr;
  const double conductance = mapping.conductance(g);
  const double empty = mean.alpha * -std::expm1(-mean.beta * vr);
  const double full = mean.gamma * std::sinh(mean.delta * vr);
  return std::clamp((conductance * vr - empty) / (full - empty), 0.0, 1.0);
}

void save_snapshot(const Crossbar& cb, std::ostream& out) {
  const auto& m = cb.mean_params();
  const auto& pp = cb.pulses();
  out << kSnapshotMagic << ' ' << kSnapshotVersion << '\n';
  out << "rows " << cb.rows() << " cols " << cb.cols() << " seed " << cb.seed() << " layer "
      << cb.layer() << '\n';
  out << std::setprecision(17);
  out << "vr " << cb.mapping().vr << '\n';
  out << "mean " << m.k << ' ' << m.mu1 << ' ' << m.mu2 << ' ' << m.gamma << ' ' << m.delta << ' '
      << m.alpha << ' ' << m.beta << '\n';
  out << "pulses " << pp.potentiation.voltage << ' ' << pp.potentiation.width << ' '
      << pp.depression.voltage << ' ' << pp.depression.width << '\n';
  out << "row col omega k mu1 mu2 gamma delta alpha beta\n";
  for (std::size_t r = 0; r < cb.rows(); ++r) {
    for (std::size_t c = 0; c < cb.cols(); ++c) {
      const auto& p = cb.params(r, c);
      out << r << ' ' << c << ' ' << cb.omega(r, c) << ' ' << p.k << ' ' << p.mu1 << ' ' << p.mu2
          << ' ' << p.gamma << ' ' << p.delta << ' ' << p.alpha << ' ' << p.beta << '\n';
    }
  }
}

namespace {

void expect_token(std::istream& in, const std::string& want) {
  std::string got;
  if (!(in >> got) || got != want) {
    throw std::runtime_error("snapshot: expected '" + want + "', found '" + got + "'");
  }
}

}  // namespace

Crossbar load_snapshot(std::istream& in, const VariationConfig& variation) {
  expect_token(in, kSnapshotMagic);
  int version = 0;
  in >> version;
  if (version != kSnapshotVersion) throw std::runtime_error("snapshot: unsupported version");
  CrossbarConfig cfg;
  expect_token(in, "rows");
  in >> cfg.rows;
  expect_token(in, "cols");
  in >> cfg.cols;
  expect_token(in, "seed");
  in >> cfg.seed;
  expect_token(in, "layer");
  in >> cfg.layer;
  expect_token(in, "vr");
  in >> cfg.vr;
  expect_token(in, "mean");
  in >> cfg.mean.k >> cfg.mean.mu1 >> cfg.mean.mu2 >> cfg.mean.gamma >> cfg.mean.delta >>
      cfg.mean.alpha >> cfg.mean.beta;
  expect_token(in, "pulses");
  in >> cfg.pulses.potentiation.voltage >> cfg.pulses.potentiation.width >>
      cfg.pulses.depression.voltage >> cfg.pulses.depression.width;
  if (!in) throw std::runtime_error("snapshot: malformed header");
  std::string header_line;
  std::getline(in, header_line);
  std::getline(in, header_line);

  // Build with variation off so parameters come from the file, not the RNG.
  VariationConfig off = variation;
  off.d2d_enabled = false;
  cfg.variation = off;
  Crossbar cb(cfg);
  for (std::size_t n = 0; n < cfg.rows * cfg.cols; ++n) {
    std::size_t r = 0, c = 0;
    double w = 0.0;
    DeviceParams p;
    if (!(in >> r >> c >> w >> p.k >> p.mu1 >> p.mu2 >> p.gamma >> p.delta >> p.alpha >> p.beta)) {
      throw std::runtime_error("snapshot: truncated cell table");
    }
    if (r >= cfg.rows || c >= cfg.cols) throw std::runtime_error("snapshot: cell index out of range");
    cb.set_params(r, c, p);
    cb.set_omega(r, c, w);
  }
  cb.set_variation(variation);
  return cb;
}

}  // namespace xbar
