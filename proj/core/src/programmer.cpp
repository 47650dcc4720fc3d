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

#include "xbar/programmer.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>

namespace xbar {
namespace {

constexpr double kReachableFraction = 0.999;

/// Lazily keyed per-cell streams. A cell consumes one event id per program
/// call, and only if it actually needs randomness.
class CellStreams {
 public:
  CellStreams(Crossbar& cb, std::size_t r, std::size_t c) : cb_(cb), r_(r), c_(c) {}

  RngStream& stream(StreamDomain domain) {
    auto& slot = slot_for(domain);
    if (!slot) {
      slot.emplace(StreamKey{cb_.seed(), domain, cb_.layer(), static_cast<std::uint32_t>(r_),
                             static_cast<std::uint32_t>(c_), event()});
    }
    return *slot;
  }

 private:
  std::uint32_t event() {
    if (!event_) event_ = cb_.next_event(r_, c_);
    return *event_;
  }
  std::optional<RngStream>& slot_for(StreamDomain d) {
    switch (d) {
      case StreamDomain::kRounding: return rounding_;
      case StreamDomain::kReadNoise: return read_;
      default: return p2p_;
    }
  }

  Crossbar& cb_;
  std::size_t r_;
  std::size_t c_;
  std::optional<std::uint32_t> event_;
  std::optional<RngStream> rounding_;
  std::optional<RngStream> p2p_;
  std::optional<RngStream> read_;
};

double read_cell(Crossbar& cb, std::size_t r, std::size_t c, CellStreams& streams) {
  double g = cb.read_conductance(r, c);
  const double noise = cb.variation().read_noise;
  if (noise > 0.0) g *= 1.0 + noise * streams.stream(StreamDomain::kReadNoise).normal();
  return g;
}

/// Applies `count` identical pulses. Without jitter the dynamics are
/// autonomous, so `count` pulses equal one pulse of `count` times the width.
void drive_pulses(Crossbar& cb, std::size_t r, std::size_t c, const PulseSpec& pulse,
                  std::int64_t count, CellStreams& streams) {
  if (count <= 0) return;
  DeviceState s{cb.omega(r, c)};
  const DeviceParams& p = cb.params(r, c);
  if (!cb.variation().p2p_enabled) {
    s = apply_pulse(s, p, PulseSpec{pulse.voltage, pulse.width * static_cast<double>(count)});
  } else {
    RngStream& rng = streams.stream(StreamDomain::kPulseToPulse);
    for (std::int64_t i = 0; i < count; ++i) {
      s = apply_pulse(s, p, pulse, cb.mean_params(), cb.variation(), rng);
    }
  }
  cb.set_omega(r, c, s.omega);
}

void drive_width(Crossbar& cb, std::size_t r, std::size_t c, const PulseSpec& pulse, double width,
                 CellStreams& streams) {
  DeviceState s{cb.omega(r, c)};
  const PulseSpec shaped{pulse.voltage, width};
  if (!cb.variation().p2p_enabled) {
    s = apply_pulse(s, cb.params(r, c), shaped);
  } else {
    s = apply_pulse(s, cb.params(r, c), shaped, cb.mean_params(), cb.variation(),
                    streams.stream(StreamDomain::kPulseToPulse));
  }
  cb.set_omega(r, c, s.omega);
}

void tally(ProgramReport& rep, bool potentiation, std::uint64_t n) {
  if (n == 0) return;
  (potentiation ? rep.pulses_potentiation : rep.pulses_depression) += n;
  ++rep.cells_touched;
}

std::int64_t round_demand(double magnitude, Rounding rounding, int max_pulses, CellStreams& streams) {
  magnitude = std::min(magnitude, static_cast<double>(max_pulses));
  switch (rounding) {
    case Rounding::kFloor: return floor_round(magnitude);
    case Rounding::kStochastic:
      if (magnitude <= 0.0) return 0;
      return stochastic_round(magnitude, streams.stream(StreamDomain::kRounding));
    case Rounding::kNone: break;
  }
  return 0;
}

/// Applies a solved pulse time under the configured rounding.
void apply_solve(Crossbar& cb, std::size_t r, std::size_t c, const PulseSolve& solve,
                 Rounding rounding, int max_pulses, CellStreams& streams, ProgramReport& rep) {
  if (solve.t <= 0.0) return;
  const PulseSpec& pulse = solve.potentiation ? cb.pulses().potentiation : cb.pulses().depression;
  if (rounding == Rounding::kNone) {
    drive_width(cb, r, c, pulse, std::min(solve.t, max_pulses * pulse.width), streams);
    tally(rep, solve.potentiation, 1);
    return;
  }
  const std::int64_t n = round_demand(solve.t / pulse.width, rounding, max_pulses, streams);
  drive_pulses(cb, r, c, pulse, n, streams);
  tally(rep, solve.potentiation, static_cast<std::uint64_t>(n));
}

void program_cell(Crossbar& cb, std::size_t r, std::size_t c, double dg,
                  const SchemeConfig& scheme, ProgramReport& rep) {
  CellStreams streams(cb, r, c);
  const bool closed = scheme.loop_mode == LoopMode::kClosed;
  if (!closed && !scheme.compensation && dg == 0.0) return;

  std::optional<double> omega_read;
  if (closed || scheme.compensation) {
    ++rep.reads;
    omega_read = omega_from_conductance(read_cell(cb, r, c, streams), cb.mean_params(),
                                        cb.mapping().vr);
  }
  if (dg == 0.0) return;

  if (scheme.compensation && (scheme.compensation_full_range || *omega_read < scheme.band_low ||
                              *omega_read > scheme.band_high)) {
    const double dw = delta_omega_from_delta_g(dg, cb.mapping(), cb.mean_params());
    const PulseSolve solve = compensated_pulse_time(*omega_read, dw, cb.pulses(), cb.mean_params());
    if (solve.clamped || solve.fallback) ++rep.diagnostics;
    ++rep.compensated_cells;
    const std::uint64_t before = rep.pulses();
    // t_c is floored to whole pulses by construction.
    apply_solve(cb, r, c, solve, Rounding::kFloor, scheme.max_pulses, streams, rep);
    rep.compensation_pulses += rep.pulses() - before;
    return;
  }

  if (closed) {
    const double dw = delta_omega_from_delta_g(dg, cb.mapping(), cb.mean_params());
    const PulseSolve solve = closed_loop_pulse_time(*omega_read, dw, cb.pulses(), cb.mean_params());
    if (solve.clamped) ++rep.diagnostics;
    apply_solve(cb, r, c, solve, scheme.rounding, scheme.max_pulses, streams, rep);
    return;
  }

  const double demand = open_loop_pulse_demand(dg, scheme.n_coefficient);
  const bool potentiation = demand > 0.0;
  const PulseSpec& pulse = potentiation ? cb.pulses().potentiation : cb.pulses().depression;
  const double magnitude = std::min(std::abs(demand), static_cast<double>(scheme.max_pulses));
  if (scheme.rounding == Rounding::kNone) {
    drive_width(cb, r, c, pulse, magnitude * pulse.width, streams);
    tally(rep, potentiation, 1);
    return;
  }
  const std::int64_t n = round_demand(magnitude, scheme.rounding, scheme.max_pulses, streams);
  drive_pulses(cb, r, c, pulse, n, streams);
  tally(rep, potentiation, static_cast<std::uint64_t>(n));
}

}  // namespace

LoopMode parse_loop_mode(std::string_view s) {
  if (s == "open") return LoopMode::kOpen;
  if (s == "closed") return LoopMode::kClosed;
  throw std::invalid_argument("unknown loop mode '" + std::string(s) + "' (open|closed)");
}

Rounding parse_rounding(std::string_view s) {
  if (s == "floor") return Rounding::kFloor;
  if (s == "stochastic") return Rounding::kStochastic;
  if (s == "none") return Rounding::kNone;
  throw std::invalid_argument("unknown rounding '" + std::string(s) + "' (floor|stochastic|none)");
}

ReinitMode parse_reinit_mode(std::string_view s) {
  if (s == "uniform") return ReinitMode::kUniform;
  if (s == "gaussian") return ReinitMode::kGaussian;
  throw std::invalid_argument("unknown reinit mode '" + std::string(s) + "' (uniform|gaussian)");
}

std::string_view to_string(LoopMode m) { return m == LoopMode::kOpen ? "open" : "closed"; }

std::string_view to_string(Rounding r) {
  switch (r) {
    case Rounding::kFloor: return "floor";
    case Rounding::kStochastic: return "stochastic";
    case Rounding::kNone: return "none";
  }
  return "?";
}

std::string_view to_string(ReinitMode m) {
  return m == ReinitMode::kUniform ? "uniform" : "gaussian";
}

void SchemeConfig::validate() const {
  if (!(n_coefficient > 0.0)) throw std::invalid_argument("scheme: n_coefficient must be > 0");
  if (!(band_low >= 0.0 && band_low < band_high && band_high <= 1.0)) {
    throw std::invalid_argument("scheme: compensation band needs 0 <= low < high <= 1");
  }
  if (!(reinit_epsilon > 0.0)) throw std::invalid_argument("scheme: reinit_epsilon must be > 0");
  if (reinit_max_cycles < 0) throw std::invalid_argument("scheme: reinit_max_cycles must be >= 0");
  if (max_pulses < 1) throw std::invalid_argument("scheme: max_pulses must be >= 1");
}

ProgramReport& ProgramReport::operator+=(const ProgramReport& o) {
  pulses_potentiation += o.pulses_potentiation;
  pulses_depression += o.pulses_depression;
  reads += o.reads;
  cells_touched += o.cells_touched;
  compensated_cells += o.compensated_cells;
  compensation_pulses += o.compensation_pulses;
  diagnostics += o.diagnostics;
  return *this;
}

double open_loop_pulse_demand(double delta_g, double n_coefficient) {
  return n_coefficient * delta_g / 2.0;
}

std::int64_t floor_round(double n_real) {
  if (!(n_real > 0.0)) return 0;
  return static_cast<std::int64_t>(std::floor(n_real));
}

std::int64_t stochastic_round(double n_real, RngStream& rng) {
  if (!(n_real > 0.0)) return 0;
  const double whole = std::floor(n_real);
  const double frac = n_real - whole;
  return static_cast<std::int64_t>(whole) + (rng.bernoulli(frac) ? 1 : 0);
}

double delta_omega_from_delta_g(double delta_g, const MappingConstants& mapping,
                                const DeviceParams& mean) {
  const double vr = mapping.vr;
  const double span = mean.gamma * std::sinh(mean.delta * vr) + mean.alpha * std::expm1(-mean.beta * vr);
  return delta_g * vr / (mapping.a * span);
}

double omega_from_conductance(double conductance, const DeviceParams& mean, double vr) {
  const double empty = mean.alpha * -std::expm1(-mean.beta * vr);
  const double full = mean.gamma * std::sinh(mean.delta * vr);
  return std::clamp((conductance * vr - empty) / (full - empty), 0.0, 1.0);
}

PulseSolve closed_loop_pulse_time(double omega, double delta_omega, const PulsePair& pulses,
                                  const DeviceParams& mean) {
  PulseSolve s;
  s.potentiation = delta_omega >= 0.0;
  const PulseSpec& pulse = s.potentiation ? pulses.potentiation : pulses.depression;
  s.xi = rate_coefficient(mean, pulse.voltage);
  s.lambda = s.potentiation ? 1.0 - omega : -omega;
  s.psi = pulse.width * s.xi * s.lambda;
  // The dynamics only approach the boundary asymptotically.
  s.delta_omega = s.potentiation ? std::min(delta_omega, kReachableFraction * s.lambda)
                                 : std::max(delta_omega, kReachableFraction * s.lambda);
  if (s.delta_omega == 0.0 || s.lambda == 0.0) {
    s.delta_omega = 0.0;
    return s;
  }
  const double t = s.delta_omega / (s.xi * s.lambda * (s.lambda - s.delta_omega));
  if (!std::isfinite(t) || t < 0.0) {
    s.clamped = true;
    return s;
  }
  s.t = t;
  s.n = static_cast<std::int64_t>(std::floor(t / pulse.width));
  return s;
}

PulseSolve compensated_pulse_time(double omega, double delta_omega, const PulsePair& pulses,
                                  const DeviceParams& mean) {
  PulseSolve s;
  s.potentiation = delta_omega >= 0.0;
  const PulseSpec& pulse = s.potentiation ? pulses.potentiation : pulses.depression;
  s.xi = rate_coefficient(mean, pulse.voltage);
  s.lambda = s.potentiation ? 1.0 - omega : -omega;
  s.psi = pulse.width * s.xi * s.lambda;
  s.delta_omega = s.potentiation ? std::min(delta_omega, kReachableFraction * s.lambda)
                                 : std::max(delta_omega, kReachableFraction * s.lambda);
  const double gap = s.lambda - s.delta_omega;
  if (s.psi + 1.0 <= 0.0 || gap == 0.0) {
    PulseSolve fb = closed_loop_pulse_time(omega, delta_omega, pulses, mean);
    fb.fallback = true;
    return fb;
  }
  const double dw = s.delta_omega;
  const double t = (dw + s.psi * (dw - s.lambda)) / (s.xi * s.lambda * (s.psi + 1.0) * gap);
  if (!std::isfinite(t) || t < 0.0) {
    s.clamped = true;
    return s;
  }
  s.n = static_cast<std::int64_t>(std::floor(t / pulse.width));
  s.t = static_cast<double>(s.n) * pulse.width;
  return s;
}

ProgramReport program(Crossbar& cb, const Matrix& delta_g, const SchemeConfig& scheme,
                      int threads) {
  if (static_cast<std::size_t>(delta_g.rows()) != cb.rows() ||
      static_cast<std::size_t>(delta_g.cols()) != cb.cols()) {
    throw std::invalid_argument("program: delta_g shape does not match crossbar");
  }
  const auto run_rows = [&](std::size_t begin, std::size_t end, ProgramReport& rep) {
    for (std::size_t r = begin; r < end; ++r) {
      for (std::size_t c = 0; c < cb.cols(); ++c) {
        program_cell(cb, r, c, delta_g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)),
                     scheme, rep);
      }
    }
  };

  ProgramReport total;
  const std::size_t workers =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, cb.rows());
  if (workers == 1) {
    run_rows(0, cb.rows(), total);
  } else {
    std::vector<ProgramReport> partial(workers);
    std::vector<std::jthread> pool;
    const std::size_t chunk = (cb.rows() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(cb.rows(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back([&, begin, end, w] { run_rows(begin, end, partial[w]); });
    }
    pool.clear();
    for (const auto& p : partial) total += p;
  }
  cb.add_pulses(total.pulses());
  return total;
}

double weight_mean(const Crossbar& cb) { return cb.effective_weights().mean(); }

double weight_std(const Crossbar& cb) {
  const Matrix& w = cb.effective_weights();
  const double mean = w.mean();
  return std::sqrt((w.array() - mean).square().mean());
}

ReinitReport reinitialize(Crossbar& cb, const SchemeConfig& scheme, double target_std) {
  if (!(target_std > 0.0)) throw std::invalid_argument("reinitialize: target std must be > 0");
  ReinitReport rep;
  // Step 1: read every weight.
  rep.program.reads += cb.size();
  rep.initial_std = weight_std(cb);
  rep.final_std = rep.initial_std;
  if (rep.initial_std <= target_std) {
    rep.converged = true;
    return rep;
  }
  const PulsePair& pulses = cb.pulses();
  std::vector<char> touched(cb.size(), 0);
  for (int cycle = 0; cycle < scheme.reinit_max_cycles; ++cycle) {
    // Step 2: one pulse toward zero for cells selected by the mode's rule.
    const Matrix weights = cb.effective_weights();
    for (std::size_t r = 0; r < cb.rows(); ++r) {
      for (std::size_t c = 0; c < cb.cols(); ++c) {
        const double g = weights(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        int direction = 0;  // +1 potentiate, -1 depress
        if (scheme.reinit_mode == ReinitMode::kGaussian) {
          direction = g >= 0.0 ? -1 : 1;
        } else if (g >= scheme.reinit_epsilon) {
          direction = -1;
        } else if (g <= -scheme.reinit_epsilon) {
          direction = 1;
        }
        if (direction == 0) continue;
        CellStreams streams(cb, r, c);
        drive_pulses(cb, r, c, direction > 0 ? pulses.potentiation : pulses.depression, 1, streams);
        (direction > 0 ? rep.program.pulses_potentiation : rep.program.pulses_depression) += 1;
        touched[r * cb.cols() + c] = 1;
      }
    }
    // Step 3: read back and measure the spread.
    rep.program.reads += cb.size();
    rep.cycles = cycle + 1;
    rep.final_std = weight_std(cb);
    rep.std_history.push_back(rep.final_std);
    rep.mean_history.push_back(weight_mean(cb));
    // Step 4: stop once the spread is narrow enough.
    if (rep.final_std <= target_std) {
      rep.converged = true;
      break;
    }
  }
  rep.program.cells_touched = static_cast<std::uint64_t>(std::count(touched.begin(), touched.end(), 1));
  cb.add_pulses(rep.program.pulses());
  return rep;
}

}  // namespace xbar
