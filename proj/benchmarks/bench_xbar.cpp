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

#include <cstdint>
#include <random>

#include <benchmark/benchmark.h>

#include "xbar/crossbar.hpp"
#include "xbar/device.hpp"
#include "xbar/programmer.hpp"

namespace {

xbar::Crossbar make_array(std::size_t rows, std::size_t cols, bool variation) {
  xbar::CrossbarConfig cfg;
  cfg.rows = rows;
  cfg.cols = cols;
  cfg.seed = 7;
  cfg.variation.d2d_enabled = variation;
  cfg.variation.p2p_enabled = variation;
  return xbar::init_crossbar(cfg);
}

xbar::Matrix random_inputs(std::size_t batch, std::size_t rows) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  xbar::Matrix x(batch, rows);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(gen);
  return x;
}

void BM_ApplyPulse(benchmark::State& state) {
  const auto p = xbar::DeviceParams::nominal();
  const xbar::PulsePair pulses;
  xbar::DeviceState s{0.05};
  bool up = true;
  for (auto _ : state) {
    s = xbar::apply_pulse(s, p, up ? pulses.potentiation : pulses.depression);
    if (s.omega > 0.95) up = false;
    if (s.omega < 0.05) up = true;
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_ApplyPulse);

void BM_ForwardMac(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto cols = static_cast<std::size_t>(state.range(1));
  const auto cb = make_array(rows, cols, true);
  const auto x = random_inputs(100, rows);
  for (auto _ : state) {
    xbar::Matrix y = cb.forward_mac(x);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * 100);
  state.counters["series_order"] = static_cast<double>(cb.series_order());
}
BENCHMARK(BM_ForwardMac)->Args({784, 256})->Args({256, 10})->Unit(benchmark::kMicrosecond);

void BM_ForwardLinear(benchmark::State& state) {
  const auto cb = make_array(784, 256, true);
  const auto x = random_inputs(100, 784);
  for (auto _ : state) {
    xbar::Matrix y = cb.forward_linear(x);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_ForwardLinear)->Unit(benchmark::kMicrosecond);

// Alternating-sign updates keep the states away from the rails.
void run_program(benchmark::State& state, const xbar::SchemeConfig& scheme) {
  auto cb = make_array(784, 256, true);
  const int threads = static_cast<int>(state.range(0));
  std::mt19937_64 gen(5);
  std::normal_distribution<double> n(0.0, 0.05);
  xbar::Matrix dg(784, 256);
  for (Eigen::Index i = 0; i < dg.size(); ++i) dg.data()[i] = n(gen);
  double sign = 1.0;
  std::uint64_t pulses = 0;
  for (auto _ : state) {
    const auto rep = xbar::program(cb, sign * dg, scheme, threads);
    pulses += rep.pulses();
    sign = -sign;
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cb.size()));
  state.counters["pulses_per_call"] = static_cast<double>(pulses) / static_cast<double>(state.iterations());
}

void BM_ProgramOpenStochastic(benchmark::State& state) {
  xbar::SchemeConfig s;
  run_program(state, s);
}
BENCHMARK(BM_ProgramOpenStochastic)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_ProgramClosedLoop(benchmark::State& state) {
  xbar::SchemeConfig s;
  s.loop_mode = xbar::LoopMode::kClosed;
  s.rounding = xbar::Rounding::kNone;
  run_program(state, s);
}
BENCHMARK(BM_ProgramClosedLoop)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_ProgramCompensated(benchmark::State& state) {
  xbar::SchemeConfig s;
  s.compensation = true;
  s.compensation_full_range = true;
  run_program(state, s);
}
BENCHMARK(BM_ProgramCompensated)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_Reinitialize(benchmark::State& state) {
  const xbar::SchemeConfig scheme;
  for (auto _ : state) {
    state.PauseTiming();
    auto cb = make_array(784, 256, true);
    state.ResumeTiming();
    const auto rep = xbar::reinitialize(cb, scheme, 0.0714);
    benchmark::DoNotOptimize(rep.cycles);
  }
}
BENCHMARK(BM_Reinitialize)->Unit(benchmark::kMillisecond)->Iterations(3);

}  // namespace

BENCHMARK_MAIN();
