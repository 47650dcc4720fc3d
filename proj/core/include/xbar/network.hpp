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
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xbar/crossbar.hpp"
#include "xbar/data.hpp"
#include "xbar/programmer.hpp"

namespace xbar {

struct Shape3 {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const Shape3&) const = default;
};

enum class LayerKind { kDense, kConv, kMaxPool, kActivation };

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t in = 0;  ///< dense fan-in
  std::size_t out = 0; ///< dense fan-out
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t window = 2;  ///< pooling window (= stride)

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                        std::size_t stride = 1);
  static LayerSpec maxpool(std::size_t window);
  static LayerSpec activation();
};

struct ModelSpec {
  Shape3 input;
  std::vector<LayerSpec> layers;

  /// Dense stack with a clamp activation between consecutive layers.
  static ModelSpec mlp(std::span<const std::size_t> widths);
  /// Two conv/pool stages followed by two dense layers.
  static ModelSpec lenet5(Shape3 input = {1, 28, 28}, std::size_t classes = 10);
  /// "mlp:784-256-10" or "lenet5"; `input` supplies image geometry for conv models.
  static ModelSpec parse(std::string_view text, Shape3 input = {1, 28, 28});
};

struct HardwareConfig {
  DeviceParams mean = DeviceParams::nominal();
  VariationConfig variation{};
  PulsePair pulses{};
  double vr = kDefaultReadVoltage;
  std::uint64_t seed = 1;
};

/// kExact drives the analog MAC; kLinear multiplies by the effective
/// weights, i.e. the software-equivalent network.
enum class MacMode { kExact, kLinear };

struct LayerCache {
  Matrix input;
  Matrix pre;      ///< activation layers: pre-activation values
  Matrix patches;  ///< conv layers: lowered input, (batch * positions) x (C kh kw)
  std::vector<Eigen::Index> argmax;  ///< pool layers: winning input feature per output
};

struct ForwardResult {
  Matrix logits;
  std::vector<LayerCache> cache;
  MacDiagnostics diag;
};

/// Layer stack whose dense and conv layers each own one crossbar.
class NetworkModel {
 public:
  NetworkModel(ModelSpec spec, const HardwareConfig& hw);

  const ModelSpec& spec() const { return spec_; }
  std::size_t crossbar_count() const { return crossbars_.size(); }
  Crossbar& crossbar(std::size_t k) { return crossbars_.at(k); }
  const Crossbar& crossbar(std::size_t k) const { return crossbars_.at(k); }
  std::size_t fan_in(std::size_t k) const;
  std::size_t fan_out(std::size_t k) const;
  std::size_t total_cells() const;
  std::size_t classes() const { return output_shape().size(); }
  Shape3 output_shape() const { return shapes_.back(); }

  ForwardResult forward(const Matrix& x, MacMode mode = MacMode::kExact) const;
  /// d(mean cross-entropy)/d(g_eff) for every crossbar, batch-averaged.
  std::vector<Matrix> backward(const ForwardResult& fwd, std::span<const int> labels) const;

  /// Sets each cell's state so a mean device would read `g` (no pulses counted).
  void write_weights(std::size_t k, const Matrix& g);
  /// Uniform(-s, s) weights with s = sqrt(6 / (fan_in + fan_out)).
  void initialize_glorot(std::uint64_t seed);
  /// Per-layer spread target for re-initialization: sqrt(2 / (fan_in + fan_out)).
  double default_target_std(std::size_t k) const;

 private:
  ModelSpec spec_;
  std::vector<Shape3> shapes_;         // shapes_[i] is the input to layer i; back() is output
  std::vector<std::size_t> xbar_of_;   // crossbar index per layer (or npos)
  std::vector<std::size_t> layer_of_;  // layer index per crossbar
  std::vector<Crossbar> crossbars_;
};

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* grad);

/// Lowers a batch of (C, H, W) inputs to one row per output position.
Matrix im2col(const Matrix& x, Shape3 in, std::size_t kh, std::size_t kw, std::size_t stride);
/// Adjoint of im2col: scatters patch gradients back to input positions.
Matrix col2im(const Matrix& patches, std::size_t batch, Shape3 in, std::size_t kh, std::size_t kw,
              std::size_t stride);

/// Per-synapse exponential moving average of gradients.
struct MomentumState {
  std::vector<Matrix> m;
  double v = 0.9;

  MomentumState() = default;
  MomentumState(const NetworkModel& model, double v);
};

/// m <- v m + (1 - v) grad; returns the requested weight change -eta m.
Matrix momentum_update(Matrix& m, const Matrix& grad, double v, double eta);
std::vector<Matrix> momentum_update(MomentumState& state, const std::vector<Matrix>& grads,
                                    double eta);

struct TrainConfig {
  double eta = 1.0;
  double momentum = 0.9;
  std::size_t batch_size = 100;
  int epochs = 1;
  SchemeConfig scheme{};
  std::uint64_t seed = 1;
  bool reinit = false;
  int threads = 1;
  MacMode mac = MacMode::kExact;
  std::size_t eval_batch = 500;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double test_accuracy = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  ProgramReport epoch_program;   ///< programming activity during this epoch
  ProgramReport cumulative;      ///< including re-initialization
  double mean_touched_fraction = 0.0;
  double max_touched_fraction = 0.0;
  std::size_t iterations = 0;
  std::size_t clamped_inputs = 0;
};

struct TrainReport {
  double initial_accuracy = 0.0;
  std::vector<ReinitReport> reinit;
  std::vector<EpochRecord> epochs;
  std::vector<double> touched_fraction;  ///< per iteration, all crossbars

  double final_accuracy() const { return epochs.empty() ? initial_accuracy : epochs.back().test_accuracy; }
  /// First epoch whose accuracy is within `window` of the final accuracy.
  int convergence_epoch(double window = 0.01) const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

double evaluate(const NetworkModel& model, const Dataset& ds, MacMode mode = MacMode::kExact,
                std::size_t batch = 500);

/// forward -> backward -> momentum -> program, per batch; test evaluation
/// after every epoch.
TrainReport train(NetworkModel& model, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace xbar
