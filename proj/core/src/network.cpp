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

#include "xbar/network.hpp"

#include "xbar/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace xbar {
namespace {

constexpr std::size_t kNoCrossbar = std::numeric_limits<std::size_t>::max();

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

Shape3 conv_output(Shape3 in, const LayerSpec& l) {
  if (in.height < l.kernel_h || in.width < l.kernel_w) {
    throw std::invalid_argument("conv: kernel larger than input");
  }
  return {l.out_channels, (in.height - l.kernel_h) / l.stride + 1,
          (in.width - l.kernel_w) / l.stride + 1};
}

}  // namespace

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  LayerSpec l;
  l.kind = LayerKind::kDense;
  l.in = in;
  l.out = out;
  return l;
}

LayerSpec LayerSpec::conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                          std::size_t stride) {
  LayerSpec l;
  l.kind = LayerKind::kConv;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.kernel_h = kernel;
  l.kernel_w = kernel;
  l.stride = stride;
  return l;
}

LayerSpec LayerSpec::maxpool(std::size_t window) {
  LayerSpec l;
  l.kind = LayerKind::kMaxPool;
  l.window = window;
  return l;
}

LayerSpec LayerSpec::activation() {
  LayerSpec l;
  l.kind = LayerKind::kActivation;
  return l;
}

ModelSpec ModelSpec::mlp(std::span<const std::size_t> widths) {
  if (widths.size() < 2) throw std::invalid_argument("mlp: need at least input and output widths");
  ModelSpec spec;
  spec.input = {1, 1, widths.front()};
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (i > 0) spec.layers.push_back(LayerSpec::activation());
    spec.layers.push_back(LayerSpec::dense(widths[i], widths[i + 1]));
  }
  return spec;
}

ModelSpec ModelSpec::lenet5(Shape3 input, std::size_t classes) {
  ModelSpec spec;
  spec.input = input;
  spec.layers = {LayerSpec::conv(input.channels, 6, 5), LayerSpec::activation(), LayerSpec::maxpool(2),
                 LayerSpec::conv(6, 16, 5),             LayerSpec::activation(), LayerSpec::maxpool(2)};
  Shape3 s = input;
  s = conv_output(s, spec.layers[0]);
  s = {s.channels, s.height / 2, s.width / 2};
  s = conv_output(s, spec.layers[3]);
  s = {s.channels, s.height / 2, s.width / 2};
  spec.layers.push_back(LayerSpec::dense(s.size(), 120));
  spec.layers.push_back(LayerSpec::activation());
  spec.layers.push_back(LayerSpec::dense(120, classes));
  return spec;
}

ModelSpec ModelSpec::parse(std::string_view text, Shape3 input) {
  if (text == "lenet5") return lenet5(input);
  constexpr std::string_view kMlp = "mlp:";
  if (text.starts_with(kMlp)) {
    std::vector<std::size_t> widths;
    std::string_view rest = text.substr(kMlp.size());
    while (!rest.empty()) {
      const auto dash = rest.find('-');
      const std::string_view tok = rest.substr(0, dash);
      std::size_t v = 0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc{} || ptr != tok.data() + tok.size() || v == 0) {
        throw std::invalid_argument("model: bad layer width '" + std::string(tok) + "'");
      }
      widths.push_back(v);
      rest = dash == std::string_view::npos ? std::string_view{} : rest.substr(dash + 1);
    }
    return mlp(widths);
  }
  throw std::invalid_argument("model: expected 'mlp:<w0>-<w1>-...' or 'lenet5', got '" +
                              std::string(text) + "'");
}

NetworkModel::NetworkModel(ModelSpec spec, const HardwareConfig& hw) : spec_(std::move(spec)) {
  shapes_.push_back(spec_.input);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const Shape3 in = shapes_.back();
    CrossbarConfig cc;
    cc.mean = hw.mean;
    cc.variation = hw.variation;
    cc.pulses = hw.pulses;
    cc.vr = hw.vr;
    cc.seed = hw.seed;
    cc.layer = static_cast<std::uint32_t>(crossbars_.size());
    switch (l.kind) {
      case LayerKind::kDense:
        if (l.in != in.size()) {
          throw std::invalid_argument("dense layer " + std::to_string(i) + ": expects " +
                                      std::to_string(l.in) + " inputs, got " + std::to_string(in.size()));
        }
        cc.rows = l.in;
        cc.cols = l.out;
        shapes_.push_back({l.out, 1, 1});
        break;
      case LayerKind::kConv:
        if (l.in_channels != in.channels || l.stride == 0) {
          throw std::invalid_argument("conv layer " + std::to_string(i) + ": channel mismatch");
        }
        cc.rows = l.in_channels * l.kernel_h * l.kernel_w;
        cc.cols = l.out_channels;
        shapes_.push_back(conv_output(in, l));
        break;
      case LayerKind::kMaxPool:
        if (l.window == 0 || in.height < l.window || in.width < l.window) {
          throw std::invalid_argument("pool layer " + std::to_string(i) + ": bad window");
        }
        shapes_.push_back({in.channels, in.height / l.window, in.width / l.window});
        break;
      case LayerKind::kActivation:
        shapes_.push_back(in);
        break;
    }
    if (l.kind == LayerKind::kDense || l.kind == LayerKind::kConv) {
      xbar_of_.push_back(crossbars_.size());
      layer_of_.push_back(i);
      crossbars_.emplace_back(cc);
    } else {
      xbar_of_.push_back(kNoCrossbar);
    }
  }
  if (crossbars_.empty()) throw std::invalid_argument("model: no weight layers");
}

std::size_t NetworkModel::fan_in(std::size_t k) const { return crossbars_.at(k).rows(); }

std::size_t NetworkModel::fan_out(std::size_t k) const {
  const LayerSpec& l = spec_.layers[layer_of_.at(k)];
  if (l.kind == LayerKind::kConv) return l.out_channels * l.kernel_h * l.kernel_w;
  return crossbars_[k].cols();
}

std::size_t NetworkModel::total_cells() const {
  std::size_t n = 0;
  for (const auto& cb : crossbars_) n += cb.size();
  return n;
}

Matrix im2col(const Matrix& x, Shape3 in, std::size_t kh, std::size_t kw, std::size_t stride) {
  const std::size_t ho = (in.height - kh) / stride + 1;
  const std::size_t wo = (in.width - kw) / stride + 1;
  const std::size_t positions = ho * wo;
  const std::size_t k = in.channels * kh * kw;
  const std::size_t batch = static_cast<std::size_t>(x.rows());
  Matrix patches(idx(batch * positions), idx(k));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const Eigen::Index row = idx(b * positions + oy * wo + ox);
        for (std::size_t c = 0; c < in.channels; ++c) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::size_t src = c * in.height * in.width + (oy * stride + ky) * in.width + ox * stride + kx;
              patches(row, idx(c * kh * kw + ky * kw + kx)) = x(idx(b), idx(src));
            }
          }
        }
      }
    }
  }
  return patches;
}

Matrix col2im(const Matrix& patches, std::size_t batch, Shape3 in, std::size_t kh, std::size_t kw,
              std::size_t stride) {
  const std::size_t ho = (in.height - kh) / stride + 1;
  const std::size_t wo = (in.width - kw) / stride + 1;
  const std::size_t positions = ho * wo;
  Matrix out = Matrix::Zero(idx(batch), idx(in.size()));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const Eigen::Index row = idx(b * positions + oy * wo + ox);
        for (std::size_t c = 0; c < in.channels; ++c) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::size_t dst = c * in.height * in.width + (oy * stride + ky) * in.width + ox * stride + kx;
              out(idx(b), idx(dst)) += patches(row, idx(c * kh * kw + ky * kw + kx));
            }
          }
        }
      }
    }
  }
  return out;
}

ForwardResult NetworkModel::forward(const Matrix& x, MacMode mode) const {
  if (static_cast<std::size_t>(x.cols()) != spec_.input.size()) {
    throw std::invalid_argument("forward: input width " + std::to_string(x.cols()) +
                                " does not match model input " + std::to_string(spec_.input.size()));
  }
  ForwardResult res;
  res.cache.resize(spec_.layers.size());
  const std::size_t batch = static_cast<std::size_t>(x.rows());
  Matrix a = x;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    LayerCache& cache = res.cache[i];
    const Shape3 in = shapes_[i];
    const Shape3 out = shapes_[i + 1];
    switch (l.kind) {
      case LayerKind::kDense: {
        const Crossbar& cb = crossbars_[xbar_of_[i]];
        Matrix z = mode == MacMode::kExact ? cb.forward_mac(a, &res.diag) : cb.forward_linear(a);
        cache.input = std::move(a);
        a = std::move(z);
        break;
      }
      case LayerKind::kConv: {
        const Crossbar& cb = crossbars_[xbar_of_[i]];
        cache.patches = im2col(a, in, l.kernel_h, l.kernel_w, l.stride);
        const Matrix y = mode == MacMode::kExact ? cb.forward_mac(cache.patches, &res.diag)
                                                 : cb.forward_linear(cache.patches);
        const std::size_t positions = out.height * out.width;
        a.resize(idx(batch), idx(out.size()));
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t co = 0; co < out.channels; ++co) {
            for (std::size_t p = 0; p < positions; ++p) {
              a(idx(b), idx(co * positions + p)) = y(idx(b * positions + p), idx(co));
            }
          }
        }
        break;
      }
      case LayerKind::kMaxPool: {
        Matrix pooled(idx(batch), idx(out.size()));
        cache.argmax.resize(batch * out.size());
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < out.channels; ++c) {
            for (std::size_t oy = 0; oy < out.height; ++oy) {
              for (std::size_t ox = 0; ox < out.width; ++ox) {
                Eigen::Index best = -1;
                double best_v = -std::numeric_limits<double>::infinity();
                for (std::size_t dy = 0; dy < l.window; ++dy) {
                  for (std::size_t dx = 0; dx < l.window; ++dx) {
                    const auto src = idx(c * in.height * in.width + (oy * l.window + dy) * in.width +
                                         ox * l.window + dx);
                    if (a(idx(b), src) > best_v) {
                      best_v = a(idx(b), src);
                      best = src;
                    }
                  }
                }
                const std::size_t o = c * out.height * out.width + oy * out.width + ox;
                pooled(idx(b), idx(o)) = best_v;
                cache.argmax[b * out.size() + o] = best;
              }
            }
          }
        }
        a = std::move(pooled);
        break;
      }
      case LayerKind::kActivation:
        cache.pre = a;
        a = a.cwiseMax(0.0).cwiseMin(1.0);
        break;
    }
  }
  res.logits = std::move(a);
  return res;
}

double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* grad) {
  const Eigen::Index batch = logits.rows();
  if (static_cast<std::size_t>(batch) != labels.size()) {
    throw std::invalid_argument("loss: label count does not match batch");
  }
  Matrix p = logits;
  double loss = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const double mx = p.row(b).maxCoeff();
    p.row(b).array() = (p.row(b).array() - mx).exp();
    const double z = p.row(b).sum();
    p.row(b) /= z;
    loss -= std::log(std::max(p(b, labels[static_cast<std::size_t>(b)]), 1e-300));
  }
  if (grad) {
    *grad = p;
    for (Eigen::Index b = 0; b < batch; ++b) (*grad)(b, labels[static_cast<std::size_t>(b)]) -= 1.0;
    *grad /= static_cast<double>(batch);
  }
  return loss / static_cast<double>(batch);
}

std::vector<Matrix> NetworkModel::backward(const ForwardResult& fwd, std::span<const int> labels) const {
  if (fwd.cache.size() != spec_.layers.size()) throw std::invalid_argument("backward: missing forward cache");
  std::vector<Matrix> grads(crossbars_.size());
  Matrix d;
  softmax_cross_entropy(fwd.logits, labels, &d);
  const std::size_t batch = static_cast<std::size_t>(fwd.logits.rows());

  for (std::size_t i = spec_.layers.size(); i-- > 0;) {
    const LayerSpec& l = spec_.layers[i];
    const LayerCache& cache = fwd.cache[i];
    const Shape3 in = shapes_[i];
    const Shape3 out = shapes_[i + 1];
    switch (l.kind) {
      case LayerKind::kDense: {
        const std::size_t k = xbar_of_[i];
        grads[k] = cache.input.transpose() * d;
        if (i > 0) d = d * crossbars_[k].effective_weights().transpose();
        break;
      }
      case LayerKind::kConv: {
        const std::size_t k = xbar_of_[i];
        const std::size_t positions = out.height * out.width;
        Matrix dy(idx(batch * positions), idx(out.channels));
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t co = 0; co < out.channels; ++co) {
            for (std::size_t p = 0; p < positions; ++p) {
              dy(idx(b * positions + p), idx(co)) = d(idx(b), idx(co * positions + p));
            }
          }
        }
        grads[k] = cache.patches.transpose() * dy;
        if (i > 0) {
          const Matrix dp = dy * crossbars_[k].effective_weights().transpose();
          d = col2im(dp, batch, in, l.kernel_h, l.kernel_w, l.stride);
        }
        break;
      }
      case LayerKind::kMaxPool: {
        Matrix din = Matrix::Zero(idx(batch), idx(in.size()));
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t o = 0; o < out.size(); ++o) {
            din(idx(b), cache.argmax[b * out.size() + o]) += d(idx(b), idx(o));
          }
        }
        d = std::move(din);
        break;
      }
      case LayerKind::kActivation:
        d = d.cwiseProduct(
            ((cache.pre.array() > 0.0) && (cache.pre.array() < 1.0)).cast<double>().matrix());
        break;
    }
  }
  return grads;
}

void NetworkModel::write_weights(std::size_t k, const Matrix& g) {
  Crossbar& cb = crossbars_.at(k);
  if (static_cast<std::size_t>(g.rows()) != cb.rows() || static_cast<std::size_t>(g.cols()) != cb.cols()) {
    throw std::invalid_argument("write_weights: shape mismatch");
  }
  for (std::size_t r = 0; r < cb.rows(); ++r) {
    for (std::size_t c = 0; c < cb.cols(); ++c) {
      cb.set_omega(r, c, weight_to_omega(g(idx(r), idx(c)), cb.mean_params(), cb.mapping()));
    }
  }
}

void NetworkModel::initialize_glorot(std::uint64_t seed) {
  for (std::size_t k = 0; k < crossbars_.size(); ++k) {
    const Crossbar& cb = crossbars_[k];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in(k) + fan_out(k)));
    RngStream rng({seed, StreamDomain::kWeightInit, static_cast<std::uint32_t>(k), 0, 0, 0});
    Matrix g(idx(cb.rows()), idx(cb.cols()));
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = limit * (2.0 * rng.uniform() - 1.0);
    }
    write_weights(k, g);
  }
}

double NetworkModel::default_target_std(std::size_t k) const {
  return std::sqrt(2.0 / static_cast<double>(fan_in(k) + fan_out(k)));
}

MomentumState::MomentumState(const NetworkModel& model, double v_) : v(v_) {
  for (std::size_t k = 0; k < model.crossbar_count(); ++k) {
    const Crossbar& cb = model.crossbar(k);
    m.push_back(Matrix::Zero(idx(cb.rows()), idx(cb.cols())));
  }
}

Matrix momentum_update(Matrix& m, const Matrix& grad, double v, double eta) {
  if (m.rows() != grad.rows() || m.cols() != grad.cols()) {
    throw std::invalid_argument("momentum_update: shape mismatch");
  }
  m = v * m + (1.0 - v) * grad;
  return -eta * m;
}

std::vector<Matrix> momentum_update(MomentumState& state, const std::vector<Matrix>& grads,
                                    double eta) {
  if (grads.size() != state.m.size()) throw std::invalid_argument("momentum_update: layer count mismatch");
  std::vector<Matrix> u;
  u.reserve(grads.size());
  for (std::size_t k = 0; k < grads.size(); ++k) u.push_back(momentum_update(state.m[k], grads[k], state.v, eta));
  return u;
}

void TrainConfig::validate() const {
  if (!(eta > 0.0)) throw std::invalid_argument("train: eta must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train: momentum must be in [0, 1)");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (eval_batch == 0) throw std::invalid_argument("train: eval_batch must be >= 1");
  scheme.validate();
}

int TrainReport::convergence_epoch(double window) const {
  const double final_acc = final_accuracy();
  for (const auto& e : epochs) {
    if (e.test_accuracy >= final_acc - window) return e.epoch;
  }
  return 0;
}

double evaluate(const NetworkModel& model, const Dataset& ds, MacMode mode, std::size_t batch) {
  if (ds.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::size_t correct = 0;
  std::vector<std::size_t> ids;
  for (std::size_t start = 0; start < ds.size(); start += batch) {
    const std::size_t end = std::min(ds.size(), start + batch);
    ids.resize(end - start);
    for (std::size_t i = start; i < end; ++i) ids[i - start] = i;
    const Matrix logits = model.forward(ds.gather(ids), mode).logits;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Eigen::Index best = 0;
      logits.row(idx(i)).maxCoeff(&best);
      if (best == ds.labels[ids[i]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

TrainReport train(NetworkModel& model, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  TrainReport rep;
  ProgramReport cumulative;

  if (cfg.reinit) {
    for (std::size_t k = 0; k < model.crossbar_count(); ++k) {
      const double target =
          cfg.scheme.reinit_target_std > 0.0 ? cfg.scheme.reinit_target_std : model.default_target_std(k);
      rep.reinit.push_back(reinitialize(model.crossbar(k), cfg.scheme, target));
      cumulative += rep.reinit.back().program;
    }
  }
  rep.initial_accuracy = evaluate(model, test_set, cfg.mac, cfg.eval_batch);

  MomentumState momentum(model, cfg.momentum);
  const double total_cells = static_cast<double>(model.total_cells());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for (const auto& ids : batches(train_set.size(), cfg.batch_size, cfg.seed, static_cast<std::uint64_t>(epoch))) {
      const Matrix x = train_set.gather(ids);
      const std::vector<int> labels = train_set.gather_labels(ids);
      const ForwardResult fwd = model.forward(x, cfg.mac);
      rec.clamped_inputs += fwd.diag.clamped_inputs;
      loss_sum += softmax_cross_entropy(fwd.logits, labels, nullptr) * static_cast<double>(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        Eigen::Index best = 0;
        fwd.logits.row(idx(i)).maxCoeff(&best);
        if (best == labels[i]) ++correct;
      }
      seen += ids.size();

      const std::vector<Matrix> grads = model.backward(fwd, labels);
      const std::vector<Matrix> updates = momentum_update(momentum, grads, cfg.eta);
      ProgramReport it;
      for (std::size_t k = 0; k < model.crossbar_count(); ++k) {
        it += program(model.crossbar(k), updates[k], cfg.scheme, cfg.threads);
      }
      const double frac = static_cast<double>(it.cells_touched) / total_cells;
      rep.touched_fraction.push_back(frac);
      rec.mean_touched_fraction += frac;
      rec.max_touched_fraction = std::max(rec.max_touched_fraction, frac);
      rec.epoch_program += it;
      ++rec.iterations;
    }
    if (rec.iterations > 0) rec.mean_touched_fraction /= static_cast<double>(rec.iterations);
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    cumulative += rec.epoch_program;
    rec.cumulative = cumulative;
    rec.test_accuracy = evaluate(model, test_set, cfg.mac, cfg.eval_batch);
    rep.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return rep;
}

}  // namespace xbar
