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

#include "xbar/harness.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "xbar/rng.hpp"

namespace xbar {
namespace {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed keys share the size_t codec");

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("key '" + std::string(key) + "': bad value '" + std::string(value) + "', expected " +
                    std::string(expected));
}

template <class T>
T parse_number(std::string_view key, std::string_view v, std::string_view expected) {
  T out{};
  const char* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || ptr != end) bad_value(key, v, expected);
  return out;
}

void decode(std::string_view key, std::string_view v, double& out) {
  out = parse_number<double>(key, v, "a number");
  if (!std::isfinite(out)) bad_value(key, v, "a finite number");
}
void decode(std::string_view key, std::string_view v, int& out) {
  out = parse_number<int>(key, v, "an integer");
}
void decode(std::string_view key, std::string_view v, std::size_t& out) {
  out = parse_number<std::size_t>(key, v, "a non-negative integer");
}
void decode(std::string_view key, std::string_view v, bool& out) {
  if (v == "true" || v == "on" || v == "1") {
    out = true;
  } else if (v == "false" || v == "off" || v == "0") {
    out = false;
  } else {
    bad_value(key, v, "true|false");
  }
}
void decode(std::string_view, std::string_view v, std::string& out) { out = std::string(v); }
void decode(std::string_view, std::string_view v, std::filesystem::path& out) { out = std::string(v); }
void decode(std::string_view key, std::string_view v, std::vector<double>& out) {
  out.clear();
  if (v.empty()) return;
  for (auto item : split(v, ',')) {
    double d = 0.0;
    decode(key, item, d);
    out.push_back(d);
  }
}
void decode(std::string_view, std::string_view v, std::vector<std::string>& out) {
  out.clear();
  if (v.empty()) return;
  for (auto item : split(v, ',')) out.emplace_back(item);
}

template <class Enum, class Parser>
void decode_enum(std::string_view key, std::string_view v, Enum& out, Parser parse) {
  try {
    out = parse(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("key '" + std::string(key) + "': " + e.what());
  }
}
void decode(std::string_view k, std::string_view v, ExperimentKind& o) { decode_enum(k, v, o, parse_experiment_kind); }
void decode(std::string_view k, std::string_view v, InitMode& o) { decode_enum(k, v, o, parse_init_mode); }
void decode(std::string_view k, std::string_view v, MacMode& o) { decode_enum(k, v, o, parse_mac_mode); }
void decode(std::string_view k, std::string_view v, LoopMode& o) { decode_enum(k, v, o, parse_loop_mode); }
void decode(std::string_view k, std::string_view v, Rounding& o) { decode_enum(k, v, o, parse_rounding); }
void decode(std::string_view k, std::string_view v, ReinitMode& o) { decode_enum(k, v, o, parse_reinit_mode); }

std::string encode(double v) { return format_double(v); }
std::string encode(int v) { return std::to_string(v); }
std::string encode(std::size_t v) { return std::to_string(v); }
std::string encode(bool v) { return v ? "true" : "false"; }
std::string encode(const std::string& v) { return v; }
std::string encode(const std::filesystem::path& v) { return v.generic_string(); }
std::string encode(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}
std::string encode(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}
template <class Enum>
  requires std::is_enum_v<Enum>
std::string encode(Enum e) {
  return std::string(to_string(e));
}

struct Key {
  std::string name;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class Field>
Key make_key(std::string name, Field field) {
  Key k;
  k.name = name;
  k.set = [name, field](ExperimentConfig& c, std::string_view v) { decode(name, v, field(c)); };
  k.get = [field](const ExperimentConfig& c) { return encode(field(c)); };
  return k;
}

#define XBAR_KEY(name, expr) make_key(name, [](auto& c) -> auto& { return c.expr; })

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = [] {
    std::vector<Key> t = {
        XBAR_KEY("kind", kind),
        XBAR_KEY("model", model),
        XBAR_KEY("seed", seed),
        XBAR_KEY("out", out),
        XBAR_KEY("init", init),
        XBAR_KEY("data.source", data.source),
        XBAR_KEY("data.train_images", data.train_images),
        XBAR_KEY("data.train_labels", data.train_labels),
        XBAR_KEY("data.test_images", data.test_images),
        XBAR_KEY("data.test_labels", data.test_labels),
        XBAR_KEY("data.synthetic", data.synthetic),
        XBAR_KEY("data.synthetic_train", data.synthetic_train),
        XBAR_KEY("data.synthetic_test", data.synthetic_test),
        XBAR_KEY("data.train_limit", data.train_limit),
        XBAR_KEY("data.test_limit", data.test_limit),
        XBAR_KEY("device.k", hw.mean.k),
        XBAR_KEY("device.mu1", hw.mean.mu1),
        XBAR_KEY("device.mu2", hw.mean.mu2),
        XBAR_KEY("device.gamma", hw.mean.gamma),
        XBAR_KEY("device.delta", hw.mean.delta),
        XBAR_KEY("device.alpha", hw.mean.alpha),
        XBAR_KEY("device.beta", hw.mean.beta),
        XBAR_KEY("device.vr", hw.vr),
        XBAR_KEY("device.potentiation_voltage", hw.pulses.potentiation.voltage),
        XBAR_KEY("device.potentiation_width", hw.pulses.potentiation.width),
        XBAR_KEY("device.depression_voltage", hw.pulses.depression.voltage),
        XBAR_KEY("device.depression_width", hw.pulses.depression.width),
        XBAR_KEY("variation.d2d", hw.variation.d2d_enabled),
        XBAR_KEY("variation.p2p", hw.variation.p2p_enabled),
        XBAR_KEY("variation.d2d_scale", hw.variation.d2d_scale),
        XBAR_KEY("variation.p2p_scale", hw.variation.p2p_scale),
        XBAR_KEY("variation.p2p_ratio", hw.variation.p2p_ratio),
        XBAR_KEY("variation.read_noise", hw.variation.read_noise),
        XBAR_KEY("variation.d2d_fraction.k", hw.variation.d2d_fraction.k),
        XBAR_KEY("variation.d2d_fraction.mu1", hw.variation.d2d_fraction.mu1),
        XBAR_KEY("variation.d2d_fraction.mu2", hw.variation.d2d_fraction.mu2),
        XBAR_KEY("variation.d2d_fraction.gamma", hw.variation.d2d_fraction.gamma),
        XBAR_KEY("variation.d2d_fraction.delta", hw.variation.d2d_fraction.delta),
        XBAR_KEY("variation.d2d_fraction.alpha", hw.variation.d2d_fraction.alpha),
        XBAR_KEY("variation.d2d_fraction.beta", hw.variation.d2d_fraction.beta),
        XBAR_KEY("train.eta", train.eta),
        XBAR_KEY("train.momentum", train.momentum),
        XBAR_KEY("train.batch_size", train.batch_size),
        XBAR_KEY("train.epochs", train.epochs),
        XBAR_KEY("train.reinit", train.reinit),
        XBAR_KEY("train.threads", train.threads),
        XBAR_KEY("train.mac", train.mac),
        XBAR_KEY("train.eval_batch", train.eval_batch),
        XBAR_KEY("scheme.loop_mode", train.scheme.loop_mode),
        XBAR_KEY("scheme.rounding", train.scheme.rounding),
        XBAR_KEY("scheme.n_coefficient", train.scheme.n_coefficient),
        XBAR_KEY("scheme.compensation", train.scheme.compensation),
        XBAR_KEY("scheme.band_low", train.scheme.band_low),
        XBAR_KEY("scheme.band_high", train.scheme.band_high),
        XBAR_KEY("scheme.compensation_full_range", train.scheme.compensation_full_range),
        XBAR_KEY("scheme.reinit_mode", train.scheme.reinit_mode),
        XBAR_KEY("scheme.reinit_epsilon", train.scheme.reinit_epsilon),
        XBAR_KEY("scheme.reinit_target_std", train.scheme.reinit_target_std),
        XBAR_KEY("scheme.reinit_max_cycles", train.scheme.reinit_max_cycles),
        XBAR_KEY("scheme.max_pulses", train.scheme.max_pulses),
        XBAR_KEY("sweep.pulses", sweep.pulses),
        XBAR_KEY("sweep.start_omega", sweep.start_omega),
        XBAR_KEY("sweep.d2d_scales", sweep.d2d_scales),
        XBAR_KEY("sweep.devices", sweep.devices),
        XBAR_KEY("sweep.width_scales", sweep.width_scales),
        XBAR_KEY("sweep.alternating_pulses", sweep.alternating_pulses),
        XBAR_KEY("reinit_study.rows", reinit_study.rows),
        XBAR_KEY("reinit_study.cols", reinit_study.cols),
        XBAR_KEY("reinit_study.d2d_scales", reinit_study.d2d_scales),
        XBAR_KEY("compensation_study.samples", compensation_study.samples),
        XBAR_KEY("compensation_study.bins", compensation_study.bins),
        XBAR_KEY("compensation_study.max_delta_g", compensation_study.max_delta_g),
        XBAR_KEY("ablation.rows", ablation.rows),
        XBAR_KEY("ablation.baseline", ablation.baseline),
    };
    return t;
  }();
  return table;
}

#undef XBAR_KEY

const Key* find_key(std::string_view name) {
  for (const auto& k : key_table()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

bool known_row(std::string_view row) {
  const auto& rows = ablation_row_names();
  return std::find(rows.begin(), rows.end(), row) != rows.end();
}

std::ofstream open_output(const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
  return out;
}

void write_text(const std::filesystem::path& dir, const std::string& name, const std::string& text) {
  auto out = open_output(dir, name);
  out << text;
}

ExperimentConfig with_seed(const ExperimentConfig& in) {
  ExperimentConfig c = in;
  c.hw.seed = c.seed;
  c.train.seed = c.seed;
  return c;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

ExperimentKind parse_experiment_kind(std::string_view s) {
  if (s == "train") return ExperimentKind::kTrain;
  if (s == "device-sweep") return ExperimentKind::kDeviceSweep;
  if (s == "reinit-study") return ExperimentKind::kReinitStudy;
  if (s == "compensation-study") return ExperimentKind::kCompensationStudy;
  if (s == "ablation-matrix") return ExperimentKind::kAblationMatrix;
  throw std::invalid_argument("unknown experiment kind '" + std::string(s) +
                              "' (train|device-sweep|reinit-study|compensation-study|ablation-matrix)");
}

InitMode parse_init_mode(std::string_view s) {
  if (s == "auto") return InitMode::kAuto;
  if (s == "glorot") return InitMode::kGlorot;
  if (s == "device") return InitMode::kDevice;
  throw std::invalid_argument("unknown init mode '" + std::string(s) + "' (auto|glorot|device)");
}

MacMode parse_mac_mode(std::string_view s) {
  if (s == "exact") return MacMode::kExact;
  if (s == "linear") return MacMode::kLinear;
  throw std::invalid_argument("unknown mac mode '" + std::string(s) + "' (exact|linear)");
}

std::string_view to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kTrain: return "train";
    case ExperimentKind::kDeviceSweep: return "device-sweep";
    case ExperimentKind::kReinitStudy: return "reinit-study";
    case ExperimentKind::kCompensationStudy: return "compensation-study";
    case ExperimentKind::kAblationMatrix: return "ablation-matrix";
  }
  return "train";
}

std::string_view to_string(InitMode m) {
  switch (m) {
    case InitMode::kAuto: return "auto";
    case InitMode::kGlorot: return "glorot";
    case InitMode::kDevice: return "device";
  }
  return "auto";
}

std::string_view to_string(MacMode m) { return m == MacMode::kExact ? "exact" : "linear"; }

const std::vector<std::string>& ablation_row_names() {
  static const std::vector<std::string> names = {"ideal",         "p2p-only",      "d2d-only",
                                                 "open-loop-only", "rounding-only", "all-non-ideal",
                                                 "ssm",           "ssm-comp"};
  return names;
}

std::string format_double(double v) {
  if (v == 0.0) return "0";
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig::ExperimentConfig() { ablation.rows = ablation_row_names(); }

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  if (const Key* k = find_key(key)) {
    k->set(*this, value);
    return;
  }
  // ablation.<row>.<key>: per-row override, checked against a scratch copy.
  constexpr std::string_view kPrefix = "ablation.";
  if (key.starts_with(kPrefix)) {
    const std::string_view rest = key.substr(kPrefix.size());
    const auto dot = rest.find('.');
    const std::string_view row = rest.substr(0, dot);
    if (dot != std::string_view::npos && known_row(row)) {
      const std::string_view sub = rest.substr(dot + 1);
      if (sub.starts_with("ablation.") || sub.starts_with("data.") || sub == "kind" || sub == "out") {
        throw ConfigError("key '" + std::string(key) + "': '" + std::string(sub) +
                          "' cannot be overridden per row");
      }
      ExperimentConfig scratch;
      scratch.set(sub, value);
      ablation.overrides.push_back({std::string(row), std::string(sub), std::string(value)});
      return;
    }
  }
  throw ConfigError("unknown key '" + std::string(key) + "'");
}

std::string ExperimentConfig::echo() const {
  std::string out;
  for (const auto& k : key_table()) out += k.name + " = " + k.get(*this) + "\n";
  for (const auto& o : ablation.overrides) out += "ablation." + o.row + "." + o.key + " = " + o.value + "\n";
  return out;
}

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.push_back(k.name);
  return out;
}

void ExperimentConfig::validate() const {
  try {
    (void)ModelSpec::parse(model);
    hw.variation.validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (data.source != "idx" && data.source != "synthetic") {
    throw ConfigError("data.source must be idx or synthetic");
  }
  if (data.source == "synthetic") {
    try {
      (void)parse_synthetic_kind(data.synthetic);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("data.synthetic: ") + e.what());
    }
  }
  if (sweep.pulses < 1 || sweep.alternating_pulses < 0) throw ConfigError("sweep pulse counts must be positive");
  if (sweep.start_omega < 0.0 || sweep.start_omega > 1.0) throw ConfigError("sweep.start_omega must be in [0, 1]");
  for (double s : sweep.width_scales) {
    if (!(s > 0.0)) throw ConfigError("sweep.width_scales entries must be > 0");
  }
  for (double s : sweep.d2d_scales) {
    if (s < 0.0) throw ConfigError("sweep.d2d_scales entries must be >= 0");
  }
  for (double s : reinit_study.d2d_scales) {
    if (s < 0.0) throw ConfigError("reinit_study.d2d_scales entries must be >= 0");
  }
  if (reinit_study.rows == 0 || reinit_study.cols == 0) throw ConfigError("reinit_study dimensions must be >= 1");
  if (compensation_study.bins == 0) throw ConfigError("compensation_study.bins must be >= 1");
  if (!(compensation_study.max_delta_g >= 0.0)) throw ConfigError("compensation_study.max_delta_g must be >= 0");
  for (const auto& r : ablation.rows) {
    if (!known_row(r)) throw ConfigError("ablation.rows: unknown row '" + r + "'");
  }
  if (!known_row(ablation.baseline)) throw ConfigError("ablation.baseline: unknown row '" + ablation.baseline + "'");
}

void apply_config_text(ExperimentConfig& cfg, std::string_view text, std::string_view source) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = std::string(source) + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    try {
      cfg.set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

ExperimentConfig parse_config(std::string_view text, std::string_view source) {
  ExperimentConfig cfg;
  apply_config_text(cfg, text, source);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("--set '" + std::string(assignment) + "': expected key=value");
  }
  try {
    cfg.set(assignment.substr(0, eq), assignment.substr(eq + 1));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("--set: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training runs

DatasetPair load_datasets(const DataConfig& data, std::uint64_t seed) {
  DatasetPair out;
  if (data.source == "synthetic") {
    const SyntheticKind kind = parse_synthetic_kind(data.synthetic);
    out.train = synthetic_toy(kind, data.synthetic_train, seed);
    out.train.split = "train";
    out.test = synthetic_toy(kind, data.synthetic_test, splitmix64(seed));
    out.test.split = "test";
  } else {
    out.train = load_idx(data.train_images, data.train_labels, "train").head(data.train_limit);
    out.test = load_idx(data.test_images, data.test_labels, "test").head(data.test_limit);
  }
  out.train.validate();
  out.test.validate();
  return out;
}

NetworkModel build_model(const ExperimentConfig& cfg_in, const Dataset& train_set) {
  const ExperimentConfig cfg = with_seed(cfg_in);
  Shape3 input{1, train_set.height, train_set.width};
  if (input.size() != train_set.features()) input = {1, 1, train_set.features()};
  ModelSpec spec = ModelSpec::parse(cfg.model, input);
  std::size_t first_in = input.size();
  if (!spec.layers.empty() && spec.layers.front().kind == LayerKind::kDense) first_in = spec.layers.front().in;
  if (first_in != train_set.features()) {
    throw std::invalid_argument("model input " + std::to_string(first_in) + " does not match " +
                                std::to_string(train_set.features()) + " dataset features");
  }
  NetworkModel model(std::move(spec), cfg.hw);
  if (model.classes() != static_cast<std::size_t>(train_set.n_classes)) {
    throw std::invalid_argument("model has " + std::to_string(model.classes()) + " outputs but dataset has " +
                                std::to_string(train_set.n_classes) + " classes");
  }
  const bool glorot = cfg.init == InitMode::kGlorot ||
                      (cfg.init == InitMode::kAuto && !cfg.hw.variation.d2d_enabled);
  if (glorot) model.initialize_glorot(cfg.seed);
  return model;
}

std::vector<HistogramBin> weight_histogram(const NetworkModel& model, std::size_t bins) {
  constexpr double kLow = -1.5;
  constexpr double kHigh = 1.5;
  const double width = (kHigh - kLow) / static_cast<double>(bins);
  std::vector<HistogramBin> out;
  for (std::size_t k = 0; k < model.crossbar_count(); ++k) {
    std::vector<std::uint64_t> counts(bins, 0);
    const Matrix& w = model.crossbar(k).effective_weights();
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double pos = std::floor((w.data()[i] - kLow) / width);
      const auto b = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
      ++counts[b];
    }
    for (std::size_t b = 0; b < bins; ++b) {
      out.push_back({k, kLow + width * static_cast<double>(b), kLow + width * static_cast<double>(b + 1),
                     counts[b]});
    }
  }
  return out;
}

RunReport run_training(const ExperimentConfig& cfg_in, const DatasetPair* data, const EpochCallback& on_epoch) {
  const ExperimentConfig cfg = with_seed(cfg_in);
  cfg.validate();
  DatasetPair local;
  if (data == nullptr) {
    local = load_datasets(cfg.data, cfg.seed);
    data = &local;
  }
  NetworkModel model = build_model(cfg, data->train);

  RunReport rep;
  rep.name = cfg.out.filename().string();
  rep.config_echo = cfg_in.echo();
  const auto t0 = std::chrono::steady_clock::now();
  rep.train = train(model, data->train, data->test, cfg.train, on_epoch);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.weights = weight_histogram(model);

  if (!cfg.out.empty()) {
    write_text(cfg.out, "config.echo", rep.config_echo);
    auto report = open_output(cfg.out, "report.csv");
    write_report_csv(rep.train, report);
    auto pulses = open_output(cfg.out, "pulses.csv");
    write_pulses_csv(rep.train, pulses);
    auto touched = open_output(cfg.out, "touched.csv");
    write_touched_csv(rep.train, touched);
    auto weights = open_output(cfg.out, "weights_final.csv");
    write_weights_csv(rep.weights, weights);
  }
  return rep;
}

void write_report_csv(const TrainReport& rep, std::ostream& out) {
  out << "schema_version,epoch,test_accuracy,train_loss,train_accuracy,mean_touched_fraction,"
         "max_touched_fraction,iterations,clamped_inputs,cumulative_pulses,cumulative_reads\n";
  ProgramReport reinit;
  for (const auto& r : rep.reinit) reinit += r.program;
  out << kCsvSchemaVersion << ",0," << format_double(rep.initial_accuracy) << ",,,,,0,0," << reinit.pulses() << ","
      << reinit.reads << "\n";
  for (const auto& e : rep.epochs) {
    out << kCsvSchemaVersion << "," << e.epoch << "," << format_double(e.test_accuracy) << ","
        << format_double(e.train_loss) << "," << format_double(e.train_accuracy) << ","
        << format_double(e.mean_touched_fraction) << "," << format_double(e.max_touched_fraction) << ","
        << e.iterations << "," << e.clamped_inputs << "," << e.cumulative.pulses() << "," << e.cumulative.reads
        << "\n";
  }
}

void write_pulses_csv(const TrainReport& rep, std::ostream& out) {
  out << "schema_version,epoch,phase,layer,potentiation,depression,reads,cells_touched,compensated_cells,"
         "compensation_pulses,diagnostics,cumulative_pulses\n";
  std::uint64_t cumulative = 0;
  const auto row = [&](int epoch, std::string_view phase, const std::string& layer, const ProgramReport& p) {
    cumulative += p.pulses();
    out << kCsvSchemaVersion << "," << epoch << "," << phase << "," << layer << "," << p.pulses_potentiation << ","
        << p.pulses_depression << "," << p.reads << "," << p.cells_touched << "," << p.compensated_cells << ","
        << p.compensation_pulses << "," << p.diagnostics << "," << cumulative << "\n";
  };
  for (std::size_t k = 0; k < rep.reinit.size(); ++k) row(0, "reinit", std::to_string(k), rep.reinit[k].program);
  for (const auto& e : rep.epochs) row(e.epoch, "train", "all", e.epoch_program);
}

void write_touched_csv(const TrainReport& rep, std::ostream& out) {
  out << "schema_version,epoch,iteration,fraction\n";
  std::size_t i = 0;
  for (const auto& e : rep.epochs) {
    for (std::size_t it = 0; it < e.iterations && i < rep.touched_fraction.size(); ++it, ++i) {
      out << kCsvSchemaVersion << "," << e.epoch << "," << it << "," << format_double(rep.touched_fraction[i])
          << "\n";
    }
  }
}

void write_weights_csv(const std::vector<HistogramBin>& bins, std::ostream& out) {
  out << "schema_version,layer,low,high,count\n";
  for (const auto& b : bins) {
    out << kCsvSchemaVersion << "," << b.layer << "," << format_double(b.low) << "," << format_double(b.high) << ","
        << b.count << "\n";
  }
}

// ---------------------------------------------------------------------------
// Device sweep

std::vector<SweepPoint> device_sweep(const ExperimentConfig& cfg_in) {
  const ExperimentConfig cfg = with_seed(cfg_in);
  cfg.validate();
  const MappingConstants mapping = MappingConstants::from_mean(cfg.hw.mean, cfg.hw.vr);
  std::vector<SweepPoint> pts;

  const auto run_train = [&](const DeviceParams& p, double d2d_scale, double ws, std::size_t device) {
    PulsePair pulses = cfg.hw.pulses;
    pulses.potentiation.width *= ws;
    pulses.depression.width *= ws;
    DeviceState s{cfg.sweep.start_omega};
    const auto emit = [&](int step, std::string_view polarity) {
      pts.push_back({"pulse-train", d2d_scale, ws, device, step, std::string(polarity), s.omega,
                     mapping.weight(read_conductance(p, s, cfg.hw.vr))});
    };
    int step = 0;
    emit(step, "start");
    for (int i = 0; i < cfg.sweep.pulses; ++i) {
      s = apply_pulse(s, p, pulses.potentiation);
      emit(++step, "potentiation");
    }
    for (int i = 0; i < cfg.sweep.pulses; ++i) {
      s = apply_pulse(s, p, pulses.depression);
      emit(++step, "depression");
    }
  };

  for (double ws : cfg.sweep.width_scales) {
    run_train(cfg.hw.mean, 0.0, ws, 0);
    for (std::size_t si = 0; si < cfg.sweep.d2d_scales.size(); ++si) {
      VariationConfig var = cfg.hw.variation;
      var.d2d_enabled = true;
      var.d2d_scale = cfg.sweep.d2d_scales[si];
      for (std::size_t d = 1; d <= cfg.sweep.devices; ++d) {
        RngStream rng({cfg.seed, StreamDomain::kStudy, 1, static_cast<std::uint32_t>(si),
                       static_cast<std::uint32_t>(d), 0});
        run_train(sample_device_params(cfg.hw.mean, var, rng), var.d2d_scale, ws, d);
      }
    }
    // Identical alternating single pulses from both ends of the range.
    const std::array<double, 2> starts = {cfg.sweep.start_omega, 1.0 - cfg.sweep.start_omega};
    for (std::size_t d = 0; d < starts.size(); ++d) {
      PulsePair pulses = cfg.hw.pulses;
      pulses.potentiation.width *= ws;
      pulses.depression.width *= ws;
      DeviceState s{starts[d]};
      const auto emit = [&](int step, std::string_view polarity) {
        pts.push_back({"alternating", 0.0, ws, d, step, std::string(polarity), s.omega,
                       mapping.weight(read_conductance(cfg.hw.mean, s, cfg.hw.vr))});
      };
      emit(0, "start");
      for (int i = 0; i < cfg.sweep.alternating_pulses; ++i) {
        const bool pot = i % 2 == 0;
        s = apply_pulse(s, cfg.hw.mean, pot ? pulses.potentiation : pulses.depression);
        emit(i + 1, pot ? "potentiation" : "depression");
      }
    }
  }

  if (!cfg.out.empty()) {
    auto out = open_output(cfg.out, "sweep.csv");
    write_sweep_csv(pts, out);
  }
  return pts;
}

void write_sweep_csv(const std::vector<SweepPoint>& pts, std::ostream& out) {
  out << "schema_version,series,d2d_scale,width_scale,device,step,polarity,omega,weight\n";
  for (const auto& p : pts) {
    out << kCsvSchemaVersion << "," << p.series << "," << format_double(p.d2d_scale) << ","
        << format_double(p.width_scale) << "," << p.device << "," << p.step << "," << p.polarity << ","
        << format_double(p.omega) << "," << format_double(p.weight) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Re-initialization study

std::vector<ReinitStudyRow> reinit_study(const ExperimentConfig& cfg_in) {
  const ExperimentConfig cfg = with_seed(cfg_in);
  cfg.validate();
  const std::size_t rows = cfg.reinit_study.rows, cols = cfg.reinit_study.cols;
  const double target = cfg.train.scheme.reinit_target_std > 0.0
                            ? cfg.train.scheme.reinit_target_std
                            : std::sqrt(2.0 / static_cast<double>(rows + cols));
  std::vector<ReinitStudyRow> out;
  for (std::size_t si = 0; si < cfg.reinit_study.d2d_scales.size(); ++si) {
    CrossbarConfig cc;
    cc.rows = rows;
    cc.cols = cols;
    cc.mean = cfg.hw.mean;
    cc.variation = cfg.hw.variation;
    cc.variation.d2d_enabled = true;
    cc.variation.d2d_scale = cfg.reinit_study.d2d_scales[si];
    cc.pulses = cfg.hw.pulses;
    cc.vr = cfg.hw.vr;
    cc.seed = cfg.seed;
    cc.layer = static_cast<std::uint32_t>(si);
    Crossbar cb = init_crossbar(cc);
    ReinitStudyRow row;
    row.d2d_scale = cc.variation.d2d_scale;
    row.target_std = target;
    row.report = reinitialize(cb, cfg.train.scheme, target);
    row.pulses_per_cell = static_cast<double>(row.report.program.pulses()) / static_cast<double>(cb.size());
    out.push_back(std::move(row));
  }
  if (!cfg.out.empty()) {
    auto per_cycle = open_output(cfg.out, "reinit_study.csv");
    auto summary = open_output(cfg.out, "reinit_summary.csv");
    write_reinit_csvs(out, per_cycle, summary);
  }
  return out;
}

void write_reinit_csvs(const std::vector<ReinitStudyRow>& rows, std::ostream& per_cycle, std::ostream& summary) {
  per_cycle << "schema_version,d2d_scale,cycle,std,mean\n";
  summary << "schema_version,d2d_scale,target_std,initial_std,final_std,cycles,converged,pulses,pulses_per_cell\n";
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.report.std_history.size(); ++c) {
      per_cycle << kCsvSchemaVersion << "," << format_double(r.d2d_scale) << "," << c + 1 << ","
                << format_double(r.report.std_history[c]) << "," << format_double(r.report.mean_history[c]) << "\n";
    }
    summary << kCsvSchemaVersion << "," << format_double(r.d2d_scale) << "," << format_double(r.target_std) << ","
            << format_double(r.report.initial_std) << "," << format_double(r.report.final_std) << ","
            << r.report.cycles << "," << (r.report.converged ? 1 : 0) << "," << r.report.program.pulses() << ","
            << format_double(r.pulses_per_cell) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Compensation study

CompensationStudy compensation_study(const ExperimentConfig& cfg_in) {
  const ExperimentConfig cfg = with_seed(cfg_in);
  cfg.validate();
  const auto& sc = cfg.compensation_study;
  CompensationStudy st;
  RngStream rng({cfg.seed, StreamDomain::kStudy, 2, 0, 0, 0});
  for (std::size_t i = 0; i < sc.samples; ++i) {
    CompensationSample s;
    s.omega = rng.uniform();
    s.delta_g = (2.0 * rng.uniform() - 1.0) * sc.max_delta_g;
    for (int arm = 0; arm < 2; ++arm) {
      CrossbarConfig cc;
      cc.mean = cfg.hw.mean;
      cc.variation = cfg.hw.variation;
      cc.pulses = cfg.hw.pulses;
      cc.vr = cfg.hw.vr;
      cc.seed = cfg.seed;
      cc.layer = static_cast<std::uint32_t>(i);  // both arms see the same device
      Crossbar cb = init_crossbar(cc);
      cb.set_omega(0, 0, s.omega);
      const double g0 = cb.read_weight(0, 0);
      SchemeConfig scheme = cfg.train.scheme;
      scheme.compensation = arm == 1;
      scheme.compensation_full_range = arm == 1;
      const ProgramReport rep = program(cb, Matrix::Constant(1, 1, s.delta_g), scheme);
      const double err = cb.read_weight(0, 0) - g0 - s.delta_g;
      (arm == 1 ? s.error_with : s.error_without) = err;
      (arm == 1 ? s.pulses_with : s.pulses_without) = rep.pulses();
    }
    st.samples.push_back(s);
  }

  for (std::size_t b = 0; b < sc.bins; ++b) {
    CompensationBin bin;
    bin.omega_low = static_cast<double>(b) / static_cast<double>(sc.bins);
    bin.omega_high = static_cast<double>(b + 1) / static_cast<double>(sc.bins);
    std::vector<double> ew, eo, aw, ao, pw, po;
    for (const auto& s : st.samples) {
      const auto idx = std::min(sc.bins - 1, static_cast<std::size_t>(s.omega * static_cast<double>(sc.bins)));
      if (idx != b) continue;
      eo.push_back(s.error_without);
      ew.push_back(s.error_with);
      ao.push_back(std::abs(s.error_without));
      aw.push_back(std::abs(s.error_with));
      po.push_back(static_cast<double>(s.pulses_without));
      pw.push_back(static_cast<double>(s.pulses_with));
    }
    bin.samples = eo.size();
    bin.mean_abs_error_without = mean_of(ao);
    bin.std_error_without = std_of(eo);
    bin.mean_abs_error_with = mean_of(aw);
    bin.std_error_with = std_of(ew);
    bin.mean_pulses_without = mean_of(po);
    bin.mean_pulses_with = mean_of(pw);
    st.bins.push_back(bin);
  }

  if (!cfg.out.empty()) {
    auto bins = open_output(cfg.out, "compensation.csv");
    auto samples = open_output(cfg.out, "compensation_samples.csv");
    write_compensation_csvs(st, bins, samples);
  }
  return st;
}

void write_compensation_csvs(const CompensationStudy& st, std::ostream& bins, std::ostream& samples) {
  bins << "schema_version,omega_low,omega_high,samples,mean_abs_error_without,std_error_without,"
          "mean_abs_error_with,std_error_with,mean_pulses_without,mean_pulses_with\n";
  for (const auto& b : st.bins) {
    bins << kCsvSchemaVersion << "," << format_double(b.omega_low) << "," << format_double(b.omega_high) << ","
         << b.samples << "," << format_double(b.mean_abs_error_without) << "," << format_double(b.std_error_without)
         << "," << format_double(b.mean_abs_error_with) << "," << format_double(b.std_error_with) << ","
         << format_double(b.mean_pulses_without) << "," << format_double(b.mean_pulses_with) << "\n";
  }
  samples << "schema_version,sample,omega,delta_g,error_without,error_with,pulses_without,pulses_with\n";
  for (std::size_t i = 0; i < st.samples.size(); ++i) {
    const auto& s = st.samples[i];
    samples << kCsvSchemaVersion << "," << i << "," << format_double(s.omega) << "," << format_double(s.delta_g)
            << "," << format_double(s.error_without) << "," << format_double(s.error_with) << ","
            << s.pulses_without << "," << s.pulses_with << "\n";
  }
}

// ---------------------------------------------------------------------------
// Ablation matrix

ExperimentConfig ablation_row_config(const ExperimentConfig& base, std::string_view row) {
  if (!known_row(row)) throw ConfigError("unknown ablation row '" + std::string(row) + "'");
  ExperimentConfig c = base;
  c.kind = ExperimentKind::kTrain;
  c.ablation.overrides.clear();
  auto& var = c.hw.variation;
  auto& s = c.train.scheme;
  // Every row starts from the noiseless, closed-loop, continuous-width device.
  var.d2d_enabled = false;
  var.p2p_enabled = false;
  s.loop_mode = LoopMode::kClosed;
  s.rounding = Rounding::kNone;
  s.compensation = false;
  c.train.momentum = 0.0;
  c.train.reinit = false;

  if (row == "p2p-only") {
    var.p2p_enabled = true;
  } else if (row == "d2d-only") {
    var.d2d_enabled = true;
  } else if (row == "open-loop-only") {
    s.loop_mode = LoopMode::kOpen;
  } else if (row == "rounding-only") {
    s.rounding = Rounding::kFloor;
  } else if (row == "all-non-ideal") {
    var.d2d_enabled = var.p2p_enabled = true;
    s.loop_mode = LoopMode::kOpen;
    s.rounding = Rounding::kFloor;
  } else if (row == "ssm" || row == "ssm-comp") {
    var.d2d_enabled = var.p2p_enabled = true;
    s.loop_mode = LoopMode::kOpen;
    s.rounding = Rounding::kStochastic;
    s.n_coefficient = 2.0;
    s.compensation = row == "ssm-comp";
    c.train.momentum = 0.9;
    c.train.reinit = true;
  }
  for (const auto& o : base.ablation.overrides) {
    if (o.row == row) c.set(o.key, o.value);
  }
  if (!base.out.empty()) c.out = base.out / std::string(row);
  return c;
}

std::vector<AblationRow> ablation_matrix(const ExperimentConfig& cfg_in,
                                         const std::function<void(const AblationRow&)>& on_row) {
  const ExperimentConfig cfg = with_seed(cfg_in);
  cfg.validate();
  const DatasetPair data = load_datasets(cfg.data, cfg.seed);
  std::vector<AblationRow> rows;
  for (const auto& name : cfg.ablation.rows) {
    AblationRow r;
    r.name = name;
    try {
      r.config = ablation_row_config(cfg, name);
      r.report = run_training(r.config, &data);
      r.ok = true;
      double touched = 0.0;
      std::size_t iterations = 0;
      for (const auto& e : r.report.train.epochs) {
        if (e.epoch > 5) break;
        r.pulses_first5 += e.epoch_program.pulses();
        touched += e.mean_touched_fraction * static_cast<double>(e.iterations);
        iterations += e.iterations;
      }
      if (iterations > 0) r.mean_touched_first5 = touched / static_cast<double>(iterations);
      for (const auto& re : r.report.train.reinit) r.reinit_pulses += re.program.pulses();
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
    rows.push_back(std::move(r));
    if (on_row) on_row(rows.back());
  }
  const auto base = std::find_if(rows.begin(), rows.end(),
                                 [&](const AblationRow& r) { return r.name == cfg.ablation.baseline && r.ok; });
  if (base != rows.end() && base->pulses_first5 > 0) {
    for (auto& r : rows) {
      if (r.ok) {
        r.normalized_pulses = static_cast<double>(r.pulses_first5) / static_cast<double>(base->pulses_first5);
      }
    }
  }
  if (!cfg.out.empty()) {
    auto out = open_output(cfg.out, "ablation_summary.csv");
    write_ablation_csv(rows, out);
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& out) {
  out << "schema_version,row,p2p,d2d,loop_mode,rounding,n_coefficient,momentum,reinit,compensation,eta,epochs,"
         "status,final_accuracy,best_accuracy,convergence_epoch,pulses_first5,reinit_pulses,total_pulses,"
         "normalized_pulses,mean_touched_first5,error\n";
  for (const auto& r : rows) {
    const auto& c = r.config;
    const auto& s = c.train.scheme;
    out << kCsvSchemaVersion << "," << r.name << "," << encode(c.hw.variation.p2p_enabled) << ","
        << encode(c.hw.variation.d2d_enabled) << "," << to_string(s.loop_mode) << "," << to_string(s.rounding) << ","
        << format_double(s.n_coefficient) << "," << format_double(c.train.momentum) << ","
        << encode(c.train.reinit) << "," << encode(s.compensation) << "," << format_double(c.train.eta) << ","
        << c.train.epochs << "," << (r.ok ? "ok" : "error") << ",";
    if (r.ok) {
      const auto& t = r.report.train;
      double best = t.initial_accuracy;
      for (const auto& e : t.epochs) best = std::max(best, e.test_accuracy);
      const std::uint64_t total = t.epochs.empty() ? r.reinit_pulses : t.epochs.back().cumulative.pulses();
      out << format_double(t.final_accuracy()) << "," << format_double(best) << "," << t.convergence_epoch() << ","
          << r.pulses_first5 << "," << r.reinit_pulses << "," << total << "," << format_double(r.normalized_pulses)
          << "," << format_double(r.mean_touched_first5) << ",";
    } else {
      out << ",,,,,,,,";
    }
    out << csv_quote(r.error) << "\n";
  }
}

// ---------------------------------------------------------------------------

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult res;
  if (!cfg.out.empty()) write_text(cfg.out, "config.echo", cfg.echo());
  switch (cfg.kind) {
    case ExperimentKind::kTrain: res.run = run_training(cfg); break;
    case ExperimentKind::kDeviceSweep: res.sweep = device_sweep(cfg); break;
    case ExperimentKind::kReinitStudy: res.reinit = reinit_study(cfg); break;
    case ExperimentKind::kCompensationStudy: res.compensation = compensation_study(cfg); break;
    case ExperimentKind::kAblationMatrix: res.ablation = ablation_matrix(cfg); break;
  }
  return res;
}

}  // namespace xbar
