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
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xbar/data.hpp"
#include "xbar/network.hpp"

namespace xbar {

/// Bumped whenever a CSV header changes.
inline constexpr int kCsvSchemaVersion = 1;

enum class ExperimentKind { kTrain, kDeviceSweep, kReinitStudy, kCompensationStudy, kAblationMatrix };

/// kAuto: Glorot weights written ideally when D2D is off, otherwise every
/// device starts at the configured state and keeps its D2D spread.
enum class InitMode { kAuto, kGlorot, kDevice };

ExperimentKind parse_experiment_kind(std::string_view s);
InitMode parse_init_mode(std::string_view s);
MacMode parse_mac_mode(std::string_view s);
std::string_view to_string(ExperimentKind k);
std::string_view to_string(InitMode m);
std::string_view to_string(MacMode m);

struct DataConfig {
  std::string source = "idx";  ///< idx | synthetic
  std::filesystem::path train_images = "data/mnist/train-images-idx3-ubyte";
  std::filesystem::path train_labels = "data/mnist/train-labels-idx1-ubyte";
  std::filesystem::path test_images = "data/mnist/t10k-images-idx3-ubyte";
  std::filesystem::path test_labels = "data/mnist/t10k-labels-idx1-ubyte";
  std::string synthetic = "blobs";
  std::size_t synthetic_train = 400;
  std::size_t synthetic_test = 200;
  std::size_t train_limit = 0;  ///< 0 keeps every sample
  std::size_t test_limit = 0;
};

struct SweepConfig {
  int pulses = 64;
  double start_omega = 0.05;
  std::vector<double> d2d_scales{1.0};
  std::size_t devices = 0;  ///< D2D-sampled devices per scale, besides the mean device
  std::vector<double> width_scales{1.0};
  int alternating_pulses = 32;
};

struct ReinitStudyConfig {
  std::size_t rows = 784;
  std::size_t cols = 256;
  std::vector<double> d2d_scales{1.0, 2.0};
};

struct CompensationStudyConfig {
  std::size_t samples = 1000;
  std::size_t bins = 10;
  double max_delta_g = 0.1;
};

struct AblationOverride {
  std::string row;
  std::string key;
  std::string value;
};

struct AblationConfig {
  std::vector<std::string> rows;
  std::vector<AblationOverride> overrides;
  /// Row whose pulse count normalizes the others.
  std::string baseline = "all-non-ideal";
};

/// Row names known to ablation_matrix, in summary order.
const std::vector<std::string>& ablation_row_names();

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kTrain;
  std::string model = "mlp:784-256-10";
  DataConfig data;
  HardwareConfig hw;
  TrainConfig train;
  InitMode init = InitMode::kAuto;
  SweepConfig sweep;
  ReinitStudyConfig reinit_study;
  CompensationStudyConfig compensation_study;
  AblationConfig ablation;
  std::uint64_t seed = 1;
  std::filesystem::path out = "out";

  ExperimentConfig();

  /// Assigns one dotted key; throws ConfigError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  /// Every key with its current value, one `key = value` per line. Parsing
  /// the echo reproduces the configuration.
  std::string echo() const;
  void validate() const;

  static std::vector<std::string> keys();
};

/// Flat `key = value` lines; `#` starts a comment. Errors name the line.
ExperimentConfig parse_config(std::string_view text, std::string_view source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
void apply_config_text(ExperimentConfig& cfg, std::string_view text, std::string_view source);
/// "key=value" from the command line.
void apply_override(ExperimentConfig& cfg, std::string_view assignment);

struct HistogramBin {
  std::size_t layer = 0;
  double low = 0.0;
  double high = 0.0;
  std::uint64_t count = 0;
};

struct RunReport {
  std::string name;
  TrainReport train;
  std::vector<HistogramBin> weights;
  double wall_seconds = 0.0;  ///< not written to any CSV
  std::string config_echo;
};

/// Shared across runs of one process so an ablation loads MNIST once.
struct DatasetPair {
  Dataset train;
  Dataset test;
};

DatasetPair load_datasets(const DataConfig& data, std::uint64_t seed);
NetworkModel build_model(const ExperimentConfig& cfg, const Dataset& train_set);

/// Train pipeline. Writes report.csv, pulses.csv, touched.csv,
/// weights_final.csv and config.echo into `cfg.out` unless it is empty.
RunReport run_training(const ExperimentConfig& cfg, const DatasetPair* data = nullptr,
                       const EpochCallback& on_epoch = {});

struct SweepPoint {
  std::string series;
  double d2d_scale = 1.0;
  double width_scale = 1.0;
  std::size_t device = 0;
  int step = 0;
  std::string polarity;
  double omega = 0.0;
  double weight = 0.0;
};

/// Pulse trains on single devices: potentiation then depression, and
/// alternating single pulses. Writes sweep.csv.
std::vector<SweepPoint> device_sweep(const ExperimentConfig& cfg);

struct ReinitStudyRow {
  double d2d_scale = 1.0;
  double target_std = 0.0;
  double pulses_per_cell = 0.0;
  ReinitReport report;
};

/// Re-initializes a fresh crossbar per D2D scale. Writes reinit_study.csv
/// (per cycle) and reinit_summary.csv.
std::vector<ReinitStudyRow> reinit_study(const ExperimentConfig& cfg);

struct CompensationSample {
  double omega = 0.0;
  double delta_g = 0.0;
  double error_without = 0.0;  ///< realized minus requested weight change
  double error_with = 0.0;
  std::uint64_t pulses_without = 0;
  std::uint64_t pulses_with = 0;
};

struct CompensationBin {
  double omega_low = 0.0;
  double omega_high = 0.0;
  std::size_t samples = 0;
  double mean_abs_error_without = 0.0;
  double std_error_without = 0.0;
  double mean_abs_error_with = 0.0;
  double std_error_with = 0.0;
  double mean_pulses_without = 0.0;
  double mean_pulses_with = 0.0;
};

struct CompensationStudy {
  std::vector<CompensationSample> samples;
  std::vector<CompensationBin> bins;
};

/// Random single-cell updates programmed with the configured scheme, once
/// without and once with compensation over the full state range. Writes
/// compensation.csv and compensation_samples.csv.
CompensationStudy compensation_study(const ExperimentConfig& cfg);

struct AblationRow {
  std::string name;
  ExperimentConfig config;
  RunReport report;
  bool ok = false;
  std::string error;
  std::uint64_t pulses_first5 = 0;  ///< training pulses, epochs 1-5
  std::uint64_t reinit_pulses = 0;
  double normalized_pulses = 0.0;   ///< pulses_first5 / baseline pulses_first5; 0 if unavailable
  double mean_touched_first5 = 0.0;
};

/// Base configuration with one row's flags and overrides applied.
ExperimentConfig ablation_row_config(const ExperimentConfig& base, std::string_view row);

/// Runs each configured row into out/<row>/ and writes ablation_summary.csv.
/// A failing row is recorded and the matrix continues.
std::vector<AblationRow> ablation_matrix(const ExperimentConfig& cfg,
                                         const std::function<void(const AblationRow&)>& on_row = {});

struct ExperimentResult {
  RunReport run;  ///< train only
  std::vector<SweepPoint> sweep;
  std::vector<ReinitStudyRow> reinit;
  CompensationStudy compensation;
  std::vector<AblationRow> ablation;
};

/// Dispatches on cfg.kind; always writes config.echo.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

void write_report_csv(const TrainReport& rep, std::ostream& out);
void write_pulses_csv(const TrainReport& rep, std::ostream& out);
void write_touched_csv(const TrainReport& rep, std::ostream& out);
void write_weights_csv(const std::vector<HistogramBin>& bins, std::ostream& out);
void write_sweep_csv(const std::vector<SweepPoint>& pts, std::ostream& out);
void write_reinit_csvs(const std::vector<ReinitStudyRow>& rows, std::ostream& per_cycle,
                       std::ostream& summary);
void write_compensation_csvs(const CompensationStudy& st, std::ostream& bins, std::ostream& samples);
void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& out);

/// Effective-weight histogram of every crossbar over [-1.5, 1.5];
/// out-of-range weights land in the end bins.
std::vector<HistogramBin> weight_histogram(const NetworkModel& model, std::size_t bins = 60);

}  // namespace xbar
