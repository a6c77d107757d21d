// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

// Config-driven experiment commands behind the `layerprobe` tool.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerprobe/adversarial.hpp"
#include "layerprobe/data_io.hpp"
#include "layerprobe/probes.hpp"
#include "layerprobe/trainer.hpp"

namespace lp {

/// A rejected command line or config value (unknown preset, scheme, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

struct DataConfig {
  std::string dataset = "mnist";  // mnist | cifar10 | synthetic
  std::string data_dir = "data";
  bool per_channel = false;       // cifar10 only
  SyntheticSpec synthetic;
  std::size_t synthetic_test = 1000;
  std::size_t test_limit = 0;     // evaluate on the first n test examples (0: all)
};

struct ProbeConfig {
  std::vector<int> checkpoints;   // empty: schedule-derived default
  std::string scheme = "singleton";
  double threshold = 0.02;
  std::uint64_t probe_seed = 1;
  bool rerandomize = true;
};

struct SweepConfig {
  std::vector<int> widths{32, 256};
  int depth = 3;
  int trials = 3;
};

struct AttackSection {
  AttackEvalConfig eval;
  int r = 4;
  std::vector<int> s{1, 2};
  std::uint64_t bank_seed = 0;
};

struct ReportConfig {
  std::string input;              // artifact JSON, or a directory of them
  std::string style = "heatmap";  // heatmap | lines
  std::string orientation = "auto";
  std::string palette = "viridis";
};

struct ExperimentConfig {
  std::string command;
  DataConfig data;
  std::string arch = "fcn-3x256";
  TrainConfig train;
  std::string run_id;             // empty: derived from arch and seed
  std::string run_dir;            // existing run for probe/distances/attack
  std::string out_dir = "runs";
  std::vector<std::string> layers;  // freeze-train / ablate-train selection
  ProbeConfig probe;
  SweepConfig sweep;
  AttackSection attack;
  ReportConfig report;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

inline const std::vector<std::string>& experiment_commands() {
  static const std::vector<std::string> commands{
      "train", "probe", "joint-probe", "distances", "width-sweep",
      "freeze-train", "ablate-train", "attack", "report"};
  return commands;
}

/// Throws UsageError for an unknown command, dataset, preset, scheme, style,
/// orientation or palette, or a missing input path.
void validate_config(const ExperimentConfig& c);

DatasetPair load_data(const DataConfig& c);

/// Runs `config.command`; progress lines go to `log`. Returns the directory
/// the artifacts were written to.
std::filesystem::path run_experiment(const ExperimentConfig& config, std::ostream& log);

/// Stored artifacts are {"artifact": kind, "config": ..., "data": ...}.
/// Regenerates the plots of one of them next to it; returns the SVG paths.
/// `heatmap` style rewrites the same files the producing command wrote.
std::vector<std::filesystem::path> render_artifact(const std::filesystem::path& json_path,
                                                   const ReportConfig& report);

}  // namespace lp
