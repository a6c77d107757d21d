// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerprobe/arch.hpp"
#include "layerprobe/dataset.hpp"
#include "layerprobe/params.hpp"
#include "layerprobe/trainer.hpp"

namespace lp {

// --- single-layer resets ---------------------------------------------------

/// Copy of `params_t` whose layer `layer` (all tensors, running statistics
/// included) comes from `source`.
ParamSet re_init_layer(const ParamSet& params_t, const ParamSet& source,
                       std::string_view layer);

/// Copy of `params_t` whose layer `layer` is freshly drawn from its init
/// distribution. The draw depends on (probe_seed, layer) only and uses a
/// stream disjoint from the one init_params() uses for any training seed.
ParamSet re_randomize_layer(const ParamSet& params_t, const ArchSpec& arch,
                            std::string_view layer, std::uint64_t probe_seed);

// --- grouping --------------------------------------------------------------

struct LayerGroup {
  std::string name;
  std::vector<std::string> layers;
};

/// Disjoint groups of parametric layers; layers in no group are never reset.
struct GroupingScheme {
  std::string name;
  std::vector<LayerGroup> groups;

  void validate(const ArchSpec& arch) const;
};

/// One group per parametric layer.
GroupingScheme singleton_scheme(const ArchSpec& arch);

/// Named schemes:
///   singleton      every parametric layer on its own
///   upper          {first layer} and {all later layers} (FCN); for residual
///                  nets {every residual block except the first of its stage}
///   two-of-three   {first layer} and two of every three later layers
///   every-other    {first layer} and every second later layer; for residual
///                  nets every second block of each stage (resblk2, resblk4, ...)
///   outer-stages   residual nets: non-first blocks of the first and last stage
GroupingScheme make_scheme(std::string_view name, const ArchSpec& arch);

/// Residual blocks other than the first of each stage (the freeze/remove set).
std::vector<std::string> non_first_blocks(const ArchSpec& arch);

std::string group_name(const std::vector<std::string>& layers);

// --- robustness matrix -----------------------------------------------------

inline constexpr const char* kRerandColumn = "rerand";
inline constexpr const char* kFinalColumn = "final";
inline constexpr const char* kFullModelRow = "full_model";
std::string checkpoint_column(int tau);

/// Test error per (row, column); NaN marks a cell that was not measured.
struct RobustnessMatrix {
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  std::vector<std::vector<double>> values;
  nlohmann::json metadata = nlohmann::json::object();

  double at(std::string_view row, std::string_view col) const;
  bool has(std::string_view row, std::string_view col) const;
  std::size_t row_index(std::string_view row) const;
  std::size_t col_index(std::string_view col) const;
  void set(std::string_view row, std::string_view col, double value);
  bool operator==(const RobustnessMatrix& other) const;  // NaN == NaN
};

struct ProbeOptions {
  std::vector<int> checkpoints;  // empty: default_checkpoints()
  std::uint64_t probe_seed = 1;
  bool rerandomize = true;
};

/// {0, 1, first epoch after each learning-rate drop, T}.
std::vector<int> default_checkpoints(const TrainConfig& config, int epochs);

/// Resets every member of a group jointly, evaluates once, restores; columns
/// rerand, ckpt-<tau>..., final; plus the full_model row holding each
/// checkpoint's own error.
RobustnessMatrix robustness_matrix(const CheckpointSeries& series, const Dataset& test,
                                   const GroupingScheme& scheme,
                                   const ProbeOptions& options = {});

/// row_id,col_id,test_error (measured cells only).
std::string matrix_to_csv(const RobustnessMatrix& m);
RobustnessMatrix matrix_from_csv(const std::string& text);
nlohmann::json matrix_to_json(const RobustnessMatrix& m);
RobustnessMatrix matrix_from_json(const nlohmann::json& j);

// --- distances ---------------------------------------------------------------

/// Per layer d and checkpoint tau: ||theta_d^tau - theta_d^0||_2 / sqrt(n_d)
/// and ||theta_d^tau - theta_d^0||_inf over the trainable tensors.
struct DistanceMatrix {
  std::vector<std::string> layers;
  std::vector<int> checkpoints;
  std::vector<std::vector<double>> l2;
  std::vector<std::vector<double>> linf;
};

DistanceMatrix layer_distances(const CheckpointSeries& series,
                               const std::vector<int>& checkpoints);
/// Same, against an explicit reference parameter set.
void layer_distance(const ParamSet& a, const ParamSet& reference, std::string_view layer,
                    double& l2, double& linf);

std::string distances_to_csv(const DistanceMatrix& d);
nlohmann::json distances_to_json(const DistanceMatrix& d);
DistanceMatrix distances_from_json(const nlohmann::json& j);

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// --- width sweep -------------------------------------------------------------

struct WidthSweepRow {
  int width = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over trials
  std::vector<double> trials;
};

/// Trains FCN depth x width for each width and `trials` seeds (config.seed,
/// config.seed + 1, ...) and averages, over every layer but the first, the
/// test-error increase from re-initializing it to checkpoint-0.
std::vector<WidthSweepRow> width_sweep(const std::vector<int>& widths, int depth,
                                       const TrainConfig& config, const Dataset& train,
                                       const Dataset& test, int trials);

/// Mean over layers 2..D of err(re-init to checkpoint-0) - err(final).
double upper_layer_reinit_delta(const CheckpointSeries& series, const Dataset& test);

// --- effective parameters ----------------------------------------------------

struct EffectiveParamReport {
  double threshold = 0.0;
  std::vector<std::string> robust_layers;
  std::vector<double> deltas;  // per singleton row of the matrix
  std::vector<std::string> delta_layers;
  std::size_t total_params = 0;   // m
  std::size_t robust_params = 0;  // rho * m
  double rho = 0.0;
  double effective_params = 0.0;  // (1 - rho) m
  double train_error_full = 0.0;
  double train_error_reinit = 0.0;
  double epsilon = 0.0;  // train_error_reinit - train_error_full
};

/// Robust set = singleton rows whose checkpoint-0 cell exceeds the final cell
/// by at most `threshold`; epsilon re-initializes that set jointly and
/// measures the change in training error.
EffectiveParamReport effective_param_report(const RobustnessMatrix& matrix,
                                            const CheckpointSeries& series,
                                            const Dataset& train, double threshold);

nlohmann::json report_to_json(const EffectiveParamReport& r);

}  // namespace lp
