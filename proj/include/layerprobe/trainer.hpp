// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerprobe/arch.hpp"
#include "layerprobe/data_io.hpp"
#include "layerprobe/dataset.hpp"
#include "layerprobe/params.hpp"

namespace lp {

struct TrainConfig {
  int epochs = 100;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double lr_factor = 0.2;
  // Fractions of `epochs` at which the learning rate is multiplied by
  // lr_factor; 0.3/0.6/0.9 gives epochs 30, 60 and 90 when epochs == 100.
  std::vector<double> milestone_fractions{0.3, 0.6, 0.9};
  double weight_decay = 0.0;
  // Whether the architecture carries batch norm. Recorded for provenance;
  // the layers themselves come from the ArchSpec.
  bool batchnorm = false;
  std::set<std::string, std::less<>> freeze;
  std::uint64_t seed = 0;
  bool augment = false;
  // Train error is measured in eval mode on the first `train_eval_limit`
  // training examples (0: all of them).
  std::size_t train_eval_limit = 0;
  // Only the first `train_limit` training examples are used (0: all).
  std::size_t train_limit = 0;

  /// Epoch indices (0-based) at which the decay applies.
  std::vector<int> milestones() const;
  /// Learning rate used throughout 0-based epoch `epoch`.
  double lr_at(int epoch) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochLog {
  int epoch = 0;  // checkpoint index tau; 0 is before any update
  double lr = 0.0;
  double train_err = 0.0;
  double test_err = 0.0;
};

/// Everything a training run produced: checkpoint tau holds the parameters
/// after tau epochs, log[tau] the errors measured on that checkpoint.
struct CheckpointSeries {
  std::string run_id;
  ArchSpec arch;
  TrainConfig config;
  std::string dataset_id;
  Normalization normalization;
  std::vector<ParamSet> checkpoints;
  std::vector<EpochLog> log;

  int epochs() const { return static_cast<int>(checkpoints.size()) - 1; }
  const ParamSet& at(int tau) const;
  const ParamSet& final_params() const { return checkpoints.back(); }
};

/// Called once per checkpoint, in order, as soon as it is available.
using CheckpointCallback =
    std::function<void(int tau, const ParamSet& params, const EpochLog& log)>;

/// SGD with heavy-ball momentum (v <- mu v + g + lambda theta,
/// theta <- theta - lr v), seeded per-epoch shuffling, the last partial batch
/// kept. Layers in config.freeze never receive updates. Throws on an unknown
/// frozen layer or a non-finite loss.
CheckpointSeries train(const ArchSpec& arch, const TrainConfig& config,
                       const Dataset& train_set, const Dataset& test_set,
                       const CheckpointCallback& on_checkpoint = {});

/// train() with `config.freeze` held at checkpoint-0; an empty set is plain training.
CheckpointSeries train_frozen(const ArchSpec& arch, const TrainConfig& config,
                              const Dataset& train_set, const Dataset& test_set,
                              const CheckpointCallback& on_checkpoint = {});

/// One optimizer step on `params` given gradients for its trainable tensors.
/// `velocity` has the layout of zeros_like_trainable(params).
void sgd_step(ParamSet& params, const ParamSet& grads, ParamSet& velocity,
              double lr, double momentum, double weight_decay,
              const std::set<std::string, std::less<>>& frozen);

/// Deletes the named layers. Only identity-skip residual blocks and dense
/// layers whose input and output widths agree can go; a dense layer takes its
/// trailing ReLU with it. Throws naming the neighbouring pair when a removal
/// would break shape compatibility.
ArchSpec remove_layers(const ArchSpec& arch,
                       const std::set<std::string, std::less<>>& selection);

}  // namespace lp
