// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "layerprobe/trainer.hpp"

#include <cmath>
#include <numeric>

#include "layerprobe/nn.hpp"
#include "layerprobe/rng.hpp"

namespace lp {

std::vector<int> TrainConfig::milestones() const {
  std::vector<int> out;
  for (double f : milestone_fractions) {
    out.push_back(static_cast<int>(std::lround(f * epochs)));
  }
  return out;
}

double TrainConfig::lr_at(int epoch) const {
  double rate = lr;
  for (int m : milestones()) {
    if (epoch >= m) rate *= lr_factor;
  }
  return rate;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"momentum", c.momentum},
       {"momentum_form", "heavy-ball: v = mu*v + g + wd*theta; theta -= lr*v"},
       {"lr_factor", c.lr_factor},
       {"milestone_fractions", c.milestone_fractions},
       {"milestones", c.milestones()},
       {"weight_decay", c.weight_decay},
       {"batchnorm", c.batchnorm},
       {"freeze", std::vector<std::string>(c.freeze.begin(), c.freeze.end())},
       {"seed", c.seed},
       {"augment", c.augment},
       {"train_eval_limit", c.train_eval_limit},
       {"train_limit", c.train_limit}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.momentum = j.value("momentum", d.momentum);
  c.lr_factor = j.value("lr_factor", d.lr_factor);
  c.milestone_fractions = j.value("milestone_fractions", d.milestone_fractions);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batchnorm = j.value("batchnorm", d.batchnorm);
  c.freeze.clear();
  for (const auto& f : j.value("freeze", std::vector<std::string>{})) c.freeze.insert(f);
  c.seed = j.value("seed", d.seed);
  c.augment = j.value("augment", d.augment);
  c.train_eval_limit = j.value("train_eval_limit", d.train_eval_limit);
  c.train_limit = j.value("train_limit", d.train_limit);
}

const ParamSet& CheckpointSeries::at(int tau) const {
  if (tau < 0 || tau > epochs()) {
    throw Error("checkpoint " + std::to_string(tau) + " not in series [0, " +
                std::to_string(epochs()) + "]");
  }
  return checkpoints[static_cast<std::size_t>(tau)];
}

void sgd_step(ParamSet& params, const ParamSet& grads, ParamSet& velocity, double lr,
              double momentum, double weight_decay,
              const std::set<std::string, std::less<>>& frozen) {
  const float mu = static_cast<float>(momentum);
  const float wd = static_cast<float>(weight_decay);
  const float eta = static_cast<float>(lr);
  for (auto& [layer, tensors] : params.layers) {
    if (frozen.contains(layer)) continue;
    const auto& g_layer = grads.at(layer);
    auto& v_layer = velocity.at(layer);
    std::size_t k = 0;
    for (auto& p : tensors) {
      if (!p.trainable) continue;
      const auto& g = g_layer.at(k).value;
      auto& v = v_layer.at(k).value;
      ++k;
      float* theta = p.value.data();
      float* vel = v.data();
      const float* grad = g.data();
      const std::size_t n = p.value.size();
      if (wd != 0.0f) {
        for (std::size_t i = 0; i < n; ++i) {
          vel[i] = mu * vel[i] + grad[i] + wd * theta[i];
          theta[i] -= eta * vel[i];
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          vel[i] = mu * vel[i] + grad[i];
          theta[i] -= eta * vel[i];
        }
      }
    }
  }
}

namespace {

void check_compatible(const ArchSpec& arch, const Dataset& ds) {
  if (ds.example_dims() != arch.input_dims) {
    throw Error("dataset '" + ds.id + "' examples " + dims_string(ds.example_dims()) +
                " do not match arch input " + dims_string(arch.input_dims));
  }
  if (ds.num_classes != arch.num_classes) {
    throw Error("dataset '" + ds.id + "' has " + std::to_string(ds.num_classes) +
                " classes, arch expects " + std::to_string(arch.num_classes));
  }
}

}  // namespace

CheckpointSeries train(const ArchSpec& arch, const TrainConfig& config,
                       const Dataset& train_full, const Dataset& test_set,
                       const CheckpointCallback& on_checkpoint) {
  arch.validate();
  check_compatible(arch, train_full);
  check_compatible(arch, test_set);
  if (config.epochs < 0) throw Error("epochs must be non-negative");
  if (config.batch_size == 0) throw Error("batch size must be positive");
  for (const auto& f : config.freeze) {
    if (!arch.has_layer(f) || !is_parametric(arch.layer(f).kind)) {
      throw Error("cannot freeze '" + f + "': not a parametric layer of '" + arch.name + "'");
    }
  }

  const Dataset train_set = config.train_limit && config.train_limit < train_full.size()
                                ? train_full.head(config.train_limit)
                                : train_full;
  const Dataset train_eval = config.train_eval_limit &&
                                     config.train_eval_limit < train_set.size()
                                 ? train_set.head(config.train_eval_limit)
                                 : train_set;
  const AugmentPolicy policy =
      config.augment ? AugmentPolicy::standard(train_set) : AugmentPolicy{};

  CheckpointSeries series;
  series.arch = arch;
  series.config = config;
  series.dataset_id = train_set.id;
  series.normalization = train_set.normalization;

  ParamSet params = init_params(arch, config.seed);
  ParamSet velocity = zeros_like_trainable(params);

  auto record = [&](int tau) {
    EpochLog entry;
    entry.epoch = tau;
    entry.lr = config.lr_at(tau == 0 ? 0 : tau - 1);
    entry.train_err = eval_error(arch, params, train_eval);
    entry.test_err = eval_error(arch, params, test_set);
    series.checkpoints.push_back(params);
    series.log.push_back(entry);
    if (on_checkpoint) on_checkpoint(tau, series.checkpoints.back(), entry);
  };
  record(0);

  BackwardOptions options;
  options.skip_param_grads = &config.freeze;
  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_at(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(mix_seed(mix_seed(config.seed, fnv1a64("shuffle")),
                         static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.below(i)]);
    }
    Rng aug_rng(mix_seed(mix_seed(config.seed, fnv1a64("augment")),
                         static_cast<std::uint64_t>(epoch)));
    std::size_t step = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++step) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      Tensor x = train_set.gather_images(idx);
      if (policy.enabled) x = augment(x, policy, aug_rng);
      const auto grads = backward(arch, params, x, train_set.gather_labels(idx), options);
      if (!std::isfinite(grads.loss)) {
        throw Error("training diverged: non-finite loss at epoch " +
                    std::to_string(epoch) + ", step " + std::to_string(step));
      }
      sgd_step(params, grads.params, velocity, lr, config.momentum, config.weight_decay,
               config.freeze);
    }
    record(epoch + 1);
  }
  return series;
}

CheckpointSeries train_frozen(const ArchSpec& arch, const TrainConfig& config,
                              const Dataset& train_set, const Dataset& test_set,
                              const CheckpointCallback& on_checkpoint) {
  return train(arch, config, train_set, test_set, on_checkpoint);
}

ArchSpec remove_layers(const ArchSpec& arch,
                       const std::set<std::string, std::less<>>& selection) {
  if (selection.empty()) return arch;
  const auto dims = arch.shapes();
  std::vector<bool> drop(arch.layers.size(), false);
  for (const auto& name : selection) {
    std::size_t i = 0;
    while (i < arch.layers.size() && arch.layers[i].name != name) ++i;
    if (i == arch.layers.size()) {
      throw Error("cannot remove '" + name + "': no such layer in '" + arch.name + "'");
    }
    const LayerSpec& l = arch.layers[i];
    const std::string prev = i == 0 ? "input" : arch.layers[i - 1].name;
    const std::string next =
        i + 1 < arch.layers.size() ? arch.layers[i + 1].name : "logits";
    const bool removable =
        l.kind == LayerKind::resblock_identity ||
        (l.kind == LayerKind::dense && l.in_features == l.out_features);
    if (!removable || dims[i] != dims[i + 1]) {
      throw Error("cannot remove '" + name + "' (" + std::string(to_string(l.kind)) +
                  "): joining '" + prev + "' " + dims_string(dims[i]) + " to '" + next +
                  "' needs " + dims_string(dims[i + 1]));
    }
    drop[i] = true;
    if (l.kind == LayerKind::dense && i + 1 < arch.layers.size() &&
        arch.layers[i + 1].kind == LayerKind::relu) {
      drop[i + 1] = true;
    }
  }

  ArchSpec out = arch;
  out.layers.clear();
  std::set<std::string, std::less<>> removed;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (drop[i]) {
      removed.insert(arch.layers[i].name);
    } else {
      out.layers.push_back(arch.layers[i]);
    }
  }
  for (auto& stage : out.stages) {
    std::erase_if(stage.layers, [&](const std::string& s) { return removed.contains(s); });
  }
  std::erase_if(out.stages, [](const Stage& s) { return s.layers.empty(); });
  out.name = arch.name + "-removed" + std::to_string(selection.size());
  out.validate();
  return out;
}

}  // namespace lp
