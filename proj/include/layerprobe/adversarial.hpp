// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerprobe/arch.hpp"
#include "layerprobe/dataset.hpp"
#include "layerprobe/params.hpp"

namespace lp {

enum class AttackKind { fgsm, pgd };

/// Budgets are in [0, 1] pixel units and converted to the normalized input
/// space per channel (divided by the channel std).
struct AttackConfig {
  AttackKind kind = AttackKind::pgd;
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  int steps = 20;
  bool random_start = true;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const AttackConfig& c);
void from_json(const nlohmann::json& j, AttackConfig& c);

/// Per-channel epsilon, step and clip range in normalized units. Clipping is
/// off (infinite range) for non-pixel data.
struct AttackBounds {
  std::vector<float> epsilon;
  std::vector<float> alpha;
  std::vector<float> lo;
  std::vector<float> hi;
  std::size_t channel_area = 1;  // elements per channel within one example
};

AttackBounds attack_bounds(const Dataset& dataset, const AttackConfig& config);

/// A classifier that may draw a random instantiation per example. Each draw
/// depends on (call_seed, example id) only, so batching never changes it.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual const ArchSpec& arch() const = 0;
  virtual Tensor logits(const Tensor& x, std::span<const std::size_t> ids,
                        std::uint64_t call_seed) const = 0;
  /// d(mean cross-entropy)/dx through the instantiation drawn for each example.
  virtual Tensor input_gradient(const Tensor& x, const std::vector<int>& labels,
                                std::span<const std::size_t> ids,
                                std::uint64_t call_seed) const = 0;
  virtual nlohmann::json describe() const = 0;
};

/// The trained network as is.
class DeterministicClassifier : public Classifier {
 public:
  DeterministicClassifier(ArchSpec arch, ParamSet params);
  const ArchSpec& arch() const override { return arch_; }
  Tensor logits(const Tensor& x, std::span<const std::size_t> ids,
                std::uint64_t call_seed) const override;
  Tensor input_gradient(const Tensor& x, const std::vector<int>& labels,
                        std::span<const std::size_t> ids,
                        std::uint64_t call_seed) const override;
  nlohmann::json describe() const override;

 private:
  ArchSpec arch_;
  ParamSet params_;
};

struct StochasticConfig {
  int r = 4;  // pre-sampled weight sets per residual block
  int s = 1;  // stages re-randomized per inference
  std::uint64_t bank_seed = 0;
};

/// One replaced block: bank entry `bank` of residual block `block`.
struct Substitution {
  int block = 0;
  int bank = 0;
  auto operator<=>(const Substitution&) const = default;
};

/// Per inference, draws s distinct stages; in each, one residual block and one
/// of its r bank entries replace the trained weights.
class StochasticClassifier : public Classifier {
 public:
  /// Every residual block must have an identity skip. Banks are drawn once
  /// from each block's init distribution.
  StochasticClassifier(ArchSpec arch, ParamSet params, StochasticConfig config);

  /// Uses the given banks (bank[b][k] for residual block b) instead of
  /// sampling them.
  StochasticClassifier(ArchSpec arch, ParamSet params, StochasticConfig config,
                       std::vector<std::vector<LayerParams<float>>> banks);

  const ArchSpec& arch() const override { return arch_; }
  Tensor logits(const Tensor& x, std::span<const std::size_t> ids,
                std::uint64_t call_seed) const override;
  Tensor input_gradient(const Tensor& x, const std::vector<int>& labels,
                        std::span<const std::size_t> ids,
                        std::uint64_t call_seed) const override;
  nlohmann::json describe() const override;

  int num_stages() const { return static_cast<int>(stage_blocks_.size()); }
  const std::vector<std::string>& blocks() const { return blocks_; }

  /// Substitutions for one example, sorted; entries whose bank weights equal
  /// the trained weights bitwise are dropped.
  std::vector<Substitution> draw(std::size_t id, std::uint64_t call_seed) const;

 private:
  void init();
  template <typename Fn>
  void for_each_instantiation(std::span<const std::size_t> ids, std::uint64_t call_seed,
                              Fn&& fn) const;

  ArchSpec arch_;
  ParamSet params_;
  StochasticConfig config_;
  std::vector<std::string> blocks_;             // residual blocks, in order
  std::vector<std::vector<int>> stage_blocks_;  // indices into blocks_
  std::vector<std::vector<LayerParams<float>>> banks_;
  std::vector<std::vector<bool>> bank_is_trained_;
};

/// clip(x + eps * sign(grad)); throws on a non-finite gradient.
Tensor fgsm(const Classifier& model, const Tensor& x, const std::vector<int>& labels,
            std::span<const std::size_t> ids, const AttackBounds& bounds,
            std::uint64_t call_seed);

/// Iterated signed steps projected onto the eps-ball and the clip range,
/// optionally from a uniform random start; gradient query k uses its own
/// fresh draw. The random start depends on (config.seed, example id).
Tensor pgd(const Classifier& model, const Tensor& x, const std::vector<int>& labels,
           std::span<const std::size_t> ids, const AttackBounds& bounds,
           const AttackConfig& config, std::uint64_t call_seed);

/// Seed of gradient query `k` of an attack started with `call_seed`.
std::uint64_t query_seed(std::uint64_t call_seed, int k);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over repeats
  std::vector<double> values;
};

MeanStd mean_std(std::vector<double> values);

struct AttackEvalConfig {
  std::size_t subset = 1000;
  int repeats = 5;
  std::uint64_t seed = 0;
  std::size_t batch_size = 250;
  AttackConfig fgsm{AttackKind::fgsm, 8.0 / 255.0, 8.0 / 255.0, 1, false, 0};
  AttackConfig pgd{};
};

struct AttackRow {
  std::string config;
  MeanStd clean;  // accuracies in [0, 1]
  MeanStd fgsm;
  MeanStd pgd;
};

/// Fixed seeded subset of the test set; every repeat draws fresh
/// instantiations for evaluation and for every attack gradient query.
AttackRow eval_attack(const Classifier& model, const Dataset& test,
                      const AttackEvalConfig& config, const std::string& name);

/// Test subset chosen by eval_attack: a seeded sample of `subset` indices
/// (all of them when the test set is smaller), sorted.
std::vector<std::size_t> attack_subset(std::size_t test_size, std::size_t subset,
                                       std::uint64_t seed);

std::string attack_table_csv(const std::vector<AttackRow>& rows);
nlohmann::json attack_table_json(const std::vector<AttackRow>& rows,
                                 const nlohmann::json& metadata);

}  // namespace lp
