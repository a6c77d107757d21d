// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "layerprobe/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "layerprobe/nn.hpp"
#include "layerprobe/rng.hpp"

namespace lp {

void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = {{"kind", c.kind == AttackKind::fgsm ? "fgsm" : "pgd"},
       {"epsilon", c.epsilon},
       {"alpha", c.alpha},
       {"steps", c.steps},
       {"random_start", c.random_start},
       {"seed", c.seed},
       {"units", "[0,1] pixels, divided by the channel std"}};
}

void from_json(const nlohmann::json& j, AttackConfig& c) {
  const AttackConfig d;
  const std::string kind = j.value("kind", std::string("pgd"));
  if (kind != "fgsm" && kind != "pgd") throw Error("unknown attack kind '" + kind + "'");
  c.kind = kind == "fgsm" ? AttackKind::fgsm : AttackKind::pgd;
  c.epsilon = j.value("epsilon", d.epsilon);
  c.alpha = j.value("alpha", d.alpha);
  c.steps = j.value("steps", d.steps);
  c.random_start = j.value("random_start", d.random_start);
  c.seed = j.value("seed", d.seed);
}

AttackBounds attack_bounds(const Dataset& dataset, const AttackConfig& config) {
  if (!(config.epsilon >= 0.0)) throw Error("attack epsilon must be non-negative");
  if (config.kind == AttackKind::pgd && config.steps < 1) {
    throw Error("pgd needs at least one step");
  }
  const Dims ex = dataset.example_dims();
  const int channels = ex.size() == 3 ? ex[0] : 1;
  AttackBounds b;
  b.channel_area = element_count(ex) / static_cast<std::size_t>(channels);
  const float inf = std::numeric_limits<float>::infinity();
  for (int c = 0; c < channels; ++c) {
    const double mean = dataset.normalization.mean_for(c);
    const double std = dataset.normalization.std_for(c);
    b.epsilon.push_back(static_cast<float>(config.epsilon / std));
    b.alpha.push_back(static_cast<float>(config.alpha / std));
    b.lo.push_back(dataset.pixel_data ? static_cast<float>((0.0 - mean) / std) : -inf);
    b.hi.push_back(dataset.pixel_data ? static_cast<float>((1.0 - mean) / std) : inf);
  }
  return b;
}

// --- deterministic ---------------------------------------------------------------

DeterministicClassifier::DeterministicClassifier(ArchSpec arch, ParamSet params)
    : arch_(std::move(arch)), params_(std::move(params)) {
  check_params(arch_, params_);
}

Tensor DeterministicClassifier::logits(const Tensor& x, std::span<const std::size_t>,
                                       std::uint64_t) const {
  return forward(arch_, params_, x);
}

Tensor DeterministicClassifier::input_gradient(const Tensor& x, const std::vector<int>& labels,
                                               std::span<const std::size_t>,
                                               std::uint64_t) const {
  BackwardOptions o;
  o.mode = Mode::eval;
  o.param_grads = false;
  o.input_grad = true;
  ParamSet& p = const_cast<ParamSet&>(params_);  // eval mode leaves params untouched
  return std::move(*backward(arch_, p, x, labels, o).input);
}

nlohmann::json DeterministicClassifier::describe() const {
  return {{"kind", "baseline"}, {"arch", arch_.name}};
}

// --- stochastic ------------------------------------------------------------------

StochasticClassifier::StochasticClassifier(ArchSpec arch, ParamSet params,
                                           StochasticConfig config)
    : arch_(std::move(arch)), params_(std::move(params)), config_(config) {
  init();
  if (config_.r < 1) throw Error("stochastic classifier needs r >= 1");
  for (const auto& b : blocks_) {
    std::vector<LayerParams<float>> bank;
    for (int k = 0; k < config_.r; ++k) {
      bank.push_back(sample_layer(
          arch_.layer(b),
          mix_seed(mix_seed(config_.bank_seed, fnv1a64("bank")), static_cast<std::uint64_t>(k))));
    }
    banks_.push_back(std::move(bank));
  }
  bank_is_trained_.assign(blocks_.size(), std::vector<bool>(config_.r, false));
}

StochasticClassifier::StochasticClassifier(ArchSpec arch, ParamSet params,
                                           StochasticConfig config,
                                           std::vector<std::vector<LayerParams<float>>> banks)
    : arch_(std::move(arch)), params_(std::move(params)), config_(config),
      banks_(std::move(banks)) {
  init();
  if (banks_.size() != blocks_.size()) {
    throw Error("stochastic classifier: " + std::to_string(banks_.size()) + " banks for " +
                std::to_string(blocks_.size()) + " residual blocks");
  }
  bank_is_trained_.resize(blocks_.size());
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    if (static_cast<int>(banks_[b].size()) != config_.r) {
      throw Error("stochastic classifier: block '" + blocks_[b] + "' has " +
                  std::to_string(banks_[b].size()) + " bank entries, r = " +
                  std::to_string(config_.r));
    }
    for (const auto& entry : banks_[b]) {
      ParamSet probe = params_;
      probe.at(blocks_[b]) = entry;
      check_params(arch_, probe);
      bank_is_trained_[b].push_back(probe.bitwise_equal(params_));
    }
  }
}

void StochasticClassifier::init() {
  check_params(arch_, params_);
  for (const auto& stage : arch_.stages) {
    std::vector<int> members;
    for (const auto& l : stage.layers) {
      const auto kind = arch_.layer(l).kind;
      if (kind == LayerKind::resblock_downsample) {
        throw Error("stochastic classifier: block '" + l +
                    "' has a downsample skip; use the explicit-downsample variant");
      }
      if (kind == LayerKind::resblock_identity) {
        members.push_back(static_cast<int>(blocks_.size()));
        blocks_.push_back(l);
      }
    }
    if (!members.empty()) stage_blocks_.push_back(std::move(members));
  }
  if (config_.s < 0 || config_.s > num_stages()) {
    throw Error("stochastic classifier: s = " + std::to_string(config_.s) +
                " outside [0, " + std::to_string(num_stages()) + "]");
  }
}

std::vector<Substitution> StochasticClassifier::draw(std::size_t id,
                                                     std::uint64_t call_seed) const {
  std::vector<Substitution> out;
  if (config_.s == 0) return out;
  Rng rng(mix_seed(call_seed, static_cast<std::uint64_t>(id)));
  std::vector<int> stages(stage_blocks_.size());
  std::iota(stages.begin(), stages.end(), 0);
  for (int k = 0; k < config_.s; ++k) {
    const std::size_t j = k + rng.below(stages.size() - k);
    std::swap(stages[k], stages[j]);
    const auto& members = stage_blocks_[stages[k]];
    const int block = members[rng.below(members.size())];
    const int bank = static_cast<int>(rng.below(static_cast<std::uint64_t>(config_.r)));
    if (!bank_is_trained_[block][bank]) out.push_back({block, bank});
  }
  std::sort(out.begin(), out.end());
  return out;
}

template <typename Fn>
void StochasticClassifier::for_each_instantiation(std::span<const std::size_t> ids,
                                                  std::uint64_t call_seed, Fn&& fn) const {
  std::map<std::vector<Substitution>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ids.size(); ++i) groups[draw(ids[i], call_seed)].push_back(i);
  for (const auto& [subs, positions] : groups) {
    if (subs.empty()) {
      fn(params_, positions);
      continue;
    }
    ParamSet p = params_;
    for (const auto& s : subs) p.at(blocks_[s.block]) = banks_[s.block][s.bank];
    fn(p, positions);
  }
}

namespace {

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  if (rows.size() == static_cast<std::size_t>(x.dim(0))) return x;  // positions are 0..n-1
  Dims dims = x.dims();
  dims[0] = static_cast<int>(rows.size());
  Tensor out(dims);
  const std::size_t m = x.size() / static_cast<std::size_t>(x.dim(0));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.data() + rows[i] * m, m, out.data() + i * m);
  }
  return out;
}

void scatter_rows(const Tensor& src, const std::vector<std::size_t>& rows, Tensor& dst,
                  float scale = 1.0f) {
  const std::size_t m = src.size() / rows.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const float* s = src.data() + i * m;
    float* d = dst.data() + rows[i] * m;
    for (std::size_t k = 0; k < m; ++k) d[k] = s[k] * scale;
  }
}

void check_ids(const Tensor& x, std::span<const std::size_t> ids) {
  if (x.rank() < 1 || ids.size() != static_cast<std::size_t>(x.dim(0))) {
    throw Error("classifier: " + std::to_string(ids.size()) + " example ids for batch " +
                dims_string(x.dims()));
  }
}

}  // namespace

Tensor StochasticClassifier::logits(const Tensor& x, std::span<const std::size_t> ids,
                                    std::uint64_t call_seed) const {
  check_ids(x, ids);
  Tensor out({x.dim(0), arch_.num_classes});
  for_each_instantiation(ids, call_seed,
                         [&](const ParamSet& p, const std::vector<std::size_t>& pos) {
                           scatter_rows(forward(arch_, p, gather_rows(x, pos)), pos, out);
                         });
  return out;
}

Tensor StochasticClassifier::input_gradient(const Tensor& x, const std::vector<int>& labels,
                                            std::span<const std::size_t> ids,
                                            std::uint64_t call_seed) const {
  check_ids(x, ids);
  Tensor out(x.dims());
  BackwardOptions o;
  o.mode = Mode::eval;
  o.param_grads = false;
  o.input_grad = true;
  const float n = static_cast<float>(ids.size());
  for_each_instantiation(
      ids, call_seed, [&](const ParamSet& p, const std::vector<std::size_t>& pos) {
        std::vector<int> y(pos.size());
        for (std::size_t i = 0; i < pos.size(); ++i) y[i] = labels.at(pos[i]);
        ParamSet& mp = const_cast<ParamSet&>(p);  // eval mode leaves params untouched
        const auto g = backward(arch_, mp, gather_rows(x, pos), y, o);
        // Group gradients are means over the group; rescale to the batch mean.
        scatter_rows(*g.input, pos, out, static_cast<float>(pos.size()) / n);
      });
  return out;
}

nlohmann::json StochasticClassifier::describe() const {
  return {{"kind", "stochastic"},
          {"arch", arch_.name},
          {"r", config_.r},
          {"s", config_.s},
          {"S", num_stages()},
          {"bank_seed", config_.bank_seed},
          {"draw", "per example: s distinct stages, one block and one bank entry each"}};
}

// --- attacks ---------------------------------------------------------------------

std::uint64_t query_seed(std::uint64_t call_seed, int k) {
  return mix_seed(mix_seed(call_seed, fnv1a64("query")), static_cast<std::uint64_t>(k));
}

namespace {

float sign(float g) { return g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f); }

void check_gradient(const Tensor& g) {
  if (!all_finite(g)) throw Error("attack: non-finite input gradient");
}

void check_range(const Tensor& x, const AttackBounds& b) {
  const std::size_t m = x.size() / static_cast<std::size_t>(x.dim(0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = (i % m) / b.channel_area;
    if (x[i] < b.lo[c] || x[i] > b.hi[c]) {
      throw Error("attack: input outside the clip range at element " + std::to_string(i));
    }
  }
}

// x_next = clip(clamp(x + step * sign(g), x0 - eps, x0 + eps))
void signed_step(const Tensor& x0, Tensor& x, const Tensor& g, const AttackBounds& b,
                 const std::vector<float>& step) {
  const std::size_t m = x.size() / static_cast<std::size_t>(x.dim(0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = (i % m) / b.channel_area;
    float v = x[i] + step[c] * sign(g[i]);
    v = std::clamp(v, x0[i] - b.epsilon[c], x0[i] + b.epsilon[c]);
    x[i] = std::clamp(v, b.lo[c], b.hi[c]);
  }
}

}  // namespace

Tensor fgsm(const Classifier& model, const Tensor& x, const std::vector<int>& labels,
            std::span<const std::size_t> ids, const AttackBounds& bounds,
            std::uint64_t call_seed) {
  check_range(x, bounds);
  const Tensor g = model.input_gradient(x, labels, ids, query_seed(call_seed, 0));
  check_gradient(g);
  Tensor adv = x;
  signed_step(x, adv, g, bounds, bounds.epsilon);
  return adv;
}

Tensor pgd(const Classifier& model, const Tensor& x, const std::vector<int>& labels,
           std::span<const std::size_t> ids, const AttackBounds& bounds,
           const AttackConfig& config, std::uint64_t call_seed) {
  if (config.steps < 1) throw Error("pgd needs at least one step");
  check_range(x, bounds);
  Tensor adv = x;
  const std::size_t m = x.size() / static_cast<std::size_t>(x.dim(0));
  if (config.random_start) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Rng rng(mix_seed(mix_seed(config.seed, fnv1a64("pgd.start")), ids[i]));
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t c = k / bounds.channel_area;
        const float e = bounds.epsilon[c];
        float& v = adv[i * m + k];
        v = std::clamp(v + static_cast<float>(rng.uniform(-e, e)), bounds.lo[c], bounds.hi[c]);
      }
    }
  }
  for (int step = 0; step < config.steps; ++step) {
    const Tensor g = model.input_gradient(adv, labels, ids, query_seed(call_seed, step));
    check_gradient(g);
    signed_step(x, adv, g, bounds, bounds.alpha);
  }
  return adv;
}

// --- evaluation ------------------------------------------------------------------

MeanStd mean_std(std::vector<double> values) {
  MeanStd out;
  out.values = std::move(values);
  if (out.values.empty()) return out;
  const double n = static_cast<double>(out.values.size());
  out.mean = std::accumulate(out.values.begin(), out.values.end(), 0.0) / n;
  if (out.values.size() > 1) {
    double ss = 0.0;
    for (double v : out.values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

std::vector<std::size_t> attack_subset(std::size_t test_size, std::size_t subset,
                                       std::uint64_t seed) {
  std::vector<std::size_t> order(test_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, fnv1a64("attack.subset")));
  const std::size_t n = std::min(subset, test_size);
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(order[i], order[i + rng.below(test_size - i)]);
  }
  order.resize(n);
  std::sort(order.begin(), order.end());
  return order;
}

AttackRow eval_attack(const Classifier& model, const Dataset& test,
                      const AttackEvalConfig& config, const std::string& name) {
  if (config.repeats < 1) throw Error("eval_attack needs at least one repeat");
  const auto subset = attack_subset(test.size(), config.subset, config.seed);
  if (subset.empty()) throw Error("eval_attack: empty test subset");
  AttackConfig fgsm_cfg = config.fgsm;
  fgsm_cfg.kind = AttackKind::fgsm;
  const AttackBounds fgsm_bounds = attack_bounds(test, fgsm_cfg);
  const AttackBounds pgd_bounds = attack_bounds(test, config.pgd);

  std::vector<double> clean, fgsm_acc, pgd_acc;
  for (int rep = 0; rep < config.repeats; ++rep) {
    const std::uint64_t rep_seed =
        mix_seed(mix_seed(config.seed, fnv1a64("repeat")), static_cast<std::uint64_t>(rep));
    auto seed_for = [&](const char* what) { return mix_seed(rep_seed, fnv1a64(what)); };
    std::size_t ok_clean = 0, ok_fgsm = 0, ok_pgd = 0;
    for (std::size_t start = 0; start < subset.size(); start += config.batch_size) {
      const std::size_t stop = std::min(subset.size(), start + config.batch_size);
      const std::span<const std::size_t> ids(subset.data() + start, stop - start);
      const Tensor x = test.gather_images(ids);
      const std::vector<int> y = test.gather_labels(ids);
      auto count = [&](const Tensor& input, const char* what) {
        const auto pred = argmax_rows(model.logits(input, ids, seed_for(what)));
        std::size_t ok = 0;
        for (std::size_t i = 0; i < y.size(); ++i) ok += pred[i] == y[i];
        return ok;
      };
      ok_clean += count(x, "eval.clean");
      ok_fgsm += count(fgsm(model, x, y, ids, fgsm_bounds, seed_for("attack.fgsm")),
                       "eval.fgsm");
      ok_pgd += count(pgd(model, x, y, ids, pgd_bounds, config.pgd, seed_for("attack.pgd")),
                      "eval.pgd");
    }
    const double n = static_cast<double>(subset.size());
    clean.push_back(static_cast<double>(ok_clean) / n);
    fgsm_acc.push_back(static_cast<double>(ok_fgsm) / n);
    pgd_acc.push_back(static_cast<double>(ok_pgd) / n);
  }
  return {name, mean_std(clean), mean_std(fgsm_acc), mean_std(pgd_acc)};
}

namespace {

std::string pct(double v) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << 100.0 * v;
  return s.str();
}

nlohmann::json mean_std_json(const MeanStd& m) {
  return {{"mean", m.mean}, {"std", m.std}, {"values", m.values}};
}

}  // namespace

std::string attack_table_csv(const std::vector<AttackRow>& rows) {
  std::string out = "config,clean,fgsm,pgd\n";
  for (const auto& r : rows) {
    out += r.config + ',' + pct(r.clean.mean) + "+-" + pct(r.clean.std) + ',' +
           pct(r.fgsm.mean) + "+-" + pct(r.fgsm.std) + ',' + pct(r.pgd.mean) + "+-" +
           pct(r.pgd.std) + '\n';
  }
  return out;
}

nlohmann::json attack_table_json(const std::vector<AttackRow>& rows,
                                 const nlohmann::json& metadata) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& r : rows) {
    table.push_back({{"config", r.config},
                     {"clean", mean_std_json(r.clean)},
                     {"fgsm", mean_std_json(r.fgsm)},
                     {"pgd", mean_std_json(r.pgd)}});
  }
  return {{"metadata", metadata}, {"rows", table}};
}

}  // namespace lp
