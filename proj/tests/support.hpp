// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

// Helpers shared by the unit tests and the acceptance suite.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "layerprobe/arch.hpp"
#include "layerprobe/dataset.hpp"
#include "layerprobe/nn.hpp"
#include "layerprobe/params.hpp"
#include "layerprobe/rng.hpp"

namespace lp::testing {

inline std::filesystem::path data_dir() {
  if (const char* env = std::getenv("LAYERPROBE_DATA_DIR")) return env;
#ifdef LAYERPROBE_DATA_DIR
  return LAYERPROBE_DATA_DIR;
#else
  return "data";
#endif
}

inline bool have_mnist() {
  return std::filesystem::exists(data_dir() / "mnist" / "train-images-idx3-ubyte");
}

inline bool have_cifar() {
  return std::filesystem::exists(data_dir() / "cifar-10-batches-bin" / "test_batch.bin");
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("layerprobe-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline LayerSpec dense(std::string name, int in, int out,
                       InitFamily family = InitFamily::uniform_he) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::dense;
  l.in_features = in;
  l.out_features = out;
  l.init.family = family;
  return l;
}

inline LayerSpec conv(std::string name, int in, int out, int kernel, int stride, int padding) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::conv2d;
  l.in_channels = in;
  l.out_channels = out;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.init.family = InitFamily::uniform_he;
  return l;
}

inline LayerSpec simple(std::string name, LayerKind kind) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = kind;
  return l;
}

inline LayerSpec maxpool(std::string name, int kernel, int stride) {
  LayerSpec l = simple(std::move(name), LayerKind::maxpool);
  l.kernel = kernel;
  l.stride = stride;
  return l;
}

inline LayerSpec batchnorm(std::string name, int channels) {
  LayerSpec l = simple(std::move(name), LayerKind::batchnorm);
  l.in_channels = channels;
  return l;
}

inline LayerSpec resblock(std::string name, LayerKind kind, int in, int out, int stride,
                          bool bottleneck = false, bool bn = false) {
  LayerSpec l = simple(std::move(name), kind);
  l.in_channels = in;
  l.out_channels = out;
  l.stride = stride;
  l.bottleneck = bottleneck;
  l.batchnorm = bn;
  l.init.family = InitFamily::uniform_he;
  return l;
}

inline ArchSpec make_arch(std::string name, Dims input, int classes,
                          std::vector<LayerSpec> layers) {
  ArchSpec a;
  a.name = std::move(name);
  a.input_dims = std::move(input);
  a.num_classes = classes;
  a.layers = std::move(layers);
  a.validate();
  return a;
}

template <typename T>
BasicTensor<T> random_tensor(Dims dims, std::uint64_t seed, double scale = 1.0) {
  BasicTensor<T> t(std::move(dims));
  Rng rng(seed);
  for (auto& v : t.storage()) v = static_cast<T>(scale * rng.normal());
  return t;
}

/// Replaces every trainable tensor with N(0, scale^2) draws so that biases,
/// shifts and scales all carry non-trivial values.
template <typename T>
void randomize_trainable(BasicParamSet<T>& p, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& [layer, tensors] : p.layers) {
    for (auto& t : tensors) {
      if (!t.trainable) continue;
      for (auto& v : t.value.storage()) v = static_cast<T>(scale * rng.normal());
    }
  }
}

struct GradCheckResult {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
  // Largest disagreement between the step-h and step-h/2 difference
  // quotients; large values mean a ReLU or max-pool kink lies within h.
  double max_fd_spread = 0.0;
};

/// Entries whose gradient magnitude is below this are compared in absolute
/// terms (the difference quotient carries ~1e-9 absolute error at h = 1e-3).
inline constexpr double kGradFloor = 1e-4;

inline double rel_error(double a, double b, double floor = kGradFloor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Analytic vs central-difference gradients (64-bit) for every trainable
/// parameter and every input entry.
inline GradCheckResult grad_check(const ArchSpec& arch, BasicParamSet<double> params,
                                  const BasicTensor<double>& x, const std::vector<int>& y,
                                  Mode mode, double h = 1e-3) {
  BackwardOptions o;
  o.mode = mode;
  o.input_grad = true;
  BasicParamSet<double> work = params;
  const auto g = backward(arch, work, x, y, o);
  auto loss = [&](const BasicParamSet<double>& p, const BasicTensor<double>& in) {
    BasicParamSet<double> copy = p;
    const auto logits = forward(arch, copy, in, mode);
    return softmax_cross_entropy(logits, y, static_cast<BasicTensor<double>*>(nullptr));
  };
  GradCheckResult r;
  // Central differences of f at step h and h/2 around *slot.
  auto quotients = [&](double* slot, auto&& f) {
    const double saved = *slot;
    double q[2];
    for (int k = 0; k < 2; ++k) {
      const double step = k == 0 ? h : h / 2;
      *slot = saved + step;
      const double lp = f();
      *slot = saved - step;
      const double lm = f();
      q[k] = (lp - lm) / (2 * step);
    }
    *slot = saved;
    return std::pair{q[0], q[1]};
  };
  auto record = [&](double analytic, std::pair<double, double> numeric, const std::string& what) {
    const double e = rel_error(analytic, numeric.first);
    r.max_fd_spread = std::max(r.max_fd_spread, rel_error(numeric.first, numeric.second));
    ++r.checked;
    if (e > r.max_rel) {
      r.max_rel = e;
      r.worst = what + " analytic=" + std::to_string(analytic) +
                " numeric=" + std::to_string(numeric.first);
    }
  };
  for (auto& [layer, tensors] : params.layers) {
    std::size_t k = 0;
    for (auto& t : tensors) {
      if (!t.trainable) continue;
      const auto& ga = g.params.at(layer).at(k++).value;
      for (std::size_t i = 0; i < t.value.size(); ++i) {
        record(ga[i], quotients(&t.value[i], [&] { return loss(params, x); }),
               layer + "/" + t.name + "[" + std::to_string(i) + "]");
      }
    }
  }
  BasicTensor<double> xin = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    record((*g.input)[i], quotients(&xin[i], [&] { return loss(params, xin); }),
           "input[" + std::to_string(i) + "]");
  }
  return r;
}

struct GradCase {
  std::string name;
  ArchSpec arch;
  Mode mode = Mode::train;
  int batch = 3;
};

/// Small instances (<= 1e3 parameters) covering every layer kind.
inline std::vector<GradCase> grad_cases() {
  using K = LayerKind;
  std::vector<GradCase> c;
  c.push_back({"dense", make_arch("g-dense", {6}, 4, {dense("fc", 6, 4)})});
  c.push_back({"dense-relu-dense",
               make_arch("g-mlp", {6}, 3,
                         {dense("fc1", 6, 8), simple("fc1.relu", K::relu), dense("fc2", 8, 3)})});
  c.push_back({"conv3x3-s1",
               make_arch("g-conv", {2, 5, 5}, 3,
                         {conv("c", 2, 3, 3, 1, 1), simple("flat", K::flatten),
                          dense("fc", 75, 3)})});
  c.push_back({"conv3x3-s2",
               make_arch("g-conv-s2", {2, 6, 6}, 3,
                         {conv("c", 2, 3, 3, 2, 1), simple("flat", K::flatten),
                          dense("fc", 27, 3)})});
  c.push_back({"conv1x1-and-2x2",
               make_arch("g-conv-k", {2, 5, 5}, 3,
                         {conv("c1", 2, 3, 1, 1, 0), conv("c2", 3, 2, 2, 2, 0),
                          simple("flat", K::flatten), dense("fc", 8, 3)})});
  c.push_back({"relu-maxpool",
               make_arch("g-pool", {2, 6, 6}, 3,
                         {conv("c", 2, 3, 3, 1, 1), simple("relu", K::relu), maxpool("pool", 2, 2),
                          simple("flat", K::flatten), dense("fc", 27, 3)})});
  c.push_back({"avgpool-global",
               make_arch("g-gap", {2, 4, 4}, 3,
                         {conv("c", 2, 4, 3, 1, 1), simple("gap", K::avgpool_global),
                          dense("fc", 4, 3)})});
  c.push_back({"batchnorm-spatial-train",
               make_arch("g-bn", {2, 4, 4}, 3,
                         {conv("c", 2, 3, 3, 1, 1), batchnorm("bn", 3), simple("relu", K::relu),
                          simple("flat", K::flatten), dense("fc", 48, 3)}),
               Mode::train, 4});
  c.push_back({"batchnorm-spatial-eval",
               make_arch("g-bn-eval", {2, 4, 4}, 3,
                         {conv("c", 2, 3, 3, 1, 1), batchnorm("bn", 3), simple("relu", K::relu),
                          simple("flat", K::flatten), dense("fc", 48, 3)}),
               Mode::eval});
  c.push_back({"batchnorm-dense-train",
               make_arch("g-bn1d", {5}, 3,
                         {dense("fc1", 5, 6), batchnorm("bn", 6), simple("relu", K::relu),
                          dense("fc2", 6, 3)}),
               Mode::train, 5});
  c.push_back({"resblock-identity",
               make_arch("g-res-id", {2, 4, 4}, 3,
                         {conv("stem", 2, 3, 3, 1, 1),
                          resblock("blk", K::resblock_identity, 3, 3, 1),
                          simple("gap", K::avgpool_global), dense("fc", 3, 3)})});
  c.push_back({"resblock-identity-bn",
               make_arch("g-res-id-bn", {2, 4, 4}, 3,
                         {conv("stem", 2, 3, 3, 1, 1),
                          resblock("blk", K::resblock_identity, 3, 3, 1, false, true),
                          simple("gap", K::avgpool_global), dense("fc", 3, 3)}),
               Mode::train, 4});
  c.push_back({"resblock-identity-bottleneck",
               make_arch("g-res-bneck", {4, 4, 4}, 3,
                         {resblock("blk", K::resblock_identity, 4, 4, 1, true),
                          simple("gap", K::avgpool_global), dense("fc", 4, 3)})});
  c.push_back({"resblock-downsample",
               make_arch("g-res-down", {2, 6, 6}, 3,
                         {conv("stem", 2, 3, 3, 1, 1),
                          resblock("blk", K::resblock_downsample, 3, 4, 2),
                          simple("gap", K::avgpool_global), dense("fc", 4, 3)})});
  c.push_back({"resblock-downsample-bottleneck-bn",
               make_arch("g-res-down-bneck", {4, 6, 6}, 3,
                         {resblock("blk", K::resblock_downsample, 4, 8, 2, true, true),
                          simple("gap", K::avgpool_global), dense("fc", 8, 3)}),
               Mode::train, 4});
  return c;
}

/// Runs grad_check on the first draw (seed, seed + 1, ...) where the
/// difference quotients are stable under halving the step, i.e. no kink lies
/// within h of any perturbed point. Weights come from the init distribution;
/// biases and batch-norm affine parameters get noise so they are exercised.
inline GradCheckResult run_grad_case(const GradCase& gc, std::uint64_t seed,
                                     int max_draws = 50, int* draws_used = nullptr) {
  GradCheckResult r;
  for (int d = 0; d < max_draws; ++d) {
    const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(d));
    auto params = init_params(gc.arch, s).cast<double>();
    Rng rng(mix_seed(s, 1));
    for (auto& [layer, tensors] : params.layers) {
      for (auto& t : tensors) {
        if (t.name.ends_with("weight")) continue;
        for (auto& v : t.value.storage()) {
          if (t.name.ends_with("running_var")) {
            v = 0.5 + rng.uniform();
          } else {
            v = (t.name.ends_with("gamma") ? 1.0 : 0.0) + 0.2 * rng.normal();
          }
        }
      }
    }
    Dims dims = gc.arch.input_dims;
    dims.insert(dims.begin(), gc.batch);
    const auto x = random_tensor<double>(dims, mix_seed(s, 2));
    std::vector<int> y(gc.batch);
    for (int i = 0; i < gc.batch; ++i) y[i] = i % gc.arch.num_classes;
    r = grad_check(gc.arch, params, x, y, gc.mode);
    if (draws_used) *draws_used = d + 1;
    if (r.max_fd_spread < 1e-5) return r;
  }
  return r;
}

}  // namespace lp::testing
