// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "layerprobe/arch.hpp"
#include "layerprobe/tensor.hpp"

namespace lp {

template <typename T>
struct ParamTensor {
  std::string name;
  BasicTensor<T> value;
  bool trainable = true;  // false for batch-norm running statistics
};

template <typename T>
using LayerParams = std::vector<ParamTensor<T>>;

/// All per-layer state of one model: weights, biases and batch-norm running
/// statistics, keyed by parametric layer name.
template <typename T>
class BasicParamSet {
 public:
  std::map<std::string, LayerParams<T>, std::less<>> layers;

  bool contains(std::string_view layer) const {
    return layers.find(layer) != layers.end();
  }
  LayerParams<T>& at(std::string_view layer);
  const LayerParams<T>& at(std::string_view layer) const;
  BasicTensor<T>& tensor(std::string_view layer, std::string_view name);
  const BasicTensor<T>& tensor(std::string_view layer,
                               std::string_view name) const;

  std::size_t trainable_count() const;

  template <typename U>
  BasicParamSet<U> cast() const {
    BasicParamSet<U> out;
    for (const auto& [layer, tensors] : layers) {
      auto& dst = out.layers[layer];
      for (const auto& t : tensors) {
        dst.push_back({t.name, t.value.template cast<U>(), t.trainable});
      }
    }
    return out;
  }

  bool bitwise_equal(const BasicParamSet& other) const;
};

using ParamSet = BasicParamSet<float>;

/// Throws unless `params` has exactly the parametric layers of `arch` with
/// matching tensor names and dims.
template <typename T>
void check_params(const ArchSpec& arch, const BasicParamSet<T>& params);

/// Draws one layer's parameters from its init distribution. The stream is a
/// function of (seed, layer name, tensor name) only, so removing or freezing
/// other layers never changes what this layer receives.
LayerParams<float> sample_layer(const LayerSpec& spec, std::uint64_t seed);

/// Checkpoint-0 parameters for `arch`; bitwise reproducible given the seed.
ParamSet init_params(const ArchSpec& arch, std::uint64_t seed);

/// Zero-filled trainable tensors with the layout of `params`.
template <typename T>
BasicParamSet<T> zeros_like_trainable(const BasicParamSet<T>& params);

}  // namespace lp
