// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "layerprobe/params.hpp"

#include "layerprobe/rng.hpp"

namespace lp {

template <typename T>
LayerParams<T>& BasicParamSet<T>::at(std::string_view layer) {
  auto it = layers.find(layer);
  if (it == layers.end()) {
    throw Error("no parameters for layer '" + std::string(layer) + "'");
  }
  return it->second;
}

template <typename T>
const LayerParams<T>& BasicParamSet<T>::at(std::string_view layer) const {
  auto it = layers.find(layer);
  if (it == layers.end()) {
    throw Error("no parameters for layer '" + std::string(layer) + "'");
  }
  return it->second;
}

template <typename T>
BasicTensor<T>& BasicParamSet<T>::tensor(std::string_view layer,
                                         std::string_view name) {
  for (auto& t : at(layer)) {
    if (t.name == name) return t.value;
  }
  throw Error("layer '" + std::string(layer) + "' has no tensor '" +
              std::string(name) + "'");
}

template <typename T>
const BasicTensor<T>& BasicParamSet<T>::tensor(std::string_view layer,
                                               std::string_view name) const {
  for (const auto& t : at(layer)) {
    if (t.name == name) return t.value;
  }
  throw Error("layer '" + std::string(layer) + "' has no tensor '" +
              std::string(name) + "'");
}

template <typename T>
std::size_t BasicParamSet<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [_, tensors] : layers) {
    for (const auto& t : tensors) {
      if (t.trainable) n += t.value.size();
    }
  }
  return n;
}

template <typename T>
bool BasicParamSet<T>::bitwise_equal(const BasicParamSet& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (auto a = layers.begin(), b = other.layers.begin(); a != layers.end();
       ++a, ++b) {
    if (a->first != b->first || a->second.size() != b->second.size()) return false;
    for (std::size_t i = 0; i < a->second.size(); ++i) {
      const auto& x = a->second[i];
      const auto& y = b->second[i];
      if (x.name != y.name || x.trainable != y.trainable ||
          !x.value.bitwise_equal(y.value)) {
        return false;
      }
    }
  }
  return true;
}

template class BasicParamSet<float>;
template class BasicParamSet<double>;

template <typename T>
void check_params(const ArchSpec& arch, const BasicParamSet<T>& params) {
  const auto names = arch.parametric_layers();
  if (names.size() != params.layers.size()) {
    throw Error("parameter set has " + std::to_string(params.layers.size()) +
                " layers, arch '" + arch.name + "' has " +
                std::to_string(names.size()));
  }
  for (const auto& name : names) {
    if (!params.contains(name)) {
      throw Error("parameter set lacks layer '" + name + "'");
    }
    const auto slots = tensor_slots(arch.layer(name));
    const auto& tensors = params.at(name);
    if (slots.size() != tensors.size()) {
      throw Error("layer '" + name + "': expected " + std::to_string(slots.size()) +
                  " tensors, found " + std::to_string(tensors.size()));
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (slots[i].name != tensors[i].name || slots[i].dims != tensors[i].value.dims()) {
        throw Error("layer '" + name + "': tensor '" + tensors[i].name + "' " +
                    dims_string(tensors[i].value.dims()) + " does not match '" +
                    slots[i].name + "' " + dims_string(slots[i].dims));
      }
    }
  }
}

template void check_params(const ArchSpec&, const BasicParamSet<float>&);
template void check_params(const ArchSpec&, const BasicParamSet<double>&);

LayerParams<float> sample_layer(const LayerSpec& spec, std::uint64_t seed) {
  LayerParams<float> out;
  const std::uint64_t layer_stream = mix_seed(seed, fnv1a64(spec.name));
  for (const auto& slot : tensor_slots(spec)) {
    Tensor t(slot.dims);
    if (slot.family == InitFamily::constant) {
      t.fill(static_cast<float>(slot.constant));
    } else {
      Rng rng(mix_seed(layer_stream, fnv1a64(slot.name)));
      for (float& v : t.values()) {
        v = static_cast<float>(rng.uniform(-slot.bound, slot.bound));
      }
    }
    out.push_back({slot.name, std::move(t), slot.trainable});
  }
  return out;
}

ParamSet init_params(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  ParamSet params;
  for (const auto& spec : arch.layers) {
    if (is_parametric(spec.kind)) params.layers[spec.name] = sample_layer(spec, seed);
  }
  return params;
}

template <typename T>
BasicParamSet<T> zeros_like_trainable(const BasicParamSet<T>& params) {
  BasicParamSet<T> out;
  for (const auto& [layer, tensors] : params.layers) {
    auto& dst = out.layers[layer];
    for (const auto& t : tensors) {
      if (t.trainable) dst.push_back({t.name, BasicTensor<T>(t.value.dims()), true});
    }
  }
  return out;
}

template BasicParamSet<float> zeros_like_trainable(const BasicParamSet<float>&);
template BasicParamSet<double> zeros_like_trainable(const BasicParamSet<double>&);

}  // namespace lp
