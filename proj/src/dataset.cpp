// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "layerprobe/dataset.hpp"

#include <algorithm>
#include <numeric>

namespace lp {

std::size_t Dataset::example_size() const {
  return images.rank() == 0 ? 0 : element_count(example_dims());
}

void Dataset::validate() const {
  if (images.rank() < 2) throw Error("dataset '" + id + "': images must be [N, ...]");
  if (static_cast<std::size_t>(images.dim(0)) != labels.size()) {
    throw Error("dataset '" + id + "': " + std::to_string(images.dim(0)) +
                " images but " + std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw Error("dataset '" + id + "': label " + std::to_string(labels[i]) +
                  " of example " + std::to_string(i) + " outside [0, " +
                  std::to_string(num_classes) + ")");
    }
  }
}

Tensor Dataset::gather_images(std::span<const std::size_t> indices) const {
  const std::size_t m = example_size();
  Dims dims = example_dims();
  dims.insert(dims.begin(), static_cast<int>(indices.size()));
  std::vector<float> out(indices.size() * m);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw Error("dataset index out of range");
    std::copy_n(images.data() + indices[i] * m, m, out.data() + i * m);
  }
  return Tensor(std::move(dims), std::move(out));
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels.at(indices[i]);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.id = id;
  out.num_classes = num_classes;
  out.split = split;
  out.normalization = normalization;
  out.pixel_data = pixel_data;
  out.images = gather_images(indices);
  out.labels = gather_labels(indices);
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), 0);
  return subset(idx);
}

}  // namespace lp
