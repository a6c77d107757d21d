// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "layerprobe/tensor.hpp"

namespace lp {

enum class Split { train, test };

/// Affine input normalization x' = (x - mean) / std with x scaled to [0, 1].
/// A single entry means one global scalar; otherwise one entry per channel.
struct Normalization {
  std::vector<double> mean{0.0};
  std::vector<double> std{1.0};

  double mean_for(int channel) const {
    return mean.size() == 1 ? mean[0] : mean.at(channel);
  }
  double std_for(int channel) const {
    return std.size() == 1 ? std[0] : std.at(channel);
  }
};

struct Dataset {
  std::string id;       // "mnist", "cifar10", "synthetic"
  Tensor images;        // [N, C, H, W], normalized
  std::vector<int> labels;
  int num_classes = 0;
  Split split = Split::train;
  Normalization normalization;
  // Inputs are normalized [0, 1] pixels; attacks clip to the image range.
  bool pixel_data = true;

  std::size_t size() const { return labels.size(); }
  Dims example_dims() const {
    return Dims(images.dims().begin() + 1, images.dims().end());
  }
  std::size_t example_size() const;

  /// Throws unless counts agree and every label lies in [0, num_classes).
  void validate() const;

  /// Gathers the listed examples (in order) into a new dataset.
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;

  /// Batch of the listed examples as [n, C, H, W] plus labels.
  Tensor gather_images(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
};

}  // namespace lp
