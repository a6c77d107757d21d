// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "layerprobe/dataset.hpp"
#include "layerprobe/rng.hpp"
#include "layerprobe/tensor.hpp"

namespace lp {

struct DatasetPair {
  Dataset train;
  Dataset test;
};

/// Decoded IDX file (unsigned byte payload only).
struct IdxArray {
  std::vector<int> dims;
  std::vector<std::uint8_t> data;
};

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

/// Parses a big-endian IDX buffer; rejects a wrong magic or a payload whose
/// length disagrees with the declared dims.
IdxArray parse_idx(std::span<const std::uint8_t> bytes, std::uint32_t expected_magic,
                   const std::string& what);
IdxArray read_idx(const std::filesystem::path& path, std::uint32_t expected_magic);

/// Reads train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-* from `dir`.
/// Inputs are scaled to [0, 1] and normalized by the global train-pixel mean
/// and standard deviation.
DatasetPair load_mnist(const std::filesystem::path& dir);

inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;

/// Decodes CIFAR-10 binary records (label byte + 3072 channel-major pixels).
void decode_cifar_records(std::span<const std::uint8_t> bytes, const std::string& what,
                          std::vector<std::uint8_t>& pixels, std::vector<int>& labels);

/// Reads data_batch_{1..5}.bin and test_batch.bin from `dir`. Normalization
/// is a global scalar by default, per channel when `per_channel` is set.
DatasetPair load_cifar10(const std::filesystem::path& dir, bool per_channel = false);

/// Builds a dataset from raw uint8 pixels [N, C, H, W] with the given
/// normalization.
Dataset dataset_from_pixels(std::string id, Split split, const Dims& example_dims,
                            std::span<const std::uint8_t> pixels, std::vector<int> labels,
                            int num_classes, const Normalization& norm);

/// Global (or per-channel) mean and sample standard deviation of pixels / 255
/// over channel-major images of `area` pixels per channel.
Normalization compute_normalization(std::span<const std::uint8_t> pixels, int channels,
                                    std::size_t area, bool per_channel);

/// Re-encodes example `index` as one CIFAR-10 binary record.
std::vector<std::uint8_t> encode_cifar_record(const Dataset& dataset, std::size_t index);

struct AugmentPolicy {
  bool enabled = false;
  int pad = 4;
  bool random_crop = true;
  bool horizontal_flip = true;
  // Value written into the padding, per channel (one entry: all channels).
  std::vector<float> pad_value{0.0f};

  /// Pad-4 random crop and horizontal flip, padding with black pixels in the
  /// dataset's normalized space.
  static AugmentPolicy standard(const Dataset& dataset);
};

/// Crops an [C, H, W] image out of its zero-padded version at (dy, dx) in
/// [0, 2*pad] and optionally mirrors it horizontally.
void crop_flip(const float* image, int channels, int height, int width,
               const AugmentPolicy& policy, int dy, int dx, bool flip, float* out);

/// Independent per-image crop/flip; the batch is returned unchanged when the
/// policy is disabled.
Tensor augment(const Tensor& batch, const AugmentPolicy& policy, Rng& rng);

struct SyntheticSpec {
  std::size_t n = 1000;
  Dims dims{16};
  int num_classes = 2;
  double margin = 4.0;  // distance of each class center from the origin
  double noise = 1.0;   // per-coordinate standard deviation
  std::uint64_t seed = 0;
};

/// Gaussian blobs around random class centers; labels cycle through the
/// classes so the set is balanced.
Dataset synthetic_dataset(const SyntheticSpec& spec, Split split = Split::train);

/// Train and test sets drawn around the same class centers.
DatasetPair synthetic_pair(const SyntheticSpec& spec, std::size_t test_n);

}  // namespace lp
