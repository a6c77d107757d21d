// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "layerprobe/tensor.hpp"

namespace lp {

enum class LayerKind {
  dense,
  conv2d,
  relu,
  maxpool,
  avgpool_global,
  batchnorm,
  resblock_identity,
  resblock_downsample,
  flatten,
};

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view s);
bool is_parametric(LayerKind kind);
bool is_residual(LayerKind kind);

enum class InitFamily { uniform_he, uniform_glorot, constant };

std::string_view to_string(InitFamily family);
InitFamily init_family_from_string(std::string_view s);

/// Family of the layer's weight tensors. Biases and batch-norm shifts are
/// always constant 0, batch-norm scales constant 1.
struct InitDistribution {
  InitFamily family = InitFamily::uniform_he;
  double constant = 0.0;  // used by InitFamily::constant
};

/// Uniform bound of a weight tensor drawn from `family`.
double init_bound(InitFamily family, std::size_t fan_in, std::size_t fan_out);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::relu;

  // dense
  int in_features = 0;
  int out_features = 0;

  // conv2d, batchnorm (in_channels), residual blocks
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  bool bottleneck = false;
  bool batchnorm = false;  // residual blocks: normalization inside the branch

  InitDistribution init;
  // Multiplies the init bound of the last convolution of a residual branch.
  double residual_scale = 1.0;
};

struct Stage {
  std::string name;
  std::vector<std::string> layers;
};

struct ArchSpec {
  std::string name;
  Dims input_dims;  // per example, e.g. {1, 28, 28}
  int num_classes = 0;
  std::vector<LayerSpec> layers;
  std::vector<Stage> stages;

  /// Runs shape inference and the structural checks; throws Error naming the
  /// offending layer.
  void validate() const;

  const LayerSpec& layer(std::string_view name) const;
  bool has_layer(std::string_view name) const;
  std::vector<std::string> parametric_layers() const;
  std::size_t num_parametric() const;

  /// Per-example input dims of every layer, in order; the last entry is the
  /// logits dims.
  std::vector<Dims> shapes() const;

  /// Stable 64-bit digest of the canonical JSON encoding.
  std::uint64_t hash() const;
};

/// Per-example output dims of `spec` given its per-example input dims.
Dims infer_output(const LayerSpec& spec, const Dims& in);

/// Geometry of one convolution inside a residual branch.
struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
};

/// Convolutions of a residual block's branch in order (2 for basic blocks,
/// 3 for bottleneck blocks).
std::vector<ConvGeometry> branch_convs(const LayerSpec& spec);

/// One parameter tensor slot of a layer with the distribution it is drawn
/// from.
struct TensorSlot {
  std::string name;
  Dims dims;
  bool trainable = true;
  InitFamily family = InitFamily::constant;
  double bound = 0.0;     // uniform families
  double constant = 0.0;  // constant family
};

/// Parameter layout of a layer; empty for non-parametric kinds.
std::vector<TensorSlot> tensor_slots(const LayerSpec& spec);

/// Learnable scalar count of a layer (running statistics excluded).
std::size_t trainable_count(const LayerSpec& spec);

// --- presets --------------------------------------------------------------

/// FCN D x H: layer1..layerD dense+ReLU of width H, then layer{D+1} as the
/// linear classifier.
ArchSpec make_fcn(int depth, int width, const Dims& input_dims,
                  int num_classes);

struct ResNetOptions {
  std::vector<int> blocks_per_stage{4, 4};
  int base_width = 16;
  Dims input_dims{3, 32, 32};
  int num_classes = 10;
  bool bottleneck = false;
  bool batchnorm = false;
  // true: every residual block has an identity skip and each stage after the
  // first starts with a plain strided convolution ("stageK.downsample").
  bool explicit_downsample = false;
  // Init-bound multiplier for the last branch convolution; unset means
  // 1/sqrt(total residual blocks), which keeps the activation scale of a
  // normalization-free network bounded at initialization.
  std::optional<double> residual_scale;
};

/// Pre-activation residual network: stage0 convolution, residual stages,
/// final ReLU (and batch norm), global average pooling, final_linear.
ArchSpec make_resnet(const ResNetOptions& options);

/// Small VGG-style stack: blocks of (conv, ReLU) x convs_per_block followed
/// by 2x2 max-pool, then dense+ReLU layers and the final classifier.
ArchSpec make_vgg(const std::vector<int>& block_widths, int convs_per_block,
                  int dense_width, int dense_layers, const Dims& input_dims,
                  int num_classes);

/// Builds a preset from its name. Grammar:
///   fcn-<D>x<H>                         e.g. fcn-3x256
///   resnet-<S>s<B>b[-w<W>][-bn][-bottleneck][-xd]
///   resnet-<B>^<S>[-w<W>][-bn]          alias with explicit downsampling (-xd)
///   vgg-mini
/// Input dims and class count come from the data.
ArchSpec make_preset(std::string_view preset, const Dims& input_dims,
                     int num_classes);

void to_json(nlohmann::json& j, const LayerSpec& spec);
void from_json(const nlohmann::json& j, LayerSpec& spec);
void to_json(nlohmann::json& j, const ArchSpec& arch);
void from_json(const nlohmann::json& j, ArchSpec& arch);

}  // namespace lp
