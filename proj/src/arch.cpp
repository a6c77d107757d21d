// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "layerprobe/arch.hpp"

#include <cmath>
#include <regex>
#include <set>

#include "layerprobe/rng.hpp"

namespace lp {

namespace {

constexpr std::pair<LayerKind, std::string_view> kKindNames[] = {
    {LayerKind::dense, "dense"},
    {LayerKind::conv2d, "conv2d"},
    {LayerKind::relu, "relu"},
    {LayerKind::maxpool, "maxpool"},
    {LayerKind::avgpool_global, "avgpool_global"},
    {LayerKind::batchnorm, "batchnorm"},
    {LayerKind::resblock_identity, "resblock_identity"},
    {LayerKind::resblock_downsample, "resblock_downsample"},
    {LayerKind::flatten, "flatten"},
};

constexpr std::pair<InitFamily, std::string_view> kFamilyNames[] = {
    {InitFamily::uniform_he, "uniform_he"},
    {InitFamily::uniform_glorot, "uniform_glorot"},
    {InitFamily::constant, "constant"},
};

int conv_out(int size, int kernel, int stride, int padding) {
  return (size + 2 * padding - kernel) / stride + 1;
}

Error shape_error(const LayerSpec& spec, const Dims& in, const std::string& why) {
  return Error("layer '" + spec.name + "' (" + std::string(to_string(spec.kind)) +
               "): " + why + "; input dims " + dims_string(in));
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, n] : kKindNames) {
    if (k == kind) return n;
  }
  return "?";
}

LayerKind layer_kind_from_string(std::string_view s) {
  for (const auto& [k, n] : kKindNames) {
    if (n == s) return k;
  }
  throw Error("unknown layer kind '" + std::string(s) + "'");
}

bool is_parametric(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense:
    case LayerKind::conv2d:
    case LayerKind::batchnorm:
    case LayerKind::resblock_identity:
    case LayerKind::resblock_downsample:
      return true;
    default:
      return false;
  }
}

bool is_residual(LayerKind kind) {
  return kind == LayerKind::resblock_identity ||
         kind == LayerKind::resblock_downsample;
}

std::string_view to_string(InitFamily family) {
  for (const auto& [f, n] : kFamilyNames) {
    if (f == family) return n;
  }
  return "?";
}

InitFamily init_family_from_string(std::string_view s) {
  for (const auto& [f, n] : kFamilyNames) {
    if (n == s) return f;
  }
  throw Error("unknown init family '" + std::string(s) + "'");
}

double init_bound(InitFamily family, std::size_t fan_in, std::size_t fan_out) {
  switch (family) {
    case InitFamily::uniform_he:
      return std::sqrt(6.0 / static_cast<double>(fan_in));
    case InitFamily::uniform_glorot:
      return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    case InitFamily::constant:
      return 0.0;
  }
  return 0.0;
}

std::vector<ConvGeometry> branch_convs(const LayerSpec& spec) {
  const int in = spec.in_channels;
  const int out = spec.out_channels;
  const int stride = spec.kind == LayerKind::resblock_downsample ? spec.stride : 1;
  if (spec.bottleneck) {
    const int mid = std::max(1, out / 4);
    return {{in, mid, 1, 1, 0}, {mid, mid, 3, stride, 1}, {mid, out, 1, 1, 0}};
  }
  return {{in, out, 3, stride, 1}, {out, out, 3, 1, 1}};
}

Dims infer_output(const LayerSpec& spec, const Dims& in) {
  switch (spec.kind) {
    case LayerKind::dense: {
      if (in.size() != 1 || in[0] != spec.in_features) {
        throw shape_error(spec, in,
                          "expected [" + std::to_string(spec.in_features) + "]");
      }
      return {spec.out_features};
    }
    case LayerKind::flatten:
      return {static_cast<int>(element_count(in))};
    case LayerKind::relu:
      return in;
    case LayerKind::conv2d: {
      if (in.size() != 3 || in[0] != spec.in_channels) {
        throw shape_error(spec, in,
                          "expected " + std::to_string(spec.in_channels) +
                              " input channels");
      }
      const int h = conv_out(in[1], spec.kernel, spec.stride, spec.padding);
      const int w = conv_out(in[2], spec.kernel, spec.stride, spec.padding);
      if (h < 1 || w < 1) throw shape_error(spec, in, "empty output");
      return {spec.out_channels, h, w};
    }
    case LayerKind::maxpool: {
      if (in.size() != 3) throw shape_error(spec, in, "expected [C, H, W]");
      const int h = conv_out(in[1], spec.kernel, spec.stride, 0);
      const int w = conv_out(in[2], spec.kernel, spec.stride, 0);
      if (h < 1 || w < 1) throw shape_error(spec, in, "empty output");
      return {in[0], h, w};
    }
    case LayerKind::avgpool_global:
      if (in.size() != 3) throw shape_error(spec, in, "expected [C, H, W]");
      return {in[0]};
    case LayerKind::batchnorm:
      if ((in.size() != 1 && in.size() != 3) || in[0] != spec.in_channels) {
        throw shape_error(spec, in,
                          "expected " + std::to_string(spec.in_channels) +
                              " channels");
      }
      return in;
    case LayerKind::resblock_identity:
    case LayerKind::resblock_downsample: {
      if (in.size() != 3 || in[0] != spec.in_channels) {
        throw shape_error(spec, in,
                          "expected " + std::to_string(spec.in_channels) +
                              " input channels");
      }
      if (spec.kind == LayerKind::resblock_identity &&
          spec.in_channels != spec.out_channels) {
        throw shape_error(spec, in, "identity block must keep channel count");
      }
      Dims cur = in;
      for (const auto& c : branch_convs(spec)) {
        cur = {c.out_channels, conv_out(cur[1], c.kernel, c.stride, c.padding),
               conv_out(cur[2], c.kernel, c.stride, c.padding)};
        if (cur[1] < 1 || cur[2] < 1) throw shape_error(spec, in, "empty output");
      }
      return cur;
    }
  }
  throw shape_error(spec, in, "unknown kind");
}

std::vector<TensorSlot> tensor_slots(const LayerSpec& spec) {
  std::vector<TensorSlot> slots;
  auto weight = [&](std::string name, Dims dims, std::size_t fan_in,
                    std::size_t fan_out, double scale) {
    TensorSlot s;
    s.name = std::move(name);
    s.dims = std::move(dims);
    s.family = spec.init.family;
    s.bound = scale * init_bound(spec.init.family, fan_in, fan_out);
    s.constant = spec.init.constant;
    slots.push_back(std::move(s));
  };
  auto constant = [&](std::string name, int n, double value, bool trainable) {
    TensorSlot s;
    s.name = std::move(name);
    s.dims = {n};
    s.trainable = trainable;
    s.family = InitFamily::constant;
    s.constant = value;
    slots.push_back(std::move(s));
  };
  auto batchnorm = [&](const std::string& prefix, int channels) {
    constant(prefix + "gamma", channels, 1.0, true);
    constant(prefix + "beta", channels, 0.0, true);
    constant(prefix + "running_mean", channels, 0.0, false);
    constant(prefix + "running_var", channels, 1.0, false);
  };

  switch (spec.kind) {
    case LayerKind::dense:
      weight("weight", {spec.out_features, spec.in_features},
             static_cast<std::size_t>(spec.in_features),
             static_cast<std::size_t>(spec.out_features), 1.0);
      constant("bias", spec.out_features, 0.0, true);
      break;
    case LayerKind::conv2d: {
      const std::size_t area = static_cast<std::size_t>(spec.kernel) * spec.kernel;
      weight("weight", {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel},
             spec.in_channels * area, spec.out_channels * area, 1.0);
      constant("bias", spec.out_channels, 0.0, true);
      break;
    }
    case LayerKind::batchnorm:
      batchnorm("", spec.in_channels);
      break;
    case LayerKind::resblock_identity:
    case LayerKind::resblock_downsample: {
      const auto convs = branch_convs(spec);
      for (std::size_t u = 0; u < convs.size(); ++u) {
        const auto& c = convs[u];
        const std::string idx = std::to_string(u + 1);
        if (spec.batchnorm) batchnorm("bn" + idx + ".", c.in_channels);
        const std::size_t area = static_cast<std::size_t>(c.kernel) * c.kernel;
        const double scale = u + 1 == convs.size() ? spec.residual_scale : 1.0;
        weight("conv" + idx + ".weight",
               {c.out_channels, c.in_channels, c.kernel, c.kernel},
               c.in_channels * area, c.out_channels * area, scale);
        constant("conv" + idx + ".bias", c.out_channels, 0.0, true);
      }
      if (spec.kind == LayerKind::resblock_downsample) {
        weight("skip.weight", {spec.out_channels, spec.in_channels, 1, 1},
               static_cast<std::size_t>(spec.in_channels),
               static_cast<std::size_t>(spec.out_channels), 1.0);
      }
      break;
    }
    default:
      break;
  }
  return slots;
}

std::size_t trainable_count(const LayerSpec& spec) {
  std::size_t n = 0;
  for (const auto& s : tensor_slots(spec)) {
    if (s.trainable) n += element_count(s.dims);
  }
  return n;
}

const LayerSpec& ArchSpec::layer(std::string_view name) const {
  for (const auto& l : layers) {
    if (l.name == name) return l;
  }
  throw Error("unknown layer '" + std::string(name) + "' in arch '" + this->name + "'");
}

bool ArchSpec::has_layer(std::string_view name) const {
  for (const auto& l : layers) {
    if (l.name == name) return true;
  }
  return false;
}

std::vector<std::string> ArchSpec::parametric_layers() const {
  std::vector<std::string> out;
  for (const auto& l : layers) {
    if (is_parametric(l.kind)) out.push_back(l.name);
  }
  return out;
}

std::size_t ArchSpec::num_parametric() const { return parametric_layers().size(); }

std::vector<Dims> ArchSpec::shapes() const {
  std::vector<Dims> out;
  out.reserve(layers.size() + 1);
  Dims cur = input_dims;
  out.push_back(cur);
  for (const auto& l : layers) {
    cur = infer_output(l, cur);
    out.push_back(cur);
  }
  return out;
}

void ArchSpec::validate() const {
  if (input_dims.empty()) throw Error("arch '" + name + "': empty input dims");
  element_count(input_dims);
  if (num_classes < 1) throw Error("arch '" + name + "': num_classes must be >= 1");
  if (layers.empty()) throw Error("arch '" + name + "': no layers");
  std::set<std::string, std::less<>> names;
  for (const auto& l : layers) {
    if (l.name.empty()) throw Error("arch '" + name + "': unnamed layer");
    if (!names.insert(l.name).second) {
      throw Error("arch '" + name + "': duplicate layer name '" + l.name + "'");
    }
  }
  if (num_parametric() < 1) throw Error("arch '" + name + "': no parametric layer");
  const auto dims = shapes();
  if (dims.back() != Dims{num_classes}) {
    throw Error("arch '" + name + "': logits dims " + dims_string(dims.back()) +
                " do not match " + std::to_string(num_classes) + " classes");
  }

  std::set<std::string, std::less<>> staged;
  bool seen_residual_stage = false;
  for (const auto& stage : stages) {
    bool first_block = true;
    bool explicit_downsample = false;
    for (const auto& lname : stage.layers) {
      const LayerSpec& l = layer(lname);
      if (!staged.insert(lname).second) {
        throw Error("stage '" + stage.name + "': layer '" + lname +
                    "' already belongs to another stage");
      }
      if (!is_residual(l.kind)) {
        if (first_block && l.kind == LayerKind::conv2d && l.stride > 1) {
          explicit_downsample = true;
        }
        continue;
      }
      if (first_block) {
        if (seen_residual_stage && !explicit_downsample &&
            l.kind != LayerKind::resblock_downsample) {
          throw Error("stage '" + stage.name + "': first block '" + lname +
                      "' must be resblock_downsample");
        }
        first_block = false;
      } else if (l.kind != LayerKind::resblock_identity) {
        throw Error("stage '" + stage.name + "': block '" + lname +
                    "' after the first must be resblock_identity");
      }
    }
    if (!first_block) seen_residual_stage = true;
  }
}

std::uint64_t ArchSpec::hash() const {
  nlohmann::json j = *this;
  return fnv1a64(j.dump());
}

// --- presets --------------------------------------------------------------

namespace {

LayerSpec relu_layer(std::string name) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::relu;
  return l;
}

LayerSpec dense_layer(std::string name, int in, int out, InitFamily family) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::dense;
  l.in_features = in;
  l.out_features = out;
  l.init.family = family;
  return l;
}

LayerSpec conv_layer(std::string name, int in, int out, int kernel, int stride,
                     int padding) {
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

}  // namespace

ArchSpec make_fcn(int depth, int width, const Dims& input_dims, int num_classes) {
  if (depth < 0 || width < 1) throw Error("fcn: invalid depth/width");
  ArchSpec arch;
  arch.name = "fcn-" + std::to_string(depth) + "x" + std::to_string(width);
  arch.input_dims = input_dims;
  arch.num_classes = num_classes;
  int in = static_cast<int>(element_count(input_dims));
  if (input_dims.size() != 1) {
    LayerSpec flat;
    flat.name = "flatten";
    flat.kind = LayerKind::flatten;
    arch.layers.push_back(flat);
  }
  for (int d = 1; d <= depth; ++d) {
    const std::string name = "layer" + std::to_string(d);
    arch.layers.push_back(dense_layer(name, in, width, InitFamily::uniform_he));
    arch.layers.push_back(relu_layer(name + ".relu"));
    in = width;
  }
  arch.layers.push_back(dense_layer("layer" + std::to_string(depth + 1), in,
                                    num_classes, InitFamily::uniform_glorot));
  arch.validate();
  return arch;
}

ArchSpec make_resnet(const ResNetOptions& o) {
  if (o.blocks_per_stage.empty()) throw Error("resnet: no stages");
  if (o.input_dims.size() != 3) throw Error("resnet: input must be [C, H, W]");
  int total_blocks = 0;
  for (int b : o.blocks_per_stage) {
    if (b < 1) throw Error("resnet: every stage needs at least one block");
    total_blocks += b;
  }
  const double scale =
      o.residual_scale.value_or(1.0 / std::sqrt(static_cast<double>(total_blocks)));

  ArchSpec arch;
  std::string name = "resnet-" + std::to_string(o.blocks_per_stage.size()) + "s";
  for (std::size_t i = 0; i < o.blocks_per_stage.size(); ++i) {
    name += (i ? "," : "") + std::to_string(o.blocks_per_stage[i]);
  }
  name += "b-w" + std::to_string(o.base_width);
  if (o.batchnorm) name += "-bn";
  if (o.bottleneck) name += "-bottleneck";
  if (o.explicit_downsample) name += "-xd";
  arch.name = name;
  arch.input_dims = o.input_dims;
  arch.num_classes = o.num_classes;

  arch.layers.push_back(conv_layer("stage0", o.input_dims[0], o.base_width, 3, 1, 1));
  arch.stages.push_back({"stage0", {"stage0"}});

  int width = o.base_width;
  for (std::size_t s = 0; s < o.blocks_per_stage.size(); ++s) {
    Stage stage;
    stage.name = "stage" + std::to_string(s + 1);
    const int stage_width = o.base_width << s;
    if (s > 0 && o.explicit_downsample) {
      arch.layers.push_back(relu_layer(stage.name + ".downsample.relu"));
      arch.layers.push_back(
          conv_layer(stage.name + ".downsample", width, stage_width, 3, 2, 1));
      stage.layers.push_back(stage.name + ".downsample.relu");
      stage.layers.push_back(stage.name + ".downsample");
      width = stage_width;
    }
    for (int b = 1; b <= o.blocks_per_stage[s]; ++b) {
      LayerSpec blk;
      blk.name = stage.name + ".resblk" + std::to_string(b);
      const bool down = b == 1 && s > 0 && !o.explicit_downsample;
      blk.kind = down ? LayerKind::resblock_downsample : LayerKind::resblock_identity;
      blk.in_channels = width;
      blk.out_channels = stage_width;
      blk.stride = down ? 2 : 1;
      blk.bottleneck = o.bottleneck;
      blk.batchnorm = o.batchnorm;
      blk.init.family = InitFamily::uniform_he;
      blk.residual_scale = scale;
      arch.layers.push_back(blk);
      stage.layers.push_back(blk.name);
      width = stage_width;
    }
    arch.stages.push_back(std::move(stage));
  }

  Stage head{"final_linear", {}};
  if (o.batchnorm) {
    LayerSpec bn;
    bn.name = "final_bn";
    bn.kind = LayerKind::batchnorm;
    bn.in_channels = width;
    arch.layers.push_back(bn);
    head.layers.push_back(bn.name);
  }
  arch.layers.push_back(relu_layer("final_relu"));
  LayerSpec pool;
  pool.name = "pool";
  pool.kind = LayerKind::avgpool_global;
  arch.layers.push_back(pool);
  arch.layers.push_back(
      dense_layer("final_linear", width, o.num_classes, InitFamily::uniform_glorot));
  head.layers.push_back("final_relu");
  head.layers.push_back("pool");
  head.layers.push_back("final_linear");
  arch.stages.push_back(std::move(head));
  arch.validate();
  return arch;
}

ArchSpec make_vgg(const std::vector<int>& block_widths, int convs_per_block,
                  int dense_width, int dense_layers, const Dims& input_dims,
                  int num_classes) {
  if (input_dims.size() != 3) throw Error("vgg: input must be [C, H, W]");
  ArchSpec arch;
  arch.name = "vgg";
  arch.input_dims = input_dims;
  arch.num_classes = num_classes;
  int channels = input_dims[0];
  int spatial = input_dims[1];
  int conv_index = 1;
  for (std::size_t b = 0; b < block_widths.size(); ++b) {
    for (int c = 0; c < convs_per_block; ++c) {
      const std::string name = "conv" + std::to_string(conv_index++);
      arch.layers.push_back(conv_layer(name, channels, block_widths[b], 3, 1, 1));
      arch.layers.push_back(relu_layer(name + ".relu"));
      channels = block_widths[b];
    }
    LayerSpec pool;
    pool.name = "pool" + std::to_string(b + 1);
    pool.kind = LayerKind::maxpool;
    pool.kernel = 2;
    pool.stride = 2;
    arch.layers.push_back(pool);
    spatial /= 2;
  }
  LayerSpec flat;
  flat.name = "flatten";
  flat.kind = LayerKind::flatten;
  arch.layers.push_back(flat);
  int in = channels * spatial * spatial;
  for (int d = 1; d <= dense_layers; ++d) {
    const std::string name = "fc" + std::to_string(d);
    arch.layers.push_back(dense_layer(name, in, dense_width, InitFamily::uniform_he));
    arch.layers.push_back(relu_layer(name + ".relu"));
    in = dense_width;
  }
  arch.layers.push_back(
      dense_layer("final_linear", in, num_classes, InitFamily::uniform_glorot));
  arch.validate();
  return arch;
}

ArchSpec make_preset(std::string_view preset, const Dims& input_dims,
                     int num_classes) {
  const std::string p(preset);
  std::smatch m;
  static const std::regex fcn_re(R"(fcn-(\d+)x(\d+))");
  static const std::regex resnet_re(R"(resnet-(\d+)s(\d+)b((?:-w\d+|-bn|-bottleneck|-xd)*))");
  static const std::regex power_re(R"(resnet-(\d+)\^(\d+)((?:-w\d+|-bn)*))");
  static const std::regex width_re(R"(-w(\d+))");

  auto apply_flags = [&](const std::string& flags, ResNetOptions& o) {
    std::smatch w;
    if (std::regex_search(flags, w, width_re)) o.base_width = std::stoi(w[1]);
    o.batchnorm = flags.find("-bn") != std::string::npos;
    o.bottleneck = flags.find("-bottleneck") != std::string::npos;
    if (flags.find("-xd") != std::string::npos) o.explicit_downsample = true;
  };

  if (std::regex_match(p, m, fcn_re)) {
    ArchSpec a = make_fcn(std::stoi(m[1]), std::stoi(m[2]), input_dims, num_classes);
    return a;
  }
  if (std::regex_match(p, m, resnet_re) || std::regex_match(p, m, power_re)) {
    const bool power = p.find('^') != std::string::npos;
    const int stages = std::stoi(power ? m[2] : m[1]);
    const int blocks = std::stoi(power ? m[1] : m[2]);
    if (stages < 1 || blocks < 1) throw Error("preset '" + p + "': empty network");
    ResNetOptions o;
    o.blocks_per_stage.assign(static_cast<std::size_t>(stages), blocks);
    o.input_dims = input_dims;
    o.num_classes = num_classes;
    o.explicit_downsample = power;
    apply_flags(m[3], o);
    ArchSpec a = make_resnet(o);
    a.name = p;
    return a;
  }
  if (p == "vgg-mini") {
    ArchSpec a = make_vgg({16, 32, 64}, 2, 128, 1, input_dims, num_classes);
    a.name = p;
    return a;
  }
  throw Error("unknown arch preset '" + p + "'");
}

// --- json -----------------------------------------------------------------

void to_json(nlohmann::json& j, const LayerSpec& s) {
  j = nlohmann::json{{"name", s.name}, {"kind", std::string(to_string(s.kind))}};
  switch (s.kind) {
    case LayerKind::dense:
      j["in_features"] = s.in_features;
      j["out_features"] = s.out_features;
      break;
    case LayerKind::conv2d:
    case LayerKind::resblock_identity:
    case LayerKind::resblock_downsample:
      j["in_channels"] = s.in_channels;
      j["out_channels"] = s.out_channels;
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      j["padding"] = s.padding;
      if (is_residual(s.kind)) {
        j["bottleneck"] = s.bottleneck;
        j["batchnorm"] = s.batchnorm;
        j["residual_scale"] = s.residual_scale;
      }
      break;
    case LayerKind::maxpool:
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      break;
    case LayerKind::batchnorm:
      j["in_channels"] = s.in_channels;
      break;
    default:
      break;
  }
  if (is_parametric(s.kind)) {
    j["init"] = {{"family", std::string(to_string(s.init.family))},
                 {"constant", s.init.constant}};
  }
}

void from_json(const nlohmann::json& j, LayerSpec& s) {
  s = LayerSpec{};
  s.name = j.at("name").get<std::string>();
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  s.in_features = j.value("in_features", 0);
  s.out_features = j.value("out_features", 0);
  s.in_channels = j.value("in_channels", 0);
  s.out_channels = j.value("out_channels", 0);
  s.kernel = j.value("kernel", 0);
  s.stride = j.value("stride", 1);
  s.padding = j.value("padding", 0);
  s.bottleneck = j.value("bottleneck", false);
  s.batchnorm = j.value("batchnorm", false);
  s.residual_scale = j.value("residual_scale", 1.0);
  if (j.contains("init")) {
    s.init.family = init_family_from_string(j["init"].at("family").get<std::string>());
    s.init.constant = j["init"].value("constant", 0.0);
  }
}

void to_json(nlohmann::json& j, const ArchSpec& a) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : a.stages) stages.push_back({{"name", s.name}, {"layers", s.layers}});
  j = nlohmann::json{{"name", a.name},
                     {"input_dims", a.input_dims},
                     {"num_classes", a.num_classes},
                     {"layers", a.layers},
                     {"stages", stages}};
}

void from_json(const nlohmann::json& j, ArchSpec& a) {
  a = ArchSpec{};
  a.name = j.at("name").get<std::string>();
  a.input_dims = j.at("input_dims").get<Dims>();
  a.num_classes = j.at("num_classes").get<int>();
  a.layers = j.at("layers").get<std::vector<LayerSpec>>();
  for (const auto& s : j.value("stages", nlohmann::json::array())) {
    a.stages.push_back({s.at("name").get<std::string>(),
                        s.at("layers").get<std::vector<std::string>>()});
  }
  a.validate();
}

}  // namespace lp
