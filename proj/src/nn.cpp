// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "layerprobe/nn.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "kernels.hpp"

namespace lp {

namespace {

using kernels::BatchNormCache;
using kernels::ConvShape;

template <typename T>
struct Record {
  BasicTensor<T> input;
  BasicTensor<T> output;
  std::vector<int> argmax;
  BatchNormCache<T> bn;
  std::vector<BasicTensor<T>> act;  // residual: ReLU output feeding conv u
  std::vector<BatchNormCache<T>> unit_bn;
};

template <typename T>
using Tape = std::vector<Record<T>>;

template <typename T>
const T* tensor_data(const LayerParams<T>& p, std::string_view name) {
  for (const auto& t : p) {
    if (t.name == name) return t.value.data();
  }
  throw Error("missing parameter tensor '" + std::string(name) + "'");
}

template <typename T>
T* tensor_data(LayerParams<T>& p, std::string_view name) {
  for (auto& t : p) {
    if (t.name == name) return t.value.data();
  }
  throw Error("missing parameter tensor '" + std::string(name) + "'");
}

template <typename T>
T* grad_data(LayerParams<T>* g, std::string_view name) {
  return g ? tensor_data(*g, name) : nullptr;
}

ConvShape make_conv_shape(const Dims& in, int out_channels, int kernel, int stride,
                          int padding) {
  ConvShape s{};
  s.channels = in[0];
  s.height = in[1];
  s.width = in[2];
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  s.out_height = (s.height + 2 * padding - kernel) / stride + 1;
  s.out_width = (s.width + 2 * padding - kernel) / stride + 1;
  return s;
}

Dims batch_dims(int n, const Dims& example) {
  Dims d{n};
  d.insert(d.end(), example.begin(), example.end());
  return d;
}

int channel_area(const Dims& example) {
  return example.size() == 3 ? example[1] * example[2] : 1;
}

template <typename T>
void relu_inplace(BasicTensor<T>& t) {
  for (T& v : t.values()) v = v > T(0) ? v : T(0);
}

/// Multiplies grad by the ReLU mask recovered from the ReLU output.
template <typename T>
void relu_mask(const BasicTensor<T>& relu_out, BasicTensor<T>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(relu_out[i] > T(0))) grad[i] = T(0);
  }
}

// --- per-kind forward / backward ------------------------------------------

template <typename T>
struct Engine {
  const ArchSpec& arch;
  const std::vector<Dims> shapes;

  explicit Engine(const ArchSpec& a) : arch(a), shapes(a.shapes()) {}

  BasicTensor<T> forward(const BasicParamSet<T>& params, BasicParamSet<T>* running,
                         const BasicTensor<T>& inputs, Mode mode, Tape<T>* tape) const {
    if (inputs.rank() != arch.input_dims.size() + 1 ||
        !std::equal(arch.input_dims.begin(), arch.input_dims.end(),
                    inputs.dims().begin() + 1)) {
      throw Error("input dims " + dims_string(inputs.dims()) + " do not match layer '" +
                  arch.layers.front().name + "' input " + dims_string(arch.input_dims));
    }
    const int n = inputs.dim(0);
    if (tape) tape->assign(arch.layers.size(), Record<T>{});
    BasicTensor<T> cur = inputs;
    for (std::size_t l = 0; l < arch.layers.size(); ++l) {
      const LayerSpec& spec = arch.layers[l];
      Record<T>* rec = tape ? &(*tape)[l] : nullptr;
      const LayerParams<T>* p = is_parametric(spec.kind) ? &params.at(spec.name) : nullptr;
      LayerParams<T>* rp =
          (running && is_parametric(spec.kind)) ? &running->at(spec.name) : nullptr;
      cur = layer_forward(spec, shapes[l], shapes[l + 1], n, p, rp, std::move(cur),
                          mode, rec);
    }
    return cur;
  }

  BasicTensor<T> layer_forward(const LayerSpec& spec, const Dims& in, const Dims& out,
                               int n, const LayerParams<T>* p, LayerParams<T>* rp,
                               BasicTensor<T> x, Mode mode, Record<T>* rec) const {
    BasicTensor<T> y(batch_dims(n, out));
    switch (spec.kind) {
      case LayerKind::flatten:
        x.reshape(batch_dims(n, out));
        return x;
      case LayerKind::relu:
        relu_inplace(x);
        if (rec) rec->output = x;
        return x;
      case LayerKind::dense:
        kernels::dense_forward(x.data(), tensor_data(*p, "weight"),
                               tensor_data(*p, "bias"), n, spec.in_features,
                               spec.out_features, y.data());
        break;
      case LayerKind::conv2d:
        kernels::conv2d_forward(
            x.data(), tensor_data(*p, "weight"), tensor_data(*p, "bias"), n,
            make_conv_shape(in, spec.out_channels, spec.kernel, spec.stride, spec.padding),
            y.data());
        break;
      case LayerKind::maxpool: {
        std::vector<int> argmax(y.size());
        kernels::maxpool_forward(x.data(), n, in[0], in[1], in[2], spec.kernel,
                                 spec.stride, out[1], out[2], y.data(), argmax.data());
        if (rec) rec->argmax = std::move(argmax);
        return y;
      }
      case LayerKind::avgpool_global:
        kernels::avgpool_forward(x.data(), n, in[0], in[1] * in[2], y.data());
        return y;
      case LayerKind::batchnorm:
        bn_forward(x, "", in, n, *p, rp, mode, y, rec ? &rec->bn : nullptr);
        return y;
      case LayerKind::resblock_identity:
      case LayerKind::resblock_downsample:
        return residual_forward(spec, in, n, *p, rp, std::move(x), mode, rec);
    }
    if (rec) rec->input = std::move(x);
    return y;
  }

  void bn_forward(const BasicTensor<T>& x, const std::string& prefix, const Dims& in,
                  int n, const LayerParams<T>& p, LayerParams<T>* rp, Mode mode,
                  BasicTensor<T>& y, BatchNormCache<T>* cache) const {
    const bool batch = mode == Mode::train;
    T* rm = rp ? tensor_data(*rp, prefix + "running_mean") : nullptr;
    T* rv = rp ? tensor_data(*rp, prefix + "running_var") : nullptr;
    std::vector<T> rm_copy;
    std::vector<T> rv_copy;
    if (!batch && !rm) {
      const T* m = tensor_data(p, prefix + "running_mean");
      const T* v = tensor_data(p, prefix + "running_var");
      rm_copy.assign(m, m + in[0]);
      rv_copy.assign(v, v + in[0]);
      rm = rm_copy.data();
      rv = rv_copy.data();
    }
    kernels::batchnorm_forward(x.data(), n, in[0], channel_area(in),
                               tensor_data(p, prefix + "gamma"),
                               tensor_data(p, prefix + "beta"), rm, rv, batch,
                               y.data(), cache);
  }

  BasicTensor<T> residual_forward(const LayerSpec& spec, const Dims& in, int n,
                                  const LayerParams<T>& p, LayerParams<T>* rp,
                                  BasicTensor<T> x, Mode mode, Record<T>* rec) const {
    const auto convs = branch_convs(spec);
    if (rec) {
      rec->act.resize(convs.size());
      rec->unit_bn.resize(convs.size());
    }
    Dims cur_dims = in;
    BasicTensor<T> z = x;
    BasicTensor<T> first_act;
    for (std::size_t u = 0; u < convs.size(); ++u) {
      const auto& c = convs[u];
      const std::string idx = std::to_string(u + 1);
      BasicTensor<T> a;
      if (spec.batchnorm) {
        a = BasicTensor<T>(z.dims());
        bn_forward(z, "bn" + idx + ".", cur_dims, n, p, rp, mode, a,
                   rec ? &rec->unit_bn[u] : nullptr);
      } else {
        a = std::move(z);
      }
      relu_inplace(a);
      const ConvShape s = make_conv_shape(cur_dims, c.out_channels, c.kernel, c.stride,
                                          c.padding);
      cur_dims = {s.out_channels, s.out_height, s.out_width};
      z = BasicTensor<T>(batch_dims(n, cur_dims));
      kernels::conv2d_forward(a.data(), tensor_data(p, "conv" + idx + ".weight"),
                              tensor_data(p, "conv" + idx + ".bias"), n, s, z.data());
      if (u == 0 && spec.kind == LayerKind::resblock_downsample) first_act = a;
      if (rec) rec->act[u] = std::move(a);
    }
    if (spec.kind == LayerKind::resblock_identity) {
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += x[i];
    } else {
      const BasicTensor<T>& a0 = rec ? rec->act[0] : first_act;
      const ConvShape s = make_conv_shape(in, spec.out_channels, 1, spec.stride, 0);
      BasicTensor<T> skip(z.dims());
      kernels::conv2d_forward<T>(a0.data(), tensor_data(p, "skip.weight"), nullptr, n, s,
                                 skip.data());
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += skip[i];
    }
    return z;
  }

  /// Returns dx (empty when !need_dx).
  BasicTensor<T> layer_backward(const LayerSpec& spec, const Dims& in, const Dims& out,
                                int n, const LayerParams<T>* p, LayerParams<T>* g,
                                Record<T>& rec, BasicTensor<T> dy, bool need_dx) const {
    switch (spec.kind) {
      case LayerKind::flatten:
        dy.reshape(batch_dims(n, in));
        return dy;
      case LayerKind::relu:
        relu_mask(rec.output, dy);
        return dy;
      case LayerKind::dense: {
        BasicTensor<T> dx = need_dx ? BasicTensor<T>(batch_dims(n, in)) : BasicTensor<T>();
        kernels::dense_backward(rec.input.data(), tensor_data(*p, "weight"), dy.data(), n,
                                spec.in_features, spec.out_features,
                                grad_data(g, "weight"), grad_data(g, "bias"),
                                need_dx ? dx.data() : nullptr);
        return dx;
      }
      case LayerKind::conv2d: {
        BasicTensor<T> dx = need_dx ? BasicTensor<T>(batch_dims(n, in)) : BasicTensor<T>();
        kernels::conv2d_backward(
            rec.input.data(), tensor_data(*p, "weight"), dy.data(), n,
            make_conv_shape(in, spec.out_channels, spec.kernel, spec.stride, spec.padding),
            grad_data(g, "weight"), grad_data(g, "bias"), need_dx ? dx.data() : nullptr);
        return dx;
      }
      case LayerKind::maxpool: {
        BasicTensor<T> dx(batch_dims(n, in));
        kernels::maxpool_backward(dy.data(), rec.argmax.data(), n, in[0], in[1], in[2],
                                  out[1], out[2], dx.data());
        return dx;
      }
      case LayerKind::avgpool_global: {
        BasicTensor<T> dx(batch_dims(n, in));
        kernels::avgpool_backward(dy.data(), n, in[0], in[1] * in[2], dx.data());
        return dx;
      }
      case LayerKind::batchnorm: {
        BasicTensor<T> dx(batch_dims(n, in));
        kernels::batchnorm_backward(dy.data(), n, in[0], channel_area(in),
                                    tensor_data(*p, "gamma"), rec.bn,
                                    grad_data(g, "gamma"), grad_data(g, "beta"),
                                    dx.data());
        return dx;
      }
      case LayerKind::resblock_identity:
      case LayerKind::resblock_downsample:
        return residual_backward(spec, in, n, *p, g, rec, std::move(dy), need_dx);
    }
    return dy;
  }

  BasicTensor<T> residual_backward(const LayerSpec& spec, const Dims& in, int n,
                                   const LayerParams<T>& p, LayerParams<T>* g,
                                   Record<T>& rec, BasicTensor<T> dy,
                                   bool need_dx) const {
    const auto convs = branch_convs(spec);
    std::vector<Dims> unit_in(convs.size());
    Dims cur = in;
    for (std::size_t u = 0; u < convs.size(); ++u) {
      unit_in[u] = cur;
      cur = {convs[u].out_channels,
             (cur[1] + 2 * convs[u].padding - convs[u].kernel) / convs[u].stride + 1,
             (cur[2] + 2 * convs[u].padding - convs[u].kernel) / convs[u].stride + 1};
    }
    BasicTensor<T> dz = dy;
    for (std::size_t k = convs.size(); k-- > 0;) {
      const auto& c = convs[k];
      const std::string idx = std::to_string(k + 1);
      const ConvShape s =
          make_conv_shape(unit_in[k], c.out_channels, c.kernel, c.stride, c.padding);
      BasicTensor<T> da(batch_dims(n, unit_in[k]));
      kernels::conv2d_backward(rec.act[k].data(), tensor_data(p, "conv" + idx + ".weight"),
                               dz.data(), n, s, grad_data(g, "conv" + idx + ".weight"),
                               grad_data(g, "conv" + idx + ".bias"), da.data());
      if (k == 0 && spec.kind == LayerKind::resblock_downsample) {
        const ConvShape ss = make_conv_shape(in, spec.out_channels, 1, spec.stride, 0);
        BasicTensor<T> dskip(da.dims());
        kernels::conv2d_backward<T>(rec.act[0].data(), tensor_data(p, "skip.weight"),
                                    dy.data(), n, ss, grad_data(g, "skip.weight"),
                                    nullptr, dskip.data());
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dskip[i];
      }
      relu_mask(rec.act[k], da);
      if (spec.batchnorm) {
        if (k == 0 && !need_dx && !g) return {};
        dz = BasicTensor<T>(da.dims());
        kernels::batchnorm_backward(da.data(), n, unit_in[k][0], channel_area(unit_in[k]),
                                    tensor_data(p, "bn" + idx + ".gamma"), rec.unit_bn[k],
                                    grad_data(g, "bn" + idx + ".gamma"),
                                    grad_data(g, "bn" + idx + ".beta"), dz.data());
      } else {
        dz = std::move(da);
      }
    }
    if (!need_dx) return {};
    if (spec.kind == LayerKind::resblock_identity) {
      for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += dy[i];
    }
    return dz;
  }
};

}  // namespace

template <typename T>
BasicTensor<T> forward(const ArchSpec& arch, BasicParamSet<T>& params,
                       const BasicTensor<T>& inputs, Mode mode) {
  check_params(arch, params);
  Engine<T> engine(arch);
  return engine.forward(params, mode == Mode::train ? &params : nullptr, inputs, mode,
                        nullptr);
}

template <typename T>
BasicTensor<T> forward(const ArchSpec& arch, const BasicParamSet<T>& params,
                       const BasicTensor<T>& inputs) {
  check_params(arch, params);
  Engine<T> engine(arch);
  return engine.forward(params, nullptr, inputs, Mode::eval, nullptr);
}

template <typename T>
T softmax_cross_entropy(const BasicTensor<T>& logits, const std::vector<int>& labels,
                        BasicTensor<T>* dlogits) {
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw Error("batch has " + std::to_string(n) + " examples but " +
                std::to_string(labels.size()) + " labels");
  }
  if (dlogits) *dlogits = BasicTensor<T>(logits.dims());
  double total = 0;
  std::vector<double> p(k);
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= k) {
      throw Error("label " + std::to_string(y) + " out of range [0, " +
                  std::to_string(k) + ")");
    }
    const T* row = logits.data() + static_cast<std::size_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0;
    for (int j = 0; j < k; ++j) {
      p[j] = std::exp(static_cast<double>(row[j]) - mx);
      z += p[j];
    }
    total += std::log(z) - (static_cast<double>(row[y]) - mx);
    if (dlogits) {
      T* d = dlogits->data() + static_cast<std::size_t>(i) * k;
      for (int j = 0; j < k; ++j) {
        d[j] = static_cast<T>((p[j] / z - (j == y ? 1.0 : 0.0)) / n);
      }
    }
  }
  return static_cast<T>(total / n);
}

template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& logits) {
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) {
    const T* row = logits.data() + static_cast<std::size_t>(i) * k;
    int best = 0;
    for (int j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[i] = best;
  }
  return out;
}

template <typename T>
Gradients<T> backward(const ArchSpec& arch, BasicParamSet<T>& params,
                      const BasicTensor<T>& inputs, const std::vector<int>& labels,
                      const BackwardOptions& options) {
  check_params(arch, params);
  if (inputs.rank() == 0 || inputs.dim(0) == 0) throw Error("empty batch");
  for (int y : labels) {
    if (y < 0 || y >= arch.num_classes) {
      throw Error("label " + std::to_string(y) + " out of range [0, " +
                  std::to_string(arch.num_classes) + ")");
    }
  }
  Engine<T> engine(arch);
  Tape<T> tape;
  Gradients<T> out;
  out.logits = engine.forward(params, options.mode == Mode::train ? &params : nullptr,
                              inputs, options.mode, &tape);
  BasicTensor<T> dy;
  out.loss = softmax_cross_entropy(out.logits, labels, &dy);
  const auto pred = argmax_rows(out.logits);
  for (std::size_t i = 0; i < pred.size(); ++i) out.correct += pred[i] == labels[i];

  if (options.param_grads) out.params = zeros_like_trainable(params);
  const int n = inputs.dim(0);
  for (std::size_t l = arch.layers.size(); l-- > 0;) {
    const LayerSpec& spec = arch.layers[l];
    const bool parametric = is_parametric(spec.kind);
    LayerParams<T>* g = nullptr;
    if (parametric && options.param_grads &&
        !(options.skip_param_grads && options.skip_param_grads->count(spec.name))) {
      g = &out.params.at(spec.name);
    }
    const bool need_dx = l > 0 || options.input_grad;
    dy = engine.layer_backward(spec, engine.shapes[l], engine.shapes[l + 1], n,
                               parametric ? &params.at(spec.name) : nullptr, g, tape[l],
                               std::move(dy), need_dx);
    tape[l] = Record<T>{};
  }
  if (options.input_grad) {
    dy.reshape(inputs.dims());
    out.input = std::move(dy);
  }
  return out;
}

double eval_error(const ArchSpec& arch, const ParamSet& params, const Dataset& dataset,
                  std::size_t batch_size) {
  if (dataset.size() == 0) throw Error("eval_error: empty dataset");
  std::size_t wrong = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    const std::size_t end = std::min(dataset.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = forward(arch, params, dataset.gather_images(idx));
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      wrong += pred[i] != dataset.labels[start + i];
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(dataset.size());
}

#define LP_INSTANTIATE(T)                                                           \
  template BasicTensor<T> forward(const ArchSpec&, BasicParamSet<T>&,               \
                                  const BasicTensor<T>&, Mode);                     \
  template BasicTensor<T> forward(const ArchSpec&, const BasicParamSet<T>&,         \
                                  const BasicTensor<T>&);                           \
  template Gradients<T> backward(const ArchSpec&, BasicParamSet<T>&,                \
                                 const BasicTensor<T>&, const std::vector<int>&,    \
                                 const BackwardOptions&);                           \
  template T softmax_cross_entropy(const BasicTensor<T>&, const std::vector<int>&,  \
                                   BasicTensor<T>*);                                \
  template std::vector<int> argmax_rows(const BasicTensor<T>&);

LP_INSTANTIATE(float)
LP_INSTANTIATE(double)

#undef LP_INSTANTIATE

}  // namespace lp
