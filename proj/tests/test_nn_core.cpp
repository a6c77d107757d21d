// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "layerprobe/arch.hpp"
#include "layerprobe/nn.hpp"
#include "layerprobe/params.hpp"
#include "support.hpp"

using namespace lp;
using namespace lp::testing;

TEST_CASE("analytic gradients match central differences for every layer kind") {
  for (const auto& gc : grad_cases()) {
    CAPTURE(gc.name);
    const auto params = init_params(gc.arch, 11);
    CHECK(params.trainable_count() <= 1000);
    const auto r = run_grad_case(gc, 11);
    CAPTURE(r.worst);
    CHECK(r.checked > 0);
    CHECK(r.max_fd_spread < 1e-5);
    CHECK(r.max_rel < 1e-4);
  }
}

TEST_CASE("he init bound for a 784 to 256 dense layer") {
  const double b = init_bound(InitFamily::uniform_he, 784, 256);
  CHECK(b == doctest::Approx(std::sqrt(6.0 / 784.0)));
  CHECK(b == doctest::Approx(0.0875).epsilon(1e-3));
  auto arch = make_arch("he", {784}, 256, {dense("fc", 784, 256)});
  const auto p = init_params(arch, 3);
  const auto& w = p.tensor("fc", "weight");
  double lo = 1, hi = -1;
  for (float v : w.values()) {
    lo = std::min<double>(lo, v);
    hi = std::max<double>(hi, v);
  }
  CHECK(lo >= -b);
  CHECK(hi <= b);
  // The draw should fill most of the interval.
  CHECK(hi > 0.99 * b);
  CHECK(lo < -0.99 * b);
  for (float v : p.tensor("fc", "bias").values()) CHECK(v == 0.0f);
}

TEST_CASE("glorot bound") {
  CHECK(init_bound(InitFamily::uniform_glorot, 256, 10) ==
        doctest::Approx(std::sqrt(6.0 / 266.0)));
}

TEST_CASE("init is bitwise reproducible and seed dependent") {
  const auto arch = make_preset("resnet-2s2b-w4-bn", {3, 8, 8}, 10);
  const auto a = init_params(arch, 42);
  const auto b = init_params(arch, 42);
  const auto c = init_params(arch, 43);
  CHECK(a.bitwise_equal(b));
  CHECK_FALSE(a.bitwise_equal(c));
  check_params(arch, a);
  for (const auto& [layer, tensors] : a.layers) {
    for (const auto& t : tensors) {
      if (t.name.ends_with("running_mean")) {
        for (float v : t.value.values()) CHECK(v == 0.0f);
      }
      if (t.name.ends_with("running_var")) {
        for (float v : t.value.values()) CHECK(v == 1.0f);
      }
    }
  }
}

TEST_CASE("constant family yields the constant") {
  auto l = dense("fc", 4, 3, InitFamily::constant);
  l.init.constant = 0.0;
  const auto p = init_params(make_arch("c", {4}, 3, {l}), 1);
  for (float v : p.tensor("fc", "weight").values()) CHECK(v == 0.0f);
}

TEST_CASE("sample_layer depends only on the layer, not its neighbours") {
  const auto a1 = make_fcn(3, 16, {1, 4, 4}, 10);
  const auto a2 = make_fcn(5, 16, {1, 4, 4}, 10);
  const auto p1 = init_params(a1, 9);
  const auto p2 = init_params(a2, 9);
  CHECK(p1.tensor("layer2", "weight").bitwise_equal(p2.tensor("layer2", "weight")));
}

TEST_CASE("identity dense layer passes inputs through") {
  auto arch = make_arch("id", {5}, 5, {dense("fc", 5, 5)});
  auto p = init_params(arch, 0);
  auto& w = p.tensor("fc", "weight");
  w.fill(0.0f);
  for (int i = 0; i < 5; ++i) w[i * 5 + i] = 1.0f;
  const auto x = random_tensor<float>({3, 5}, 5);
  const auto y = forward(arch, std::as_const(p), x);
  CHECK(y.bitwise_equal(x));
}

TEST_CASE("relu zeroes negative inputs") {
  auto arch = make_arch("r", {4}, 4, {dense("fc", 4, 4), simple("relu", LayerKind::relu)});
  auto p = init_params(arch, 0);
  auto& w = p.tensor("fc", "weight");
  w.fill(0.0f);
  for (int i = 0; i < 4; ++i) w[i * 4 + i] = 1.0f;
  Tensor x({2, 4}, -1.5f);
  x[3] = -0.0f;
  const auto y = forward(arch, std::as_const(p), x);
  for (float v : y.values()) CHECK(v == 0.0f);
}

TEST_CASE("residual block with a zero branch is the identity") {
  for (bool bottleneck : {false, true}) {
    CAPTURE(bottleneck);
    auto arch = make_arch("res", {4, 5, 5}, 100,
                          {resblock("blk", LayerKind::resblock_identity, 4, 4, 1, bottleneck),
                           simple("flat", LayerKind::flatten)});
    auto p = init_params(arch, 4);
    for (auto& t : p.at("blk")) t.value.fill(0.0f);
    const auto x = random_tensor<float>({2, 4, 5, 5}, 8);
    const auto y = forward(arch, std::as_const(p), x);
    CHECK(std::equal(y.values().begin(), y.values().end(), x.values().begin()));
  }
}

TEST_CASE("convolution matches a naive loop") {
  struct G {
    int cin, cout, k, s, pad, h, w;
  };
  for (const G g : {G{3, 4, 3, 1, 1, 7, 6}, G{2, 5, 3, 2, 1, 8, 8}, G{4, 2, 1, 1, 0, 5, 5},
                    G{3, 3, 5, 2, 2, 9, 7}, G{2, 3, 2, 2, 0, 6, 6}}) {
    const int oh = (g.h + 2 * g.pad - g.k) / g.s + 1;
    const int ow = (g.w + 2 * g.pad - g.k) / g.s + 1;
    auto arch = make_arch("conv", {g.cin, g.h, g.w}, g.cout * oh * ow,
                          {conv("c", g.cin, g.cout, g.k, g.s, g.pad),
                           simple("flat", LayerKind::flatten)});
    auto p = init_params(arch, 5);
    randomize_trainable(p, 6, 0.5);
    const int n = 3;
    const auto x = random_tensor<float>({n, g.cin, g.h, g.w}, 7);
    const auto y = forward(arch, std::as_const(p), x);
    const auto& wt = p.tensor("c", "weight");
    const auto& bias = p.tensor("c", "bias");
    double worst = 0;
    for (int b = 0; b < n; ++b)
      for (int o = 0; o < g.cout; ++o)
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            double acc = bias[o], mag = std::abs(bias[o]);
            for (int c = 0; c < g.cin; ++c)
              for (int u = 0; u < g.k; ++u)
                for (int v = 0; v < g.k; ++v) {
                  const int yy = i * g.s - g.pad + u, xx = j * g.s - g.pad + v;
                  if (yy < 0 || yy >= g.h || xx < 0 || xx >= g.w) continue;
                  const double term = double(wt[((o * g.cin + c) * g.k + u) * g.k + v]) *
                                      x[((b * g.cin + c) * g.h + yy) * g.w + xx];
                  acc += term;
                  mag += std::abs(term);
                }
            const double got = y[((b * g.cout + o) * oh + i) * ow + j];
            // Relative to the summed magnitudes so cancellation does not
            // inflate the error of near-zero outputs.
            worst = std::max(worst, std::abs(got - acc) / mag);
          }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("uniform logits give ln K") {
  for (int k : {2, 10, 100}) {
    Tensor logits({4, k}, 0.25f);
    std::vector<int> y{0, 1, 0, 1};
    CHECK(softmax_cross_entropy(logits, y, static_cast<Tensor*>(nullptr)) ==
          doctest::Approx(std::log(double(k))).epsilon(1e-6));
  }
  Tensor logits({1, 10}, 0.0f);
  CHECK(softmax_cross_entropy(logits, {3}, static_cast<Tensor*>(nullptr)) ==
        doctest::Approx(2.302585).epsilon(1e-6));
}

TEST_CASE("cross-entropy is stable for large logits") {
  Tensor logits({1, 3}, std::vector<float>{1000.0f, 0.0f, -1000.0f});
  const float l = softmax_cross_entropy(logits, {1}, static_cast<Tensor*>(nullptr));
  CHECK(std::isfinite(l));
  CHECK(l == doctest::Approx(1000.0f));
}

TEST_CASE("duplicated example gives the single-example gradient") {
  const auto arch = make_fcn(2, 6, {1, 2, 2}, 3);
  auto p = init_params(arch, 2).cast<double>();
  const auto x1 = random_tensor<double>({1, 1, 2, 2}, 3);
  BasicTensor<double> x2({2, 1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) x2[i] = x2[i + 4] = x1[i];
  auto q = p;
  const auto g1 = backward(arch, p, x1, {2});
  const auto g2 = backward(arch, q, x2, {2, 2});
  CHECK(g1.loss == doctest::Approx(g2.loss).epsilon(1e-12));
  for (const auto& [layer, tensors] : g1.params.layers) {
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      const auto& a = tensors[k].value;
      const auto& b = g2.params.at(layer)[k].value;
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("backward rejects labels out of range and empty batches") {
  const auto arch = make_fcn(1, 4, {1, 2, 2}, 3);
  auto p = init_params(arch, 1);
  const auto x = random_tensor<float>({2, 1, 2, 2}, 1);
  CHECK_THROWS_AS(backward(arch, p, x, {0, 3}), Error);
  CHECK_THROWS_AS(backward(arch, p, x, {0, -1}), Error);
  CHECK_THROWS_AS(backward(arch, p, x, {0}), Error);
}

TEST_CASE("forward rejects shape mismatches naming the layer") {
  const auto arch = make_fcn(1, 4, {1, 2, 2}, 3);
  const auto p = init_params(arch, 1);
  const auto x = random_tensor<float>({2, 1, 3, 3}, 1);
  try {
    forward(arch, p, x);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("input") != std::string::npos);
  }
  ParamSet wrong = p;
  wrong.tensor("layer1", "weight") = Tensor({4, 5});
  try {
    forward(arch, wrong, random_tensor<float>({2, 1, 2, 2}, 1));
    FAIL("expected a parameter error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("layer1") != std::string::npos);
  }
}

TEST_CASE("argmax ties go to the lowest index; zero logits give 0.9 error") {
  Tensor logits({2, 4}, std::vector<float>{1, 3, 3, 0, 2, 2, 2, 2});
  CHECK(argmax_rows(logits) == std::vector<int>{1, 0});

  // Balanced 10-class set and a network that always outputs zero logits.
  Dataset d;
  d.id = "synthetic";
  d.num_classes = 10;
  d.images = random_tensor<float>({100, 3}, 2);
  for (int i = 0; i < 100; ++i) d.labels.push_back(i % 10);
  auto l = dense("fc", 3, 10, InitFamily::constant);
  const auto arch = make_arch("zero", {3}, 10, {l});
  const auto p = init_params(arch, 0);
  const double class0 =
      double(std::count(d.labels.begin(), d.labels.end(), 0)) / double(d.size());
  CHECK(eval_error(arch, p, d, 7) == doctest::Approx(1.0 - class0));
  CHECK(eval_error(arch, p, d) == doctest::Approx(0.9));
}

TEST_CASE("eval_error is 0 for a perfect classifier and 1 for permuted labels") {
  Dataset d;
  d.num_classes = 4;
  d.images = Tensor({8, 4});
  for (int i = 0; i < 8; ++i) {
    d.images[i * 4 + i % 4] = 1.0f;
    d.labels.push_back(i % 4);
  }
  auto arch = make_arch("id", {4}, 4, {dense("fc", 4, 4)});
  auto p = init_params(arch, 0);
  auto& w = p.tensor("fc", "weight");
  w.fill(0.0f);
  for (int i = 0; i < 4; ++i) w[i * 4 + i] = 1.0f;
  CHECK(eval_error(arch, p, d, 3) == 0.0);
  for (auto& y : d.labels) y = (y + 1) % 4;
  CHECK(eval_error(arch, p, d, 3) == 1.0);
}

TEST_CASE("eval forward is deterministic and independent of batch composition") {
  const auto arch = make_preset("resnet-2s2b-w4-bn", {3, 8, 8}, 10);
  auto p = init_params(arch, 5);
  randomize_trainable(p, 6, 0.3);
  const auto x = random_tensor<float>({6, 3, 8, 8}, 1);
  const auto a = forward(arch, std::as_const(p), x);
  const auto b = forward(arch, std::as_const(p), x);
  CHECK(a.bitwise_equal(b));
  for (float v : a.values()) CHECK(std::isfinite(v));
}

TEST_CASE("train-mode forward updates running statistics only") {
  const auto arch = make_preset("resnet-2s1b-w4-bn", {3, 8, 8}, 10);
  const auto p0 = init_params(arch, 5);
  auto p = p0;
  forward(arch, p, random_tensor<float>({4, 3, 8, 8}, 2), Mode::train);
  bool stats_moved = false;
  for (const auto& [layer, tensors] : p.layers) {
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      const auto& before = p0.at(layer)[k];
      if (before.trainable) {
        CHECK(tensors[k].value.bitwise_equal(before.value));
      } else if (!tensors[k].value.bitwise_equal(before.value)) {
        stats_moved = true;
      }
    }
  }
  CHECK(stats_moved);
}

TEST_CASE("gradient dims match parameter dims for the presets") {
  for (const char* preset : {"fcn-3x8", "resnet-2s2b-w4", "resnet-2s2b-w4-bn-bottleneck",
                             "resnet-2^2-w4", "vgg-mini"}) {
    CAPTURE(preset);
    const auto arch = make_preset(preset, {3, 16, 16}, 10);
    auto p = init_params(arch, 1);
    BackwardOptions o;
    o.input_grad = true;
    const auto x = random_tensor<float>({2, 3, 16, 16}, 1);
    const auto g = backward(arch, p, x, {1, 7}, o);
    CHECK(g.input->dims() == x.dims());
    CHECK(g.logits.dims() == Dims{2, 10});
    CHECK(std::isfinite(g.loss));
    for (const auto& [layer, tensors] : p.layers) {
      std::size_t k = 0;
      for (const auto& t : tensors) {
        if (!t.trainable) continue;
        const auto& gt = g.params.at(layer).at(k++);
        CHECK(gt.name == t.name);
        CHECK(gt.value.dims() == t.value.dims());
        CHECK(all_finite(gt.value));
      }
    }
  }
}

TEST_CASE("arch validation names the offending layer") {
  try {
    make_arch("bad", {6}, 3, {dense("fc1", 6, 8), dense("fc2", 7, 3)});
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("fc2") != std::string::npos);
  }
  CHECK_THROWS_AS(make_arch("none", {6}, 6, {simple("r", LayerKind::relu)}), Error);
}

TEST_CASE("resnet presets follow the stage structure") {
  const auto arch = make_preset("resnet-4s2b-w4", {3, 32, 32}, 10);
  CHECK(arch.layer("stage1.resblk1").kind == LayerKind::resblock_identity);
  for (int s = 2; s <= 4; ++s) {
    const std::string st = "stage" + std::to_string(s);
    CHECK(arch.layer(st + ".resblk1").kind == LayerKind::resblock_downsample);
    CHECK(arch.layer(st + ".resblk2").kind == LayerKind::resblock_identity);
  }
  const auto xd = make_preset("resnet-4^2-w4", {3, 32, 32}, 10);
  for (const auto& l : xd.layers) CHECK(l.kind != LayerKind::resblock_downsample);
  CHECK(xd.has_layer("stage2.downsample"));
}
