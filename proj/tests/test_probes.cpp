// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "layerprobe/checkpoints.hpp"
#include "layerprobe/data_io.hpp"
#include "layerprobe/nn.hpp"
#include "layerprobe/probes.hpp"
#include "layerprobe/trainer.hpp"
#include "support.hpp"

using namespace lp;
using namespace lp::testing;

namespace {

DatasetPair blobs(Dims dims = {1, 4, 4}) {
  SyntheticSpec s;
  s.n = 300;
  s.dims = std::move(dims);
  s.num_classes = 4;
  s.margin = 3.0;
  s.seed = 21;
  return synthetic_pair(s, 200);
}

TrainConfig quick(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 32;
  c.lr = 0.05;
  c.seed = 2;
  return c;
}

const CheckpointSeries& fcn_series() {
  static const CheckpointSeries s = [] {
    const auto d = blobs();
    return train(make_fcn(3, 16, {1, 4, 4}, 4), quick(4), d.train, d.test);
  }();
  return s;
}

std::vector<std::uint8_t> series_bytes(const CheckpointSeries& s) {
  std::vector<std::uint8_t> all;
  for (std::size_t t = 0; t < s.checkpoints.size(); ++t) {
    const auto b = encode_checkpoint(s.arch, static_cast<int>(t), s.checkpoints[t]);
    all.insert(all.end(), b.begin(), b.end());
  }
  return all;
}

}  // namespace

TEST_CASE("re-init copies exactly one layer and self-assignment is a no-op") {
  const auto& s = fcn_series();
  const auto& final = s.final_params();
  CHECK(re_init_layer(final, final, "layer2").bitwise_equal(final));
  const auto q = re_init_layer(final, s.at(0), "layer2");
  for (const auto& [layer, tensors] : q.layers) {
    const auto& want = layer == "layer2" ? s.at(0) : final;
    for (std::size_t t = 0; t < tensors.size(); ++t)
      CHECK(tensors[t].value.bitwise_equal(want.at(layer)[t].value));
  }
  CHECK_THROWS_AS(re_init_layer(final, s.at(0), "layer9"), Error);
}

TEST_CASE("re-randomization is seeded, local and in-distribution") {
  const auto& s = fcn_series();
  const auto& final = s.final_params();
  const auto a = re_randomize_layer(final, s.arch, "layer2", 5);
  const auto b = re_randomize_layer(final, s.arch, "layer2", 5);
  const auto c = re_randomize_layer(final, s.arch, "layer2", 6);
  CHECK(a.bitwise_equal(b));
  CHECK_FALSE(a.bitwise_equal(c));
  for (const auto& [layer, tensors] : a.layers) {
    if (layer == "layer2") continue;
    for (std::size_t t = 0; t < tensors.size(); ++t)
      CHECK(tensors[t].value.bitwise_equal(final.at(layer)[t].value));
  }
  // Differs from what the training seed drew, but from the same distribution.
  const auto& w = a.tensor("layer2", "weight");
  CHECK_FALSE(w.bitwise_equal(s.at(0).tensor("layer2", "weight")));
  CHECK_FALSE(w.bitwise_equal(init_params(s.arch, 5).tensor("layer2", "weight")));
  const double bound = init_bound(InitFamily::uniform_he, 16, 16);
  for (float v : w.values()) CHECK(std::abs(v) <= bound);
  for (float v : a.tensor("layer2", "bias").values()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(re_randomize_layer(final, s.arch, "nope", 1), Error);
}

TEST_CASE("robustness matrix identities") {
  const auto& s = fcn_series();
  const auto d = blobs();
  const auto before = series_bytes(s);
  ProbeOptions o;
  o.checkpoints = {0, 2, 4};
  const auto m = robustness_matrix(s, d.test, singleton_scheme(s.arch), o);
  CHECK(series_bytes(s) == before);  // probes never touch the series

  CHECK(m.cols == std::vector<std::string>{"rerand", "ckpt-0", "ckpt-2", "ckpt-4", "final"});
  CHECK(m.rows.back() == kFullModelRow);
  const double full = eval_error(s.arch, s.final_params(), d.test);
  for (const auto& layer : s.arch.parametric_layers()) {
    CHECK(m.at(layer, kFinalColumn) == full);
    CHECK(m.at(layer, "ckpt-4") == full);  // tau = T is self-assignment
    for (int t : {0, 2}) {
      const auto q = re_init_layer(s.final_params(), s.at(t), layer);
      CHECK(m.at(layer, checkpoint_column(t)) == eval_error(s.arch, q, d.test));
    }
    const auto r = re_randomize_layer(s.final_params(), s.arch, layer, o.probe_seed);
    CHECK(m.at(layer, kRerandColumn) == eval_error(s.arch, r, d.test));
  }
  for (int t : {0, 2, 4}) CHECK(m.at(kFullModelRow, checkpoint_column(t)) == s.log[t].test_err);
  CHECK(m.at(kFullModelRow, kFinalColumn) == full);
  CHECK_FALSE(m.has(kFullModelRow, kRerandColumn));
  CHECK(m.metadata.contains("run_id"));
  CHECK(m.metadata.at("eval_size") == d.test.size());

  // Joint probing with singleton groups is whole-layer probing.
  GroupingScheme manual{"manual", {}};
  for (const auto& l : s.arch.parametric_layers()) manual.groups.push_back({l, {l}});
  auto j = robustness_matrix(s, d.test, manual, o);
  j.metadata = m.metadata;
  CHECK(j == m);

  GroupingScheme empty{"empty", {}};
  CHECK_THROWS_AS(robustness_matrix(s, d.test, empty, o), Error);
  o.checkpoints = {9};
  CHECK_THROWS_AS(robustness_matrix(s, d.test, manual, o), Error);
}

TEST_CASE("joint groups reset all members at once") {
  const auto& s = fcn_series();
  const auto d = blobs();
  GroupingScheme g{"pair", {{"layer2+layer3", {"layer2", "layer3"}}}};
  ProbeOptions o;
  o.checkpoints = {0};
  o.rerandomize = false;
  const auto m = robustness_matrix(s, d.test, g, o);
  auto q = re_init_layer(s.final_params(), s.at(0), "layer2");
  q = re_init_layer(q, s.at(0), "layer3");
  CHECK(m.at("layer2+layer3", "ckpt-0") == eval_error(s.arch, q, d.test));
  CHECK(std::find(m.cols.begin(), m.cols.end(), kRerandColumn) == m.cols.end());
}

TEST_CASE("grouping schemes") {
  const auto fcn = make_fcn(5, 8, {1, 4, 4}, 4);
  auto layers_of = [](const GroupingScheme& s, std::size_t g) { return s.groups.at(g).layers; };
  const auto upper = make_scheme("upper", fcn);
  REQUIRE(upper.groups.size() == 2);
  CHECK(layers_of(upper, 0) == std::vector<std::string>{"layer1"});
  CHECK(layers_of(upper, 1) ==
        std::vector<std::string>{"layer2", "layer3", "layer4", "layer5", "layer6"});
  CHECK(layers_of(make_scheme("every-other", fcn), 1) ==
        std::vector<std::string>{"layer2", "layer4", "layer6"});
  CHECK(layers_of(make_scheme("two-of-three", fcn), 1) ==
        std::vector<std::string>{"layer2", "layer3", "layer5", "layer6"});
  CHECK(make_scheme("singleton", fcn).groups.size() == 6);
  CHECK(upper.groups[1].name == group_name(layers_of(upper, 1)));
  CHECK_THROWS_AS(make_scheme("bogus", fcn), Error);

  const auto res = make_preset("resnet-4s4b-w4", {3, 32, 32}, 10);
  const auto nf = non_first_blocks(res);
  CHECK(nf.size() == 12);
  CHECK(std::find(nf.begin(), nf.end(), "stage2.resblk1") == nf.end());
  const auto eo = layers_of(make_scheme("every-other", res), 0);
  CHECK(eo.size() == 8);
  CHECK(std::find(eo.begin(), eo.end(), "stage3.resblk4") != eo.end());
  CHECK(std::find(eo.begin(), eo.end(), "stage3.resblk3") == eo.end());
  const auto outer = layers_of(make_scheme("outer-stages", res), 0);
  CHECK(outer.size() == 6);
  CHECK(outer.front() == "stage1.resblk2");
  CHECK(outer.back() == "stage4.resblk4");

  GroupingScheme overlap{"o", {{"a", {"layer1", "layer2"}}, {"b", {"layer2"}}}};
  CHECK_THROWS_AS(overlap.validate(fcn), Error);
  GroupingScheme unknown{"u", {{"a", {"layer42"}}}};
  CHECK_THROWS_AS(unknown.validate(fcn), Error);
  GroupingScheme nonparam{"n", {{"a", {"stage1.resblk1.nope"}}}};
  CHECK_THROWS_AS(nonparam.validate(res), Error);
}

TEST_CASE("matrix csv and json round-trip, NaN cells included") {
  const auto& s = fcn_series();
  const auto d = blobs();
  ProbeOptions o;
  o.checkpoints = {0, 1};
  const auto m = robustness_matrix(s, d.test, singleton_scheme(s.arch), o);
  const auto csv = matrix_to_csv(m);
  CHECK(csv.rfind("row_id,col_id,test_error\n", 0) == 0);
  CHECK(csv == matrix_to_csv(robustness_matrix(s, d.test, singleton_scheme(s.arch), o)));
  const auto back = matrix_from_csv(csv);
  CHECK(back.rows == m.rows);
  CHECK(back.cols == m.cols);
  CHECK(back.values.size() == m.values.size());
  for (std::size_t r = 0; r < m.rows.size(); ++r)
    for (std::size_t c = 0; c < m.cols.size(); ++c) {
      const double a = m.values[r][c], b = back.values[r][c];
      CHECK(((std::isnan(a) && std::isnan(b)) || a == b));
    }
  const auto j = matrix_from_json(matrix_to_json(m));
  CHECK(j == m);
  CHECK(matrix_to_json(j).dump() == matrix_to_json(m).dump());
  CHECK_THROWS_AS(matrix_from_csv("row_id,col_id,test_error\na,b\n"), Error);
  CHECK_THROWS_AS(matrix_from_csv("nonsense\n"), Error);
}

TEST_CASE("default checkpoint columns follow the schedule") {
  TrainConfig c;
  CHECK(default_checkpoints(c, 100) == std::vector<int>{0, 1, 31, 61, 91, 100});
  c.epochs = 10;
  CHECK(default_checkpoints(c, 10) == std::vector<int>{0, 1, 4, 7, 10});
}

TEST_CASE("layer distances") {
  const auto arch = make_fcn(2, 6, {1, 2, 2}, 3);
  CheckpointSeries s;
  s.arch = arch;
  auto p0 = init_params(arch, 1);
  for (auto& [layer, tensors] : p0.layers)
    for (auto& t : tensors) t.value.fill(0.5f);
  auto shifted = p0;
  for (auto& [layer, tensors] : shifted.layers)
    for (auto& t : tensors) t.value.fill(0.5f + 0.25f);  // every weight moves by delta
  auto trained = init_params(arch, 2);
  s.checkpoints = {p0, shifted, trained};
  const auto d = layer_distances(s, {0, 1, 2});
  CHECK(d.layers == arch.parametric_layers());
  for (std::size_t l = 0; l < d.layers.size(); ++l) {
    CHECK(d.l2[l][0] == 0.0);
    CHECK(d.linf[l][0] == 0.0);
    CHECK(d.l2[l][1] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(d.linf[l][1] == 0.25);
    CHECK(d.l2[l][2] >= 0.0);
    CHECK(d.linf[l][2] >= d.l2[l][2]);  // max |x| >= rms |x|
  }
  // Both norms scale linearly with the displacement.
  double l2a, lia, l2b, lib;
  auto scaled = p0;
  for (auto& [layer, tensors] : scaled.layers)
    for (std::size_t t = 0; t < tensors.size(); ++t)
      for (std::size_t i = 0; i < tensors[t].value.size(); ++i)
        tensors[t].value[i] = 0.5f + 2.0f * (trained.at(layer)[t].value[i] - 0.5f);
  layer_distance(trained, p0, "layer2", l2a, lia);
  layer_distance(scaled, p0, "layer2", l2b, lib);
  CHECK(l2b == doctest::Approx(2 * l2a).epsilon(1e-6));
  CHECK(lib == doctest::Approx(2 * lia).epsilon(1e-6));

  const auto j = distances_from_json(distances_to_json(d));
  CHECK(j.l2 == d.l2);
  CHECK(j.linf == d.linf);
  CHECK(j.checkpoints == d.checkpoints);
  CHECK(distances_to_csv(d).rfind("layer,", 0) == 0);
}

TEST_CASE("spearman rank correlation") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 3, 4, 5}, {1, 4, 9, 16, 100}) == doctest::Approx(1.0));
  // Ties share the average rank: x ranks {1, 2.5, 2.5, 4}.
  const double r = spearman({1, 2, 2, 3}, {1, 2, 3, 4});
  const double mx = 2.5, my = 2.5;
  const std::vector<double> rx{1, 2.5, 2.5, 4}, ry{1, 2, 3, 4};
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 4; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  CHECK(r == doctest::Approx(sxy / std::sqrt(sxx * syy)));
  CHECK(std::isnan(spearman({1, 1, 1}, {1, 2, 3})));
}

TEST_CASE("width sweep statistics over exactly the requested trials") {
  const auto d = blobs();
  auto c = quick(2);
  const auto rows = width_sweep({8}, 2, c, d.train, d.test, 2);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].trials.size() == 2);
  const double a = rows[0].trials[0], b = rows[0].trials[1];
  CHECK(rows[0].mean == doctest::Approx((a + b) / 2));
  CHECK(rows[0].std == doctest::Approx(std::abs(a - b) / std::sqrt(2.0)));
  // Trial t is the run with seed config.seed + t.
  auto c1 = c;
  c1.seed = c.seed + 1;
  const auto s1 = train(make_fcn(2, 8, {1, 4, 4}, 4), c1, d.train, d.test);
  CHECK(b == upper_layer_reinit_delta(s1, d.test));
  CHECK_THROWS_AS(width_sweep({8}, 2, c, d.train, d.test, 1), Error);
}

namespace {

DatasetPair easy_blobs() {
  SyntheticSpec spec;
  spec.n = 400;
  spec.dims = {1, 4, 4};
  spec.num_classes = 2;
  spec.margin = 20.0;
  spec.seed = 3;
  return synthetic_pair(spec, 200);
}

}  // namespace

TEST_CASE("upper-layer delta is near zero on an easy task at large width") {
  const auto d = easy_blobs();
  const auto s = train(make_fcn(2, 256, {1, 4, 4}, 2), quick(3), d.train, d.test);
  CHECK(std::abs(upper_layer_reinit_delta(s, d.test)) <= 0.01);
}

TEST_CASE("every layer robust: the degenerate effective-parameter report") {
  const auto d = easy_blobs();
  const auto s = train(make_fcn(2, 256, {1, 4, 4}, 2), quick(3), d.train, d.test);
  ProbeOptions o;
  o.checkpoints = {0};
  o.rerandomize = false;
  const auto m = robustness_matrix(s, d.test, singleton_scheme(s.arch), o);
  const auto r = effective_param_report(m, s, d.train, 0.01);
  CHECK(r.robust_layers.size() == s.arch.num_parametric());
  CHECK(r.effective_params == 0.0);
  // Every layer reset jointly is checkpoint-0 itself.
  CHECK(r.train_error_reinit == eval_error(s.arch, s.at(0), d.train));
  CHECK(r.epsilon == r.train_error_reinit - r.train_error_full);
}

TEST_CASE("effective parameter report") {
  const auto& s = fcn_series();
  const auto d = blobs();
  ProbeOptions o;
  o.checkpoints = {0};
  o.rerandomize = false;
  const auto m = robustness_matrix(s, d.test, singleton_scheme(s.arch), o);

  const auto r = effective_param_report(m, s, d.train, 0.02);
  std::size_t robust = 0, total = 0;
  for (const auto& l : s.arch.parametric_layers()) {
    const std::size_t n = trainable_count(s.arch.layer(l));
    total += n;
    const bool is_robust = m.at(l, "ckpt-0") - m.at(l, kFinalColumn) <= 0.02;
    if (is_robust) robust += n;
    CHECK(is_robust == (std::find(r.robust_layers.begin(), r.robust_layers.end(), l) !=
                        r.robust_layers.end()));
  }
  CHECK(r.total_params == total);
  CHECK(r.robust_params == robust);
  CHECK(r.rho == doctest::Approx(double(robust) / double(total)));
  CHECK(r.effective_params == doctest::Approx(double(total - robust)));
  auto q = s.final_params();
  for (const auto& l : r.robust_layers) q = re_init_layer(q, s.at(0), l);
  CHECK(r.train_error_full == eval_error(s.arch, s.final_params(), d.train));
  CHECK(r.train_error_reinit == eval_error(s.arch, q, d.train));
  CHECK(r.epsilon == r.train_error_reinit - r.train_error_full);

  const auto all = effective_param_report(m, s, d.train, 10.0);
  CHECK(all.rho == 1.0);
  CHECK(all.effective_params == 0.0);
  CHECK(all.robust_layers.size() == s.arch.num_parametric());
  const auto none = effective_param_report(m, s, d.train, -0.0);
  CHECK(none.robust_params <= total);
  CHECK_THROWS_AS(effective_param_report(m, s, d.train, -0.01), Error);
  CHECK(report_to_json(r).contains("rho"));
}
