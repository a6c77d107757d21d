// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sstream>
#include <sys/wait.h>

#include "layerprobe/checkpoints.hpp"
#include "layerprobe/experiment.hpp"
#include "layerprobe/report.hpp"
#include "support.hpp"

using namespace lp;
namespace fs = std::filesystem;

namespace {

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

bool same_layer(const ParamSet& a, const ParamSet& b, const std::string& layer) {
  const auto& x = a.at(layer);
  const auto& y = b.at(layer);
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!x[i].value.bitwise_equal(y[i].value)) return false;
  }
  return true;
}

nlohmann::json load_json(const fs::path& p) { return nlohmann::json::parse(read_text(p)); }

ExperimentConfig synthetic_config(const fs::path& out, const std::string& command) {
  ExperimentConfig c;
  c.command = command;
  c.out_dir = out.string();
  c.data.dataset = "synthetic";
  c.data.synthetic.n = 400;
  c.data.synthetic.dims = {12};
  c.data.synthetic.num_classes = 3;
  c.data.synthetic_test = 200;
  c.arch = "fcn-3x16";
  c.train.epochs = 3;
  c.train.batch_size = 32;
  c.train.lr = 0.05;
  c.train.seed = 4;
  return c;
}

// Tiny image task for the residual commands.
ExperimentConfig image_config(const fs::path& out, const std::string& command) {
  auto c = synthetic_config(out, command);
  c.data.synthetic.dims = {3, 8, 8};
  c.data.synthetic.num_classes = 2;
  c.data.synthetic.margin = 6.0;
  c.arch = "resnet-2^2-w4";
  c.train.epochs = 2;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LAYERPROBE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("experiment config round-trips through json") {
  ExperimentConfig c = synthetic_config("out", "joint-probe");
  c.probe.checkpoints = {0, 2, 3};
  c.probe.scheme = "every-other";
  c.sweep.widths = {8, 64};
  c.attack.s = {0, 1};
  c.attack.eval.pgd.steps = 7;
  c.train.freeze = {"layer2"};
  c.report.palette = "gray";
  const nlohmann::json j = c;
  const auto back = j.get<ExperimentConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.attack.eval.pgd.steps == 7);
  CHECK(back.probe.checkpoints == std::vector<int>{0, 2, 3});
  CHECK(back.data.synthetic.dims == Dims{12});

  // A partial file keeps the defaults elsewhere.
  const auto partial = nlohmann::json{{"arch", "fcn-5x256"}, {"train", {{"epochs", 10}}}}
                           .get<ExperimentConfig>();
  CHECK(partial.arch == "fcn-5x256");
  CHECK(partial.train.epochs == 10);
  CHECK(partial.train.lr == TrainConfig{}.lr);
}

TEST_CASE("unknown config keys and values are usage errors") {
  CHECK_THROWS_AS((nlohmann::json{{"lr", 0.1}}.get<ExperimentConfig>()), UsageError);
  CHECK_THROWS_AS((nlohmann::json{{"train", {{"lr ", 0.1}}}}.get<ExperimentConfig>()), UsageError);
  CHECK_THROWS_AS((nlohmann::json{{"attack", {{"pgd", {{"kind", "fgsm"}}}}}}.get<ExperimentConfig>()),
                  UsageError);

  ExperimentConfig c = synthetic_config("out", "train");
  CHECK_NOTHROW(validate_config(c));
  auto bad = c;
  bad.command = "explode";
  CHECK_THROWS_AS(validate_config(bad), UsageError);
  bad = c;
  bad.arch = "fcn-3by256";
  CHECK_THROWS_AS(validate_config(bad), UsageError);
  bad = c;
  bad.data.dataset = "imagenet";
  CHECK_THROWS_AS(validate_config(bad), UsageError);
  bad = c;
  bad.probe.scheme = "odd-ones";
  CHECK_THROWS_AS(validate_config(bad), UsageError);
  bad = c;
  bad.report.style = "pie";
  CHECK_THROWS_AS(validate_config(bad), UsageError);
  bad = c;
  bad.command = "probe";
  CHECK_THROWS_AS(validate_config(bad), UsageError);  // no run given
  bad = c;
  bad.command = "report";
  bad.report.input = "/nonexistent/artifact.json";
  CHECK_THROWS_AS(validate_config(bad), UsageError);
}

TEST_CASE("train, probe, distances and report on a finished run") {
  const auto out = testing::scratch_dir("cli-run");
  std::ostringstream log;
  auto c = synthetic_config(out, "train");
  const auto run = run_experiment(c, log);
  CHECK(run == out / "fcn-3x16-seed4");
  for (const char* f : {"manifest", "log.csv", "ckpt-0.lpck", "ckpt-3.lpck", "config.json",
                        "training.json", "training.svg"}) {
    CHECK_MESSAGE(fs::exists(run / f), f);
  }
  CHECK(load_json(run / "config.json").at("train").at("seed") == 4);

  auto p = synthetic_config(out, "probe");
  p.run_dir = run.string();
  p.probe.checkpoints = {0, 1, 3};
  CHECK(run_experiment(p, log) == run);
  REQUIRE(fs::exists(run / "robustness.csv"));
  REQUIRE(fs::exists(run / "robustness.svg"));
  const auto artifact = load_json(run / "robustness.json");
  CHECK(artifact.at("artifact") == "robustness");
  CHECK(artifact.at("config").at("command") == "probe");
  CHECK(artifact.at("config").at("train").at("seed") == 4);
  CHECK(artifact.at("config").at("probe").at("checkpoints") == std::vector<int>{0, 1, 3});
  const auto from_json = matrix_from_json(artifact.at("data"));
  auto from_csv = matrix_from_csv(read_text(run / "robustness.csv"));
  from_csv.metadata = from_json.metadata;
  CHECK(from_csv == from_json);
  const std::size_t layers = 4;
  // Per layer: rerand, three checkpoints, final; the full_model row has no rerand.
  CHECK(count(read_text(run / "robustness.svg"), "class=\"cell\"") == layers * 5 + 4);
  CHECK(fs::exists(run / "effective_params.json"));

  auto d = synthetic_config(out, "distances");
  d.run_dir = run.string();
  run_experiment(d, log);
  const auto dist = distances_from_json(load_json(run / "distances.json").at("data"));
  CHECK(dist.checkpoints == std::vector<int>{0, 1, 2, 3});
  for (const auto& row : dist.l2) CHECK(row.at(0) == 0.0);
  for (const auto& row : dist.linf) CHECK(row.at(0) == 0.0);

  // Regenerating from the stored JSON reproduces every plot byte for byte.
  std::map<fs::path, std::string> before;
  for (const auto& e : fs::directory_iterator(run)) {
    if (e.path().extension() == ".svg") before[e.path()] = read_text(e.path());
  }
  CHECK(before.size() == 4);
  auto r = synthetic_config(out, "report");
  r.report.input = run.string();
  run_experiment(r, log);
  for (const auto& [path, bytes] : before) CHECK_MESSAGE(read_text(path) == bytes, path);

  // The line variant draws the same rows as curves.
  r.report.input = (run / "robustness.json").string();
  r.report.style = "lines";
  run_experiment(r, log);
  const auto lines = read_text(run / "robustness-lines.svg");
  CHECK(count(lines, "<polyline") == from_json.rows.size());
  for (const auto& row : from_json.rows) CHECK(lines.find(">" + row + "<") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("joint-probe with every-other groups alternate upper layers") {
  const auto out = testing::scratch_dir("cli-joint");
  std::ostringstream log;
  auto c = synthetic_config(out, "train");
  c.arch = "fcn-5x16";
  c.train.epochs = 2;
  const auto run = run_experiment(c, log);
  auto j = synthetic_config(out, "joint-probe");
  j.run_dir = run.string();
  j.probe.scheme = "every-other";
  run_experiment(j, log);
  REQUIRE(fs::exists(run / "joint-every-other.csv"));
  REQUIRE(fs::exists(run / "joint-every-other.svg"));
  const auto m = matrix_from_json(load_json(run / "joint-every-other.json").at("data"));
  CHECK(m.rows == std::vector<std::string>{"layer1", "layer2+layer4+layer6", "full_model"});
  const nlohmann::json groups = {{"layer1", {"layer1"}},
                                 {"layer2+layer4+layer6", {"layer2", "layer4", "layer6"}}};
  CHECK(m.metadata.at("groups") == groups);
  fs::remove_all(out);
}

TEST_CASE("freeze-train and ablate-train default to non-first residual blocks") {
  const auto out = testing::scratch_dir("cli-freeze");
  std::ostringstream log;
  const auto frozen = run_experiment(image_config(out, "freeze-train"), log);
  const auto series = load_run(frozen);
  const std::vector<std::string> picked{"stage1.resblk2", "stage2.resblk2"};
  CHECK(load_json(frozen / "config.json").at("layers") == picked);
  for (const auto& l : picked) {
    CHECK(same_layer(series.final_params(), series.at(0), l));
  }
  CHECK_FALSE(same_layer(series.final_params(), series.at(0), "stage1.resblk1"));

  const auto ablated = run_experiment(image_config(out, "ablate-train"), log);
  const auto arch = read_manifest(ablated).arch;
  for (const auto& l : picked) CHECK_FALSE(arch.has_layer(l));
  CHECK(arch.has_layer("stage1.resblk1"));
  fs::remove_all(out);
}

TEST_CASE("attack table covers baseline and each s with the gradient mode recorded") {
  const auto out = testing::scratch_dir("cli-attack");
  std::ostringstream log;
  const auto run = run_experiment(image_config(out, "train"), log);
  auto a = image_config(out, "attack");
  a.run_dir = run.string();
  a.attack.eval.subset = 24;
  a.attack.eval.repeats = 2;
  a.attack.eval.pgd.steps = 2;
  a.attack.s = {0, 1};
  run_experiment(a, log);
  const auto j = load_json(run / "attack.json");
  const auto& rows = j.at("data").at("rows");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].at("config") == "baseline");
  CHECK(rows[0].at("clean").at("std") == 0.0);
  // s = 0 never substitutes, so it matches the baseline exactly.
  CHECK(rows[1].at("clean") == rows[0].at("clean"));
  CHECK(rows[1].at("fgsm") == rows[0].at("fgsm"));
  const auto& meta = j.at("data").at("metadata");
  CHECK(meta.contains("gradient_mode"));
  CHECK(meta.contains("gradient_mode_ambiguity"));
  CHECK(fs::exists(run / "attack.csv"));
  CHECK(fs::exists(run / "attack.svg"));
  fs::remove_all(out);
}

TEST_CASE("command line exit codes") {
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("bogus-command") == 2);
  CHECK(run_cli("train --no-such-flag") == 2);
  CHECK(run_cli("train --arch fcn-nope --dataset synthetic") == 2);
  CHECK(run_cli("joint-probe --run x --scheme nope") == 2);
  CHECK(run_cli("train --epochs notanumber") == 2);
  CHECK(run_cli("probe --run /nonexistent/run") == 1);
  CHECK(run_cli("train --print-config --dataset synthetic --arch fcn-2x8") == 0);
}

TEST_CASE("the binary trains, probes and renders from flags and a config file") {
  const auto out = testing::scratch_dir("cli-bin");
  nlohmann::json cfg = synthetic_config(out, "train");
  cfg["train"]["epochs"] = 1;
  write_text(out / "exp.json", cfg.dump());
  const std::string base = "--config " + (out / "exp.json").string();
  REQUIRE(run_cli("train " + base + " --epochs 2 --run-id flags") == 0);
  const auto run = out / "flags";
  // Flags override the file; everything else comes from it.
  const auto stored = load_json(run / "config.json");
  CHECK(stored.at("train").at("epochs") == 2);
  CHECK(stored.at("train").at("seed") == 4);
  REQUIRE(run_cli("probe " + base + " --run " + run.string()) == 0);
  CHECK(fs::exists(run / "robustness.csv"));
  CHECK(fs::exists(run / "robustness.svg"));
  REQUIRE(run_cli("report " + (run / "robustness.json").string() + " --style lines") == 0);
  CHECK(fs::exists(run / "robustness-lines.svg"));
  CHECK(run_cli("report " + (out / "missing.json").string()) == 2);
  fs::remove_all(out);
}
