// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "layerprobe/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>

#include "layerprobe/checkpoints.hpp"
#include "layerprobe/nn.hpp"
#include "layerprobe/report.hpp"

namespace lp {

namespace fs = std::filesystem;

// --- config serialization ----------------------------------------------------

namespace {

// Unknown keys are almost always typos; a silently ignored "lr " would make a
// run quietly use the default.
void check_keys(const nlohmann::json& j, const nlohmann::json& known, const std::string& where) {
  if (!j.is_object()) throw UsageError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw UsageError(where + ": unknown key '" + key + "'");
  }
}

nlohmann::json synthetic_json(const SyntheticSpec& s) {
  return {{"n", s.n}, {"dims", s.dims}, {"num_classes", s.num_classes},
          {"margin", s.margin}, {"noise", s.noise}, {"seed", s.seed}};
}

SyntheticSpec synthetic_from(const nlohmann::json& j) {
  check_keys(j, synthetic_json({}), "data.synthetic");
  const SyntheticSpec d;
  SyntheticSpec s;
  s.n = j.value("n", d.n);
  s.dims = j.value("dims", d.dims);
  s.num_classes = j.value("num_classes", d.num_classes);
  s.margin = j.value("margin", d.margin);
  s.noise = j.value("noise", d.noise);
  s.seed = j.value("seed", d.seed);
  return s;
}

nlohmann::json data_json(const DataConfig& c) {
  return {{"dataset", c.dataset},
          {"data_dir", c.data_dir},
          {"per_channel", c.per_channel},
          {"synthetic", synthetic_json(c.synthetic)},
          {"synthetic_test", c.synthetic_test},
          {"test_limit", c.test_limit}};
}

DataConfig data_from(const nlohmann::json& j) {
  check_keys(j, data_json({}), "data");
  const DataConfig d;
  DataConfig c;
  c.dataset = j.value("dataset", d.dataset);
  c.data_dir = j.value("data_dir", d.data_dir);
  c.per_channel = j.value("per_channel", d.per_channel);
  if (j.contains("synthetic")) c.synthetic = synthetic_from(j.at("synthetic"));
  c.synthetic_test = j.value("synthetic_test", d.synthetic_test);
  c.test_limit = j.value("test_limit", d.test_limit);
  return c;
}

nlohmann::json probe_json(const ProbeConfig& c) {
  return {{"checkpoints", c.checkpoints}, {"scheme", c.scheme}, {"threshold", c.threshold},
          {"probe_seed", c.probe_seed}, {"rerandomize", c.rerandomize}};
}

ProbeConfig probe_from(const nlohmann::json& j) {
  check_keys(j, probe_json({}), "probe");
  const ProbeConfig d;
  ProbeConfig c;
  c.checkpoints = j.value("checkpoints", d.checkpoints);
  c.scheme = j.value("scheme", d.scheme);
  c.threshold = j.value("threshold", d.threshold);
  c.probe_seed = j.value("probe_seed", d.probe_seed);
  c.rerandomize = j.value("rerandomize", d.rerandomize);
  return c;
}

nlohmann::json sweep_json(const SweepConfig& c) {
  return {{"widths", c.widths}, {"depth", c.depth}, {"trials", c.trials}};
}

SweepConfig sweep_from(const nlohmann::json& j) {
  check_keys(j, sweep_json({}), "sweep");
  const SweepConfig d;
  SweepConfig c;
  c.widths = j.value("widths", d.widths);
  c.depth = j.value("depth", d.depth);
  c.trials = j.value("trials", d.trials);
  return c;
}

nlohmann::json attack_json(const AttackSection& c) {
  return {{"subset", c.eval.subset},
          {"repeats", c.eval.repeats},
          {"seed", c.eval.seed},
          {"batch_size", c.eval.batch_size},
          {"fgsm", c.eval.fgsm},
          {"pgd", c.eval.pgd},
          {"r", c.r},
          {"s", c.s},
          {"bank_seed", c.bank_seed}};
}

AttackConfig attack_config_from(const nlohmann::json& j, AttackKind kind,
                                const AttackConfig& fallback, const std::string& where) {
  nlohmann::json known = fallback;
  check_keys(j, known, where);
  nlohmann::json merged = known;
  merged.update(j);
  AttackConfig c;
  try {
    c = merged.get<AttackConfig>();
  } catch (const Error& e) {
    throw UsageError(where + ": " + e.what());
  }
  if (c.kind != kind) throw UsageError(where + ": kind must be '" + known.at("kind").get<std::string>() + "'");
  return c;
}

AttackSection attack_from(const nlohmann::json& j) {
  check_keys(j, attack_json({}), "attack");
  const AttackSection d;
  AttackSection c;
  c.eval.subset = j.value("subset", d.eval.subset);
  c.eval.repeats = j.value("repeats", d.eval.repeats);
  c.eval.seed = j.value("seed", d.eval.seed);
  c.eval.batch_size = j.value("batch_size", d.eval.batch_size);
  if (j.contains("fgsm")) {
    c.eval.fgsm = attack_config_from(j.at("fgsm"), AttackKind::fgsm, d.eval.fgsm, "attack.fgsm");
  }
  if (j.contains("pgd")) {
    c.eval.pgd = attack_config_from(j.at("pgd"), AttackKind::pgd, d.eval.pgd, "attack.pgd");
  }
  c.r = j.value("r", d.r);
  c.s = j.value("s", d.s);
  c.bank_seed = j.value("bank_seed", d.bank_seed);
  return c;
}

nlohmann::json report_json(const ReportConfig& c) {
  return {{"input", c.input}, {"style", c.style}, {"orientation", c.orientation},
          {"palette", c.palette}};
}

ReportConfig report_from(const nlohmann::json& j) {
  check_keys(j, report_json({}), "report");
  const ReportConfig d;
  ReportConfig c;
  c.input = j.value("input", d.input);
  c.style = j.value("style", d.style);
  c.orientation = j.value("orientation", d.orientation);
  c.palette = j.value("palette", d.palette);
  return c;
}

}  // namespace

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"command", c.command},
       {"data", data_json(c.data)},
       {"arch", c.arch},
       {"train", c.train},
       {"run_id", c.run_id},
       {"run_dir", c.run_dir},
       {"out_dir", c.out_dir},
       {"layers", c.layers},
       {"probe", probe_json(c.probe)},
       {"sweep", sweep_json(c.sweep)},
       {"attack", attack_json(c.attack)},
       {"report", report_json(c.report)}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  check_keys(j, nlohmann::json(ExperimentConfig{}), "config");
  const ExperimentConfig d;
  try {
    c.command = j.value("command", d.command);
    c.data = j.contains("data") ? data_from(j.at("data")) : d.data;
    c.arch = j.value("arch", d.arch);
    if (j.contains("train")) {
      check_keys(j.at("train"), nlohmann::json(TrainConfig{}), "train");
      c.train = j.at("train").get<TrainConfig>();
    } else {
      c.train = d.train;
    }
    c.run_id = j.value("run_id", d.run_id);
    c.run_dir = j.value("run_dir", d.run_dir);
    c.out_dir = j.value("out_dir", d.out_dir);
    c.layers = j.value("layers", d.layers);
    c.probe = j.contains("probe") ? probe_from(j.at("probe")) : d.probe;
    c.sweep = j.contains("sweep") ? sweep_from(j.at("sweep")) : d.sweep;
    c.attack = j.contains("attack") ? attack_from(j.at("attack")) : d.attack;
    c.report = j.contains("report") ? report_from(j.at("report")) : d.report;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

// --- validation ----------------------------------------------------------------

namespace {

const std::vector<std::string> kSchemes{"singleton", "upper", "two-of-three", "every-other",
                                        "outer-stages"};

bool one_of(const std::string& v, const std::vector<std::string>& options) {
  return std::find(options.begin(), options.end(), v) != options.end();
}

std::string joined(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
  return out;
}

Dims data_dims(const DataConfig& c) {
  if (c.dataset == "mnist") return {1, 28, 28};
  if (c.dataset == "cifar10") return {3, 32, 32};
  return c.synthetic.dims;
}

int data_classes(const DataConfig& c) {
  return c.dataset == "synthetic" ? c.synthetic.num_classes : 10;
}

bool trains(const std::string& command) {
  return command == "train" || command == "freeze-train" || command == "ablate-train";
}

bool reads_run(const std::string& command) {
  return command == "probe" || command == "joint-probe" || command == "distances" ||
         command == "attack";
}

}  // namespace

void validate_config(const ExperimentConfig& c) {
  if (!one_of(c.command, experiment_commands())) {
    throw UsageError("unknown command '" + c.command + "' (" + joined(experiment_commands()) +
                     ")");
  }
  if (!one_of(c.data.dataset, {"mnist", "cifar10", "synthetic"})) {
    throw UsageError("unknown dataset '" + c.data.dataset + "' (mnist, cifar10, synthetic)");
  }
  if (trains(c.command)) {
    try {
      make_preset(c.arch, data_dims(c.data), data_classes(c.data));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    if (c.train.epochs < 1) throw UsageError("train.epochs must be at least 1");
    if (c.train.batch_size < 1) throw UsageError("train.batch_size must be at least 1");
    if (!(c.train.lr > 0.0)) throw UsageError("train.lr must be positive");
  }
  if (reads_run(c.command) && c.run_dir.empty()) {
    throw UsageError(c.command + " needs --run (a finished training run directory)");
  }
  if (!one_of(c.probe.scheme, kSchemes)) {
    throw UsageError("unknown grouping scheme '" + c.probe.scheme + "' (" + joined(kSchemes) +
                     ")");
  }
  if (!(c.probe.threshold >= 0.0)) throw UsageError("probe.threshold must be non-negative");
  if (c.command == "width-sweep") {
    if (c.sweep.widths.empty()) throw UsageError("sweep.widths is empty");
    for (int w : c.sweep.widths) {
      if (w < 1) throw UsageError("sweep widths must be positive");
    }
    if (c.sweep.depth < 2) throw UsageError("sweep.depth must be at least 2");
    if (c.sweep.trials < 1) throw UsageError("sweep.trials must be at least 1");
  }
  if (c.command == "attack") {
    if (c.attack.r < 1) throw UsageError("attack.r must be at least 1");
    for (int s : c.attack.s) {
      if (s < 0) throw UsageError("attack.s must be non-negative");
    }
    if (c.attack.eval.repeats < 1) throw UsageError("attack.repeats must be at least 1");
    if (c.attack.eval.subset < 1) throw UsageError("attack.subset must be at least 1");
  }
  if (!one_of(c.report.style, {"heatmap", "lines"})) {
    throw UsageError("unknown style '" + c.report.style + "' (heatmap, lines)");
  }
  if (c.report.orientation != "auto") {
    try {
      orientation_from_string(c.report.orientation);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  try {
    palette_from_string(c.report.palette);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (c.command == "report") {
    if (c.report.input.empty()) throw UsageError("report needs an input artifact or directory");
    if (!fs::exists(c.report.input)) {
      throw UsageError("report input '" + c.report.input + "' does not exist");
    }
  }
}

// --- data ----------------------------------------------------------------------

DatasetPair load_data(const DataConfig& c) {
  DatasetPair d;
  if (c.dataset == "mnist") {
    d = load_mnist(fs::path(c.data_dir) / "mnist");
  } else if (c.dataset == "cifar10") {
    d = load_cifar10(fs::path(c.data_dir) / "cifar-10-batches-bin", c.per_channel);
  } else if (c.dataset == "synthetic") {
    d = synthetic_pair(c.synthetic, c.synthetic_test);
  } else {
    throw UsageError("unknown dataset '" + c.dataset + "'");
  }
  if (c.test_limit > 0 && c.test_limit < d.test.size()) d.test = d.test.head(c.test_limit);
  return d;
}

// --- commands ------------------------------------------------------------------

namespace {

struct Context {
  ExperimentConfig config;  // resolved: run ids and checkpoints filled in
  std::ostream& log;
};

nlohmann::json artifact(const std::string& kind, const ExperimentConfig& config,
                        nlohmann::json data) {
  return {{"artifact", kind}, {"config", config}, {"data", std::move(data)}};
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string default_run_id(const ExperimentConfig& c) {
  std::string tag = c.arch;
  if (c.command == "freeze-train") tag += "-freeze";
  if (c.command == "ablate-train") tag += "-ablate";
  return tag + "-seed" + std::to_string(c.train.seed);
}

std::set<std::string, std::less<>> selection_of(const ExperimentConfig& c, const ArchSpec& arch) {
  const auto layers = c.layers.empty() ? non_first_blocks(arch) : c.layers;
  if (layers.empty()) throw UsageError(arch.name + " has no layers to select by default");
  return {layers.begin(), layers.end()};
}

fs::path run_train(Context& ctx) {
  auto& c = ctx.config;
  const auto data = load_data(c.data);
  ArchSpec arch = make_preset(c.arch, data.train.example_dims(), data.train.num_classes);
  TrainConfig train = c.train;
  if (c.command == "freeze-train") {
    train.freeze = selection_of(c, arch);
    c.layers.assign(train.freeze.begin(), train.freeze.end());
  } else if (c.command == "ablate-train") {
    const auto removed = selection_of(c, arch);
    c.layers.assign(removed.begin(), removed.end());
    arch = remove_layers(arch, removed);
  }
  if (c.run_id.empty()) c.run_id = default_run_id(c);
  c.train = train;
  const fs::path dir = fs::path(c.out_dir) / c.run_id;
  fs::create_directories(dir);
  write_json(dir / "config.json", nlohmann::json(c));

  Manifest m;
  m.run_id = c.run_id;
  m.arch = arch;
  m.config = train;
  m.seed = train.seed;
  m.dataset_id = data.train.id;
  m.normalization = data.train.normalization;
  RunWriter writer(dir, m);
  auto on_checkpoint = [&](int tau, const ParamSet& p, const EpochLog& l) {
    writer(tau, p, l);
    ctx.log << c.run_id << " epoch " << tau << " lr " << l.lr << " train_err "
            << fmt(l.train_err) << " test_err " << fmt(l.test_err) << "\n";
  };
  ctx.log << c.command << " " << arch.name << " on " << data.train.id << " ("
          << data.train.size() << " train, " << data.test.size() << " test) -> " << dir.string()
          << "\n";
  const auto series = c.command == "freeze-train"
                          ? train_frozen(arch, train, data.train, data.test, on_checkpoint)
                          : lp::train(arch, train, data.train, data.test, on_checkpoint);

  nlohmann::json rows = nlohmann::json::array();
  for (const auto& l : series.log) {
    rows.push_back({{"epoch", l.epoch}, {"lr", l.lr}, {"train_err", l.train_err},
                    {"test_err", l.test_err}});
  }
  const auto j = artifact("training", c,
                          {{"run_id", c.run_id}, {"arch", arch.name},
                           {"parameters", series.final_params().trainable_count()}, {"log", rows}});
  write_json(dir / "training.json", j);
  render_artifact(dir / "training.json", c.report);
  return dir;
}

// Dataset used by a stored run: its own config.json when present.
DatasetPair run_data(Context& ctx, const CheckpointSeries& series) {
  auto& c = ctx.config;
  const fs::path stored = fs::path(c.run_dir) / "config.json";
  if (fs::exists(stored)) {
    const auto run_config = nlohmann::json::parse(read_text(stored)).get<ExperimentConfig>();
    const std::size_t limit = c.data.test_limit;
    c.data = run_config.data;
    if (limit > 0) c.data.test_limit = limit;
  }
  auto data = load_data(c.data);
  if (data.train.id != series.dataset_id) {
    throw Error("run '" + series.run_id + "' was trained on " + series.dataset_id +
                ", data config gives " + data.train.id);
  }
  if (data.train.example_dims() != series.arch.input_dims) {
    throw Error("run '" + series.run_id + "' expects different input dims than " +
                data.train.id + " provides");
  }
  return data;
}

fs::path analysis_dir(Context& ctx, const CheckpointSeries& series) {
  auto& c = ctx.config;
  if (c.run_id.empty()) c.run_id = series.run_id;
  c.arch = series.arch.name;
  c.train = series.config;
  const fs::path dir = fs::path(c.out_dir) / c.run_id;
  fs::create_directories(dir);
  return dir;
}

Dataset train_eval_set(const CheckpointSeries& series, const Dataset& train) {
  const std::size_t n = series.config.train_eval_limit;
  return n > 0 && n < train.size() ? train.head(n) : train;
}

fs::path run_probe(Context& ctx) {
  auto& c = ctx.config;
  const auto series = load_run(c.run_dir);
  const auto data = run_data(ctx, series);
  const fs::path dir = analysis_dir(ctx, series);
  const bool joint = c.command == "joint-probe";
  const std::string scheme_name = joint ? c.probe.scheme : "singleton";
  c.probe.scheme = scheme_name;
  const auto scheme = make_scheme(scheme_name, series.arch);
  if (c.probe.checkpoints.empty()) {
    c.probe.checkpoints = default_checkpoints(series.config, series.epochs());
  }
  ProbeOptions options;
  options.checkpoints = c.probe.checkpoints;
  options.probe_seed = c.probe.probe_seed;
  options.rerandomize = c.probe.rerandomize;
  ctx.log << c.command << " " << series.run_id << ": " << scheme.groups.size()
          << " groups x " << options.checkpoints.size() << " checkpoints on "
          << data.test.size() << " test examples\n";
  auto m = robustness_matrix(series, data.test, scheme, options);
  m.metadata["config"] = c;

  const std::string stem = joint ? "joint-" + scheme_name : "robustness";
  write_text(dir / (stem + ".csv"), matrix_to_csv(m));
  write_json(dir / (stem + ".json"), artifact("robustness", c, matrix_to_json(m)));
  render_artifact(dir / (stem + ".json"), c.report);
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    ctx.log << "  " << m.rows[r];
    for (std::size_t k = 0; k < m.cols.size(); ++k) {
      if (!std::isnan(m.values[r][k])) ctx.log << " " << m.cols[k] << "=" << fmt(m.values[r][k]);
    }
    ctx.log << "\n";
  }
  if (!joint) {
    const auto report =
        effective_param_report(m, series, train_eval_set(series, data.train), c.probe.threshold);
    write_json(dir / "effective_params.json",
               artifact("effective-params", c, report_to_json(report)));
    ctx.log << "  robust layers: " << report.robust_layers.size() << ", rho " << fmt(report.rho)
            << ", effective params " << report.effective_params << " of "
            << report.total_params << "\n";
  }
  return dir;
}

fs::path run_distances(Context& ctx) {
  auto& c = ctx.config;
  const auto series = load_run(c.run_dir);
  const fs::path dir = analysis_dir(ctx, series);
  if (c.probe.checkpoints.empty()) {
    for (int t = 0; t <= series.epochs(); ++t) c.probe.checkpoints.push_back(t);
  }
  const auto d = layer_distances(series, c.probe.checkpoints);
  write_text(dir / "distances.csv", distances_to_csv(d));
  write_json(dir / "distances.json", artifact("distances", c, distances_to_json(d)));
  render_artifact(dir / "distances.json", c.report);
  ctx.log << "distances " << series.run_id << ": " << d.layers.size() << " layers x "
          << d.checkpoints.size() << " checkpoints\n";
  return dir;
}

fs::path run_width_sweep(Context& ctx) {
  auto& c = ctx.config;
  const auto data = load_data(c.data);
  if (c.run_id.empty()) c.run_id = "width-sweep-depth" + std::to_string(c.sweep.depth);
  const fs::path dir = fs::path(c.out_dir) / c.run_id;
  fs::create_directories(dir);
  ctx.log << "width-sweep depth " << c.sweep.depth << ", " << c.sweep.trials
          << " trials per width on " << data.train.id << "\n";
  const auto rows =
      width_sweep(c.sweep.widths, c.sweep.depth, c.train, data.train, data.test, c.sweep.trials);
  write_text(dir / "width-sweep.csv", width_sweep_csv(rows));
  write_json(dir / "width-sweep.json", artifact("width-sweep", c, width_sweep_json(rows)));
  render_artifact(dir / "width-sweep.json", c.report);
  for (const auto& r : rows) {
    ctx.log << "  width " << r.width << ": delta " << fmt(r.mean) << " +- " << fmt(r.std) << "\n";
  }
  return dir;
}

fs::path run_attack(Context& ctx) {
  auto& c = ctx.config;
  const auto series = load_run(c.run_dir);
  const auto data = run_data(ctx, series);
  const fs::path dir = analysis_dir(ctx, series);
  const ParamSet& params = series.final_params();
  std::vector<AttackRow> rows;
  nlohmann::json models = nlohmann::json::array();
  {
    DeterministicClassifier baseline(series.arch, params);
    ctx.log << "attack " << series.run_id << ": baseline\n";
    rows.push_back(eval_attack(baseline, data.test, c.attack.eval, "baseline"));
    models.push_back(baseline.describe());
  }
  for (int s : c.attack.s) {
    StochasticConfig sc{c.attack.r, s, c.attack.bank_seed};
    StochasticClassifier model(series.arch, params, sc);
    const std::string name = "r=" + std::to_string(sc.r) + ",s=" + std::to_string(s);
    ctx.log << "attack " << series.run_id << ": " << name << "\n";
    rows.push_back(eval_attack(model, data.test, c.attack.eval, name));
    models.push_back(model.describe());
  }
  nlohmann::json meta = {
      {"run_id", series.run_id},
      {"arch", series.arch.name},
      {"dataset", data.test.id},
      {"models", models},
      {"fgsm", c.attack.eval.fgsm},
      {"pgd", c.attack.eval.pgd},
      {"subset", attack_subset(data.test.size(), c.attack.eval.subset, c.attack.eval.seed).size()},
      {"repeats", c.attack.eval.repeats},
      {"accuracy", "fraction correct on the attack subset, mean and sample std over repeats"},
      {"gradient_mode",
       "each attack gradient query runs through a freshly drawn instantiation of the "
       "stochastic classifier (no expectation over draws); evaluation draws again"},
      {"gradient_mode_ambiguity",
       "whether the attacker should differentiate through the random draw or attack one fixed "
       "instantiation is not pinned down; this table uses per-query fresh draws"}};
  write_text(dir / "attack.csv", attack_table_csv(rows));
  write_json(dir / "attack.json", artifact("attack", c, attack_table_json(rows, meta)));
  render_artifact(dir / "attack.json", c.report);
  for (const auto& r : rows) {
    ctx.log << "  " << r.config << ": clean " << fmt(r.clean.mean) << " fgsm "
            << fmt(r.fgsm.mean) << " pgd " << fmt(r.pgd.mean) << " (clean std "
            << fmt(r.clean.std) << ")\n";
  }
  return dir;
}

fs::path run_report(Context& ctx) {
  const auto& c = ctx.config;
  const fs::path input = c.report.input;
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input)) {
      if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(input);
  }
  std::size_t rendered = 0;
  for (const auto& f : files) {
    const auto j = nlohmann::json::parse(read_text(f));
    if (!j.is_object() || !j.contains("artifact")) {
      if (fs::is_directory(input)) continue;  // config.json and friends
      throw Error(f.string() + ": not a layerprobe artifact");
    }
    for (const auto& svg : render_artifact(f, c.report)) {
      ctx.log << "wrote " << svg.string() << "\n";
      ++rendered;
    }
  }
  if (rendered == 0 && fs::is_directory(input)) {
    throw Error("no plottable artifacts under " + input.string());
  }
  return fs::is_directory(input) ? input : input.parent_path();
}

}  // namespace

fs::path run_experiment(const ExperimentConfig& config, std::ostream& log) {
  validate_config(config);
  Context ctx{config, log};
  const auto& cmd = config.command;
  if (trains(cmd)) return run_train(ctx);
  if (cmd == "probe" || cmd == "joint-probe") return run_probe(ctx);
  if (cmd == "distances") return run_distances(ctx);
  if (cmd == "width-sweep") return run_width_sweep(ctx);
  if (cmd == "attack") return run_attack(ctx);
  return run_report(ctx);
}

// --- report --------------------------------------------------------------------

namespace {

fs::path with_suffix(const fs::path& json_path, const std::string& suffix) {
  return json_path.parent_path() / (json_path.stem().string() + suffix + ".svg");
}

std::string xml_escape(const std::string& text) {
  std::string out;
  for (char ch : text) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string title_of(const nlohmann::json& j) {
  const auto& cfg = j.at("config");
  return cfg.value("run_id", std::string()) + " " + j.at("artifact").get<std::string>();
}

}  // namespace

std::vector<fs::path> render_artifact(const fs::path& json_path, const ReportConfig& report) {
  const auto j = nlohmann::json::parse(read_text(json_path));
  if (!j.is_object() || !j.contains("artifact") || !j.contains("data")) {
    throw Error(json_path.string() + ": not a layerprobe artifact");
  }
  const std::string kind = j.at("artifact").get<std::string>();
  const auto& data = j.at("data");
  const Palette palette = palette_from_string(report.palette);
  const bool lines = report.style == "lines";
  const std::string title = title_of(j);
  std::vector<fs::path> out;
  // Plots without their own metadata block carry the producing config.
  auto emit = [&](const fs::path& path, std::string svg) {
    const auto title_pos = svg.find("<title>");
    if (svg.find("<desc>") == std::string::npos && title_pos != std::string::npos) {
      svg.insert(title_pos, "<desc>" + xml_escape(j.at("config").dump()) + "</desc>\n");
    }
    write_text(path, svg);
    out.push_back(path);
  };

  if (kind == "robustness") {
    const auto m = matrix_from_json(data);
    if (lines) {
      emit(with_suffix(json_path, "-lines"), lines_svg(m, title));
    } else {
      const Orientation o = report.orientation == "auto"
                                ? auto_orientation(m)
                                : orientation_from_string(report.orientation);
      emit(with_suffix(json_path, ""), heatmap_svg(m, o, palette, title));
    }
  } else if (kind == "distances") {
    const auto d = distances_from_json(data);
    if (lines) {
      emit(with_suffix(json_path, "-lines"), lines_svg(d, false, title + " l2"));
      emit(with_suffix(json_path, "-linf-lines"), lines_svg(d, true, title + " linf"));
    } else {
      std::vector<std::string> cols;
      for (int t : d.checkpoints) cols.push_back(checkpoint_column(t));
      // Distances are not errors; scale each heatmap to its own maximum.
      auto max_of = [](const std::vector<std::vector<double>>& v) {
        double m = 0.0;
        for (const auto& row : v)
          for (double x : row) m = std::max(m, x);
        return m > 0.0 ? m : 1.0;
      };
      emit(with_suffix(json_path, ""),
           heatmap_svg(d.layers, cols, d.l2, palette, title + " l2", max_of(d.l2)));
      emit(with_suffix(json_path, "-linf"),
           heatmap_svg(d.layers, cols, d.linf, palette, title + " linf", max_of(d.linf)));
    }
  } else if (kind == "width-sweep") {
    emit(with_suffix(json_path, ""), width_sweep_svg(width_sweep_from_json(data), title));
  } else if (kind == "attack") {
    std::vector<std::string> rows;
    std::vector<std::vector<double>> values;
    for (const auto& r : data.at("rows")) {
      rows.push_back(r.at("config").get<std::string>());
      values.push_back({r.at("clean").at("mean").get<double>(),
                        r.at("fgsm").at("mean").get<double>(),
                        r.at("pgd").at("mean").get<double>()});
    }
    const std::vector<std::string> cols{"clean", "fgsm", "pgd"};
    if (lines) {
      emit(with_suffix(json_path, "-lines"), lines_svg(rows, cols, values, title, "accuracy"));
    } else {
      emit(with_suffix(json_path, ""), heatmap_svg(rows, cols, values, palette, title + " accuracy"));
    }
  } else if (kind == "training") {
    std::vector<std::string> epochs;
    std::vector<std::vector<double>> values(2);
    for (const auto& l : data.at("log")) {
      epochs.push_back(std::to_string(l.at("epoch").get<int>()));
      values[0].push_back(l.at("train_err").get<double>());
      values[1].push_back(l.at("test_err").get<double>());
    }
    emit(with_suffix(json_path, ""),
         lines_svg({"train_err", "test_err"}, epochs, values, title, "error"));
  } else if (kind == "effective-params") {
    // Table only.
  } else {
    throw Error(json_path.string() + ": unknown artifact kind '" + kind + "'");
  }
  return out;
}

}  // namespace lp
