// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

// layerprobe <command> [options]
//
// Exit codes: 0 success, 1 runtime failure (bad data, corrupt checkpoint, ...),
// 2 usage error (unknown flag, preset, scheme, ...).

#include <CLI11.hpp>

#include <functional>
#include <iostream>

#include "layerprobe/experiment.hpp"
#include "layerprobe/report.hpp"

namespace {

using lp::ExperimentConfig;

// Flags bind to scratch storage and are applied on top of the --config file,
// so only flags the user actually passed override it.
class Overrides {
 public:
  template <typename T, typename Apply>
  void add(CLI::App* sub, const std::string& flags, const std::string& help, Apply apply) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = sub->add_option(flags, *value, help);
    if constexpr (std::is_same_v<T, std::vector<int>> || std::is_same_v<T, std::vector<double>> ||
                  std::is_same_v<T, std::vector<std::string>>) {
      opt->delimiter(',');
    }
    entries_.push_back({opt, [value, apply](ExperimentConfig& c) { apply(c, *value); }});
  }

  void flag(CLI::App* sub, const std::string& flags, const std::string& help,
            std::function<void(ExperimentConfig&)> apply) {
    entries_.push_back({sub->add_flag(flags, help), std::move(apply)});
  }

  void apply(ExperimentConfig& c) const {
    for (const auto& e : entries_) {
      if (e.option->count() > 0) e.fn(c);
    }
  }

 private:
  struct Entry {
    CLI::Option* option;
    std::function<void(ExperimentConfig&)> fn;
  };
  std::vector<Entry> entries_;
};

void add_options(CLI::App* sub, Overrides& o, std::string& config_path) {
  sub->add_option("--config", config_path, "JSON experiment config used as the base")
      ->check(CLI::ExistingFile);

  o.add<std::string>(sub, "--dataset", "mnist | cifar10 | synthetic",
                     [](auto& c, auto& v) { c.data.dataset = v; });
  o.add<std::string>(sub, "--data-dir", "directory holding mnist/ and cifar-10-batches-bin/",
                     [](auto& c, auto& v) { c.data.data_dir = v; });
  o.flag(sub, "--per-channel", "per-channel CIFAR normalization",
         [](auto& c) { c.data.per_channel = true; });
  o.add<std::size_t>(sub, "--test-limit", "evaluate on the first N test examples",
                     [](auto& c, auto& v) { c.data.test_limit = v; });

  o.add<std::string>(sub, "--arch", "preset: fcn-DxH, resnet-SsBb[-wW][-bn], resnet-B^S, vgg-mini",
                     [](auto& c, auto& v) { c.arch = v; });
  o.add<int>(sub, "--epochs", "training epochs", [](auto& c, auto& v) { c.train.epochs = v; });
  o.add<std::size_t>(sub, "--batch-size", "minibatch size",
                     [](auto& c, auto& v) { c.train.batch_size = v; });
  o.add<double>(sub, "--lr", "base learning rate", [](auto& c, auto& v) { c.train.lr = v; });
  o.add<double>(sub, "--momentum", "heavy-ball momentum",
                [](auto& c, auto& v) { c.train.momentum = v; });
  o.add<double>(sub, "--lr-factor", "learning-rate decay factor",
                [](auto& c, auto& v) { c.train.lr_factor = v; });
  o.add<std::vector<double>>(sub, "--milestones", "decay points as fractions of the epochs",
                             [](auto& c, auto& v) { c.train.milestone_fractions = v; });
  o.add<double>(sub, "--weight-decay", "L2 coefficient",
                [](auto& c, auto& v) { c.train.weight_decay = v; });
  o.add<std::uint64_t>(sub, "--seed", "training seed", [](auto& c, auto& v) { c.train.seed = v; });
  o.flag(sub, "--augment", "random crop and flip", [](auto& c) { c.train.augment = true; });
  o.add<std::size_t>(sub, "--train-limit", "use the first N training examples",
                     [](auto& c, auto& v) { c.train.train_limit = v; });
  o.add<std::size_t>(sub, "--train-eval-limit", "measure train error on the first N examples",
                     [](auto& c, auto& v) { c.train.train_eval_limit = v; });

  o.add<std::string>(sub, "--run-id", "name of the output run directory",
                     [](auto& c, auto& v) { c.run_id = v; });
  o.add<std::string>(sub, "--run", "finished training run to analyse",
                     [](auto& c, auto& v) { c.run_dir = v; });
  o.add<std::string>(sub, "--out", "output root", [](auto& c, auto& v) { c.out_dir = v; });
  o.add<std::vector<std::string>>(sub, "--layers", "layers to freeze or remove",
                                  [](auto& c, auto& v) { c.layers = v; });

  o.add<std::vector<int>>(sub, "--checkpoints", "checkpoint epochs to probe",
                          [](auto& c, auto& v) { c.probe.checkpoints = v; });
  o.add<std::string>(sub, "--scheme",
                     "singleton | upper | two-of-three | every-other | outer-stages",
                     [](auto& c, auto& v) { c.probe.scheme = v; });
  o.add<double>(sub, "--threshold", "robustness threshold for the effective-parameter report",
                [](auto& c, auto& v) { c.probe.threshold = v; });
  o.add<std::uint64_t>(sub, "--probe-seed", "re-randomization seed",
                       [](auto& c, auto& v) { c.probe.probe_seed = v; });
  o.flag(sub, "--no-rerandomize", "skip the re-randomization column",
         [](auto& c) { c.probe.rerandomize = false; });

  o.add<std::vector<int>>(sub, "--widths", "FCN widths to sweep",
                          [](auto& c, auto& v) { c.sweep.widths = v; });
  o.add<int>(sub, "--depth", "FCN depth for the sweep", [](auto& c, auto& v) { c.sweep.depth = v; });
  o.add<int>(sub, "--trials", "seeds per width", [](auto& c, auto& v) { c.sweep.trials = v; });

  o.add<std::size_t>(sub, "--subset", "test examples attacked",
                     [](auto& c, auto& v) { c.attack.eval.subset = v; });
  o.add<int>(sub, "--repeats", "evaluation repeats",
             [](auto& c, auto& v) { c.attack.eval.repeats = v; });
  o.add<std::uint64_t>(sub, "--attack-seed", "subset and draw seed",
                       [](auto& c, auto& v) { c.attack.eval.seed = v; });
  o.add<double>(sub, "--epsilon", "infinity-norm budget in [0,1] pixel units",
                [](auto& c, auto& v) { c.attack.eval.fgsm.epsilon = c.attack.eval.pgd.epsilon = v; });
  o.add<double>(sub, "--pgd-alpha", "PGD step size in [0,1] pixel units",
                [](auto& c, auto& v) { c.attack.eval.pgd.alpha = v; });
  o.add<int>(sub, "--pgd-steps", "PGD iterations",
             [](auto& c, auto& v) { c.attack.eval.pgd.steps = v; });
  o.add<int>(sub, "--r", "weight sets per residual block",
             [](auto& c, auto& v) { c.attack.r = v; });
  o.add<std::vector<int>>(sub, "--s", "stages re-randomized per inference",
                          [](auto& c, auto& v) { c.attack.s = v; });
  o.add<std::uint64_t>(sub, "--bank-seed", "weight-bank seed",
                       [](auto& c, auto& v) { c.attack.bank_seed = v; });

  o.add<std::string>(sub, "--style", "heatmap | lines", [](auto& c, auto& v) { c.report.style = v; });
  o.add<std::string>(sub, "--orientation", "auto | rows | columns",
                     [](auto& c, auto& v) { c.report.orientation = v; });
  o.add<std::string>(sub, "--palette", "viridis | gray",
                     [](auto& c, auto& v) { c.report.palette = v; });
}

const char* describe(const std::string& command) {
  if (command == "train") return "train a preset and store checkpoints 0..T";
  if (command == "probe") return "per-layer re-initialization / re-randomization matrix";
  if (command == "joint-probe") return "robustness matrix for a grouping scheme";
  if (command == "distances") return "per-layer parameter distance to checkpoint-0";
  if (command == "width-sweep") return "upper-layer re-init delta across FCN widths";
  if (command == "freeze-train") return "train with selected layers held at checkpoint-0";
  if (command == "ablate-train") return "train with selected layers removed";
  if (command == "attack") return "FGSM/PGD against baseline and stochastic classifiers";
  return "regenerate plots from stored artifacts";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layerprobe: layer-wise robustness probes for trained networks"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  bool print_config = false;

  Overrides overrides;
  std::string config_path;
  std::string report_input;
  for (const auto& name : lp::experiment_commands()) {
    CLI::App* sub = app.add_subcommand(name, describe(name));
    add_options(sub, overrides, config_path);
    sub->add_flag("--print-config", print_config, "print the resolved config and exit");
    if (name == "report") {
      sub->add_option("input", report_input, "artifact JSON or a directory of them")->required();
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig config;
    if (!config_path.empty()) {
      try {
        config = nlohmann::json::parse(lp::read_text(config_path)).get<ExperimentConfig>();
      } catch (const nlohmann::json::exception& e) {
        throw lp::UsageError(config_path + ": " + e.what());
      }
    }
    config.command = app.get_subcommands().front()->get_name();
    overrides.apply(config);
    if (!report_input.empty()) config.report.input = report_input;
    lp::validate_config(config);
    if (print_config) {
      std::cout << nlohmann::json(config).dump(2) << "\n";
      return 0;
    }
    const auto dir = lp::run_experiment(config, std::cerr);
    std::cout << dir.string() << "\n";
    return 0;
  } catch (const lp::UsageError& e) {
    std::cerr << "layerprobe: " << e.what() << "\n" << "Run with --help for more information.\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "layerprobe: " << e.what() << "\n";
    return 1;
  }
}
