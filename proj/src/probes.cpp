// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "layerprobe/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "layerprobe/nn.hpp"
#include "layerprobe/rng.hpp"

namespace lp {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

void require_layer(const ParamSet& params, std::string_view layer) {
  if (!params.contains(layer)) {
    throw Error("unknown layer '" + std::string(layer) + "'");
  }
}

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

ParamSet re_init_layer(const ParamSet& params_t, const ParamSet& source,
                       std::string_view layer) {
  require_layer(params_t, layer);
  require_layer(source, layer);
  ParamSet out = params_t;
  out.at(layer) = source.at(layer);
  return out;
}

ParamSet re_randomize_layer(const ParamSet& params_t, const ArchSpec& arch,
                            std::string_view layer, std::uint64_t probe_seed) {
  require_layer(params_t, layer);
  ParamSet out = params_t;
  out.at(layer) = sample_layer(arch.layer(layer), mix_seed(probe_seed, fnv1a64("rerandomize")));
  return out;
}

// --- grouping ----------------------------------------------------------------

void GroupingScheme::validate(const ArchSpec& arch) const {
  if (groups.empty()) throw Error("grouping scheme '" + name + "' has no groups");
  std::set<std::string, std::less<>> seen;
  std::set<std::string, std::less<>> names;
  for (const auto& g : groups) {
    if (g.layers.empty()) throw Error("group '" + g.name + "' is empty");
    if (!names.insert(g.name).second) throw Error("duplicate group name '" + g.name + "'");
    for (const auto& l : g.layers) {
      if (!arch.has_layer(l) || !is_parametric(arch.layer(l).kind)) {
        throw Error("group '" + g.name + "': '" + l + "' is not a parametric layer of '" +
                    arch.name + "'");
      }
      if (!seen.insert(l).second) {
        throw Error("scheme '" + name + "': layer '" + l + "' is in more than one group");
      }
    }
  }
}

std::string group_name(const std::vector<std::string>& layers) {
  std::string out;
  for (const auto& l : layers) {
    if (!out.empty()) out += '+';
    out += l;
  }
  return out;
}

GroupingScheme singleton_scheme(const ArchSpec& arch) {
  GroupingScheme s{"singleton", {}};
  for (const auto& l : arch.parametric_layers()) s.groups.push_back({l, {l}});
  return s;
}

std::vector<std::string> non_first_blocks(const ArchSpec& arch) {
  std::vector<std::string> out;
  for (const auto& stage : arch.stages) {
    bool first = true;
    for (const auto& l : stage.layers) {
      if (!is_residual(arch.layer(l).kind)) continue;
      if (!first) out.push_back(l);
      first = false;
    }
  }
  return out;
}

namespace {

void add_group(GroupingScheme& s, std::vector<std::string> layers) {
  if (!layers.empty()) {
    auto name = group_name(layers);
    s.groups.push_back({std::move(name), std::move(layers)});
  }
}

// Residual blocks of each stage, in order.
std::vector<std::vector<std::string>> stage_blocks(const ArchSpec& arch) {
  std::vector<std::vector<std::string>> out;
  for (const auto& stage : arch.stages) {
    std::vector<std::string> blocks;
    for (const auto& l : stage.layers) {
      if (is_residual(arch.layer(l).kind)) blocks.push_back(l);
    }
    if (!blocks.empty()) out.push_back(std::move(blocks));
  }
  return out;
}

}  // namespace

GroupingScheme make_scheme(std::string_view name, const ArchSpec& arch) {
  if (name == "singleton") return singleton_scheme(arch);
  GroupingScheme s{std::string(name), {}};
  const auto stages = stage_blocks(arch);
  if (!stages.empty()) {
    std::vector<std::string> picked;
    if (name == "upper") {
      picked = non_first_blocks(arch);
    } else if (name == "every-other") {
      for (const auto& blocks : stages) {
        for (std::size_t i = 1; i < blocks.size(); i += 2) picked.push_back(blocks[i]);
      }
    } else if (name == "two-of-three") {
      for (const auto& blocks : stages) {
        for (std::size_t i = 1; i < blocks.size(); ++i) {
          if ((i - 1) % 3 != 2) picked.push_back(blocks[i]);
        }
      }
    } else if (name == "outer-stages") {
      std::vector<std::size_t> ends{0};
      if (stages.size() > 1) ends.push_back(stages.size() - 1);
      for (std::size_t k : ends) {
        for (std::size_t i = 1; i < stages[k].size(); ++i) picked.push_back(stages[k][i]);
      }
    } else {
      throw Error("unknown grouping scheme '" + std::string(name) + "'");
    }
    add_group(s, std::move(picked));
  } else {
    const auto layers = arch.parametric_layers();
    std::vector<std::string> rest;
    if (name == "upper") {
      rest.assign(layers.begin() + 1, layers.end());
    } else if (name == "every-other") {
      for (std::size_t i = 1; i < layers.size(); i += 2) rest.push_back(layers[i]);
    } else if (name == "two-of-three") {
      for (std::size_t i = 1; i < layers.size(); ++i) {
        if ((i - 1) % 3 != 2) rest.push_back(layers[i]);
      }
    } else {
      throw Error("unknown grouping scheme '" + std::string(name) + "' for '" + arch.name +
                  "'");
    }
    add_group(s, {layers.front()});
    add_group(s, std::move(rest));
  }
  s.validate(arch);
  return s;
}

// --- robustness matrix --------------------------------------------------------

std::string checkpoint_column(int tau) { return "ckpt-" + std::to_string(tau); }

std::size_t RobustnessMatrix::row_index(std::string_view row) const {
  const auto it = std::find(rows.begin(), rows.end(), row);
  if (it == rows.end()) throw Error("matrix has no row '" + std::string(row) + "'");
  return static_cast<std::size_t>(it - rows.begin());
}

std::size_t RobustnessMatrix::col_index(std::string_view col) const {
  const auto it = std::find(cols.begin(), cols.end(), col);
  if (it == cols.end()) throw Error("matrix has no column '" + std::string(col) + "'");
  return static_cast<std::size_t>(it - cols.begin());
}

double RobustnessMatrix::at(std::string_view row, std::string_view col) const {
  return values[row_index(row)][col_index(col)];
}

bool RobustnessMatrix::has(std::string_view row, std::string_view col) const {
  const auto r = std::find(rows.begin(), rows.end(), row);
  const auto c = std::find(cols.begin(), cols.end(), col);
  return r != rows.end() && c != cols.end() &&
         !std::isnan(values[r - rows.begin()][c - cols.begin()]);
}

void RobustnessMatrix::set(std::string_view row, std::string_view col, double value) {
  values[row_index(row)][col_index(col)] = value;
}

bool RobustnessMatrix::operator==(const RobustnessMatrix& other) const {
  if (rows != other.rows || cols != other.cols || values.size() != other.values.size()) {
    return false;
  }
  for (std::size_t r = 0; r < values.size(); ++r) {
    if (values[r].size() != other.values[r].size()) return false;
    for (std::size_t c = 0; c < values[r].size(); ++c) {
      const double a = values[r][c];
      const double b = other.values[r][c];
      if (!(a == b || (std::isnan(a) && std::isnan(b)))) return false;
    }
  }
  return true;
}

std::vector<int> default_checkpoints(const TrainConfig& config, int epochs) {
  std::set<int> taus{0, std::min(1, epochs), epochs};
  for (int m : config.milestones()) {
    if (m + 1 <= epochs) taus.insert(m + 1);
  }
  return {taus.begin(), taus.end()};
}

RobustnessMatrix robustness_matrix(const CheckpointSeries& series, const Dataset& test,
                                   const GroupingScheme& scheme,
                                   const ProbeOptions& options) {
  scheme.validate(series.arch);
  const auto taus = options.checkpoints.empty()
                        ? default_checkpoints(series.config, series.epochs())
                        : options.checkpoints;
  for (int tau : taus) series.at(tau);

  RobustnessMatrix m;
  if (options.rerandomize) m.cols.push_back(kRerandColumn);
  for (int tau : taus) m.cols.push_back(checkpoint_column(tau));
  m.cols.push_back(kFinalColumn);
  for (const auto& g : scheme.groups) m.rows.push_back(g.name);
  m.rows.push_back(kFullModelRow);
  m.values.assign(m.rows.size(), std::vector<double>(m.cols.size(), kMissing));

  const ArchSpec& arch = series.arch;
  const ParamSet& final_params = series.final_params();
  ParamSet work = final_params;
  auto restore = [&](const LayerGroup& g) {
    for (const auto& l : g.layers) work.at(l) = final_params.at(l);
  };
  for (const auto& g : scheme.groups) {
    if (options.rerandomize) {
      for (const auto& l : g.layers) {
        work.at(l) =
            sample_layer(arch.layer(l), mix_seed(options.probe_seed, fnv1a64("rerandomize")));
      }
      m.set(g.name, kRerandColumn, eval_error(arch, work, test));
      restore(g);
    }
    for (int tau : taus) {
      for (const auto& l : g.layers) work.at(l) = series.at(tau).at(l);
      m.set(g.name, checkpoint_column(tau), eval_error(arch, work, test));
      restore(g);
    }
    for (const auto& l : g.layers) work.at(l) = series.final_params().at(l);
    m.set(g.name, kFinalColumn, eval_error(arch, work, test));
  }
  for (int tau : taus) {
    m.set(kFullModelRow, checkpoint_column(tau), eval_error(arch, series.at(tau), test));
  }
  m.set(kFullModelRow, kFinalColumn, eval_error(arch, final_params, test));

  m.metadata = {{"run_id", series.run_id},
                {"arch", arch.name},
                {"scheme", scheme.name},
                {"eval_size", test.size()},
                {"dataset", test.id},
                {"probe_seed", options.probe_seed},
                {"train_seed", series.config.seed},
                {"lr", series.config.lr},
                {"epochs", series.epochs()},
                {"batchnorm_probe", "running statistics restored with the layer"}};
  nlohmann::json groups = nlohmann::json::object();
  for (const auto& g : scheme.groups) groups[g.name] = g.layers;
  m.metadata["groups"] = groups;
  return m;
}

namespace {

void check_id(const std::string& id) {
  if (id.empty() || id.find_first_of(",\n\r\"") != std::string::npos) {
    throw Error("matrix id '" + id + "' cannot be written as a CSV field");
  }
}

}  // namespace

std::string matrix_to_csv(const RobustnessMatrix& m) {
  std::string out = "row_id,col_id,test_error\n";
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    check_id(m.rows[r]);
    for (std::size_t c = 0; c < m.cols.size(); ++c) {
      check_id(m.cols[c]);
      if (std::isnan(m.values[r][c])) continue;
      out += m.rows[r] + ',' + m.cols[c] + ',' + format_double(m.values[r][c]) + '\n';
    }
  }
  return out;
}

RobustnessMatrix matrix_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "row_id,col_id,test_error") {
    throw Error("robustness CSV: unexpected header '" + line + "'");
  }
  struct Cell {
    std::string row, col;
    double value;
  };
  std::vector<Cell> cells;
  RobustnessMatrix m;
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto a = line.find(',');
    const auto b = a == std::string::npos ? a : line.find(',', a + 1);
    if (b == std::string::npos) {
      throw Error("robustness CSV: malformed line " + std::to_string(n));
    }
    Cell cell{line.substr(0, a), line.substr(a + 1, b - a - 1), 0.0};
    try {
      std::size_t used = 0;
      const std::string v = line.substr(b + 1);
      cell.value = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw Error("robustness CSV: bad value on line " + std::to_string(n));
    }
    if (std::find(m.rows.begin(), m.rows.end(), cell.row) == m.rows.end()) {
      m.rows.push_back(cell.row);
    }
    if (std::find(m.cols.begin(), m.cols.end(), cell.col) == m.cols.end()) {
      m.cols.push_back(cell.col);
    }
    cells.push_back(std::move(cell));
  }
  m.values.assign(m.rows.size(), std::vector<double>(m.cols.size(), kMissing));
  for (const auto& c : cells) m.set(c.row, c.col, c.value);
  return m;
}

nlohmann::json matrix_to_json(const RobustnessMatrix& m) {
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    for (std::size_t c = 0; c < m.cols.size(); ++c) {
      if (std::isnan(m.values[r][c])) continue;
      cells.push_back({{"row_id", m.rows[r]}, {"col_id", m.cols[c]},
                       {"test_error", m.values[r][c]}});
    }
  }
  return {{"metadata", m.metadata}, {"rows", m.rows}, {"cols", m.cols}, {"cells", cells}};
}

RobustnessMatrix matrix_from_json(const nlohmann::json& j) {
  RobustnessMatrix m;
  m.metadata = j.value("metadata", nlohmann::json::object());
  m.rows = j.at("rows").get<std::vector<std::string>>();
  m.cols = j.at("cols").get<std::vector<std::string>>();
  m.values.assign(m.rows.size(), std::vector<double>(m.cols.size(), kMissing));
  for (const auto& c : j.at("cells")) {
    m.set(c.at("row_id").get<std::string>(), c.at("col_id").get<std::string>(),
          c.at("test_error").get<double>());
  }
  return m;
}

// --- distances ----------------------------------------------------------------

void layer_distance(const ParamSet& a, const ParamSet& reference, std::string_view layer,
                    double& l2, double& linf) {
  const auto& ta = a.at(layer);
  const auto& tr = reference.at(layer);
  if (ta.size() != tr.size()) throw Error("layer '" + std::string(layer) + "' layouts differ");
  double sum_sq = 0.0;
  double max_abs = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < ta.size(); ++k) {
    if (!ta[k].trainable) continue;
    const auto va = ta[k].value.values();
    const auto vr = tr[k].value.values();
    if (va.size() != vr.size()) {
      throw Error("layer '" + std::string(layer) + "' tensor '" + ta[k].name + "' sizes differ");
    }
    for (std::size_t i = 0; i < va.size(); ++i) {
      const double d = static_cast<double>(va[i]) - static_cast<double>(vr[i]);
      sum_sq += d * d;
      max_abs = std::max(max_abs, std::abs(d));
    }
    n += va.size();
  }
  l2 = n ? std::sqrt(sum_sq / static_cast<double>(n)) : 0.0;
  linf = max_abs;
}

DistanceMatrix layer_distances(const CheckpointSeries& series,
                               const std::vector<int>& checkpoints) {
  DistanceMatrix d;
  d.layers = series.arch.parametric_layers();
  d.checkpoints = checkpoints.empty()
                      ? default_checkpoints(series.config, series.epochs())
                      : checkpoints;
  const ParamSet& base = series.at(0);
  d.l2.assign(d.layers.size(), std::vector<double>(d.checkpoints.size(), 0.0));
  d.linf = d.l2;
  for (std::size_t i = 0; i < d.layers.size(); ++i) {
    for (std::size_t k = 0; k < d.checkpoints.size(); ++k) {
      layer_distance(series.at(d.checkpoints[k]), base, d.layers[i], d.l2[i][k],
                     d.linf[i][k]);
    }
  }
  return d;
}

std::string distances_to_csv(const DistanceMatrix& d) {
  std::string out = "layer,checkpoint,l2_normalized,linf\n";
  for (std::size_t i = 0; i < d.layers.size(); ++i) {
    for (std::size_t k = 0; k < d.checkpoints.size(); ++k) {
      out += d.layers[i] + ',' + std::to_string(d.checkpoints[k]) + ',' +
             format_double(d.l2[i][k]) + ',' + format_double(d.linf[i][k]) + '\n';
    }
  }
  return out;
}

nlohmann::json distances_to_json(const DistanceMatrix& d) {
  return {{"layers", d.layers}, {"checkpoints", d.checkpoints}, {"l2", d.l2}, {"linf", d.linf}};
}

DistanceMatrix distances_from_json(const nlohmann::json& j) {
  DistanceMatrix d;
  d.layers = j.at("layers").get<std::vector<std::string>>();
  d.checkpoints = j.at("checkpoints").get<std::vector<int>>();
  d.l2 = j.at("l2").get<std::vector<std::vector<double>>>();
  d.linf = j.at("linf").get<std::vector<std::vector<double>>>();
  return d;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error("spearman: length mismatch");
  if (x.size() < 2) return kMissing;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return kMissing;
  return sxy / std::sqrt(sxx * syy);
}

// --- width sweep --------------------------------------------------------------

double upper_layer_reinit_delta(const CheckpointSeries& series, const Dataset& test) {
  const auto layers = series.arch.parametric_layers();
  if (layers.size() < 2) throw Error("upper-layer delta needs at least two layers");
  const ParamSet& final_params = series.final_params();
  const double full = eval_error(series.arch, final_params, test);
  double sum = 0.0;
  for (std::size_t i = 1; i < layers.size(); ++i) {
    const auto probed = re_init_layer(final_params, series.at(0), layers[i]);
    sum += eval_error(series.arch, probed, test) - full;
  }
  return sum / static_cast<double>(layers.size() - 1);
}

std::vector<WidthSweepRow> width_sweep(const std::vector<int>& widths, int depth,
                                       const TrainConfig& config, const Dataset& train_set,
                                       const Dataset& test, int trials) {
  if (trials < 2) throw Error("width sweep needs at least two trials");
  if (widths.empty()) throw Error("width sweep needs at least one width");
  std::vector<WidthSweepRow> out;
  for (int width : widths) {
    const ArchSpec arch = make_fcn(depth, width, train_set.example_dims(), train_set.num_classes);
    WidthSweepRow row;
    row.width = width;
    for (int t = 0; t < trials; ++t) {
      TrainConfig c = config;
      c.seed = config.seed + static_cast<std::uint64_t>(t);
      const auto series = train(arch, c, train_set, test);
      row.trials.push_back(upper_layer_reinit_delta(series, test));
    }
    const double n = static_cast<double>(row.trials.size());
    row.mean = std::accumulate(row.trials.begin(), row.trials.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : row.trials) ss += (v - row.mean) * (v - row.mean);
    row.std = std::sqrt(ss / (n - 1.0));
    out.push_back(std::move(row));
  }
  return out;
}

// --- effective parameters -----------------------------------------------------

EffectiveParamReport effective_param_report(const RobustnessMatrix& matrix,
                                            const CheckpointSeries& series,
                                            const Dataset& train_set, double threshold) {
  if (!(threshold >= 0.0)) throw Error("threshold must be non-negative");
  const std::string col0 = checkpoint_column(0);
  matrix.col_index(col0);
  const ArchSpec& arch = series.arch;

  EffectiveParamReport r;
  r.threshold = threshold;
  for (const auto& l : arch.parametric_layers()) r.total_params += trainable_count(arch.layer(l));
  for (const auto& row : matrix.rows) {
    if (row == kFullModelRow || !arch.has_layer(row) || !is_parametric(arch.layer(row).kind)) {
      continue;
    }
    if (!matrix.has(row, col0) || !matrix.has(row, kFinalColumn)) continue;
    const double delta = matrix.at(row, col0) - matrix.at(row, kFinalColumn);
    r.delta_layers.push_back(row);
    r.deltas.push_back(delta);
    if (delta <= threshold) {
      r.robust_layers.push_back(row);
      r.robust_params += trainable_count(arch.layer(row));
    }
  }
  if (r.delta_layers.empty()) throw Error("matrix has no single-layer rows");
  r.rho = static_cast<double>(r.robust_params) / static_cast<double>(r.total_params);
  r.effective_params = static_cast<double>(r.total_params - r.robust_params);

  ParamSet reset = series.final_params();
  for (const auto& l : r.robust_layers) reset.at(l) = series.at(0).at(l);
  r.train_error_full = eval_error(arch, series.final_params(), train_set);
  r.train_error_reinit = eval_error(arch, reset, train_set);
  r.epsilon = r.train_error_reinit - r.train_error_full;
  return r;
}

nlohmann::json report_to_json(const EffectiveParamReport& r) {
  nlohmann::json deltas = nlohmann::json::object();
  for (std::size_t i = 0; i < r.delta_layers.size(); ++i) deltas[r.delta_layers[i]] = r.deltas[i];
  return {{"threshold", r.threshold},
          {"robust_layers", r.robust_layers},
          {"reinit_deltas", deltas},
          {"m", r.total_params},
          {"robust_params", r.robust_params},
          {"rho", r.rho},
          {"effective_params", r.effective_params},
          {"train_error_full", r.train_error_full},
          {"train_error_reinit", r.train_error_reinit},
          {"epsilon", r.epsilon}};
}

}  // namespace lp
