// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerprobe/adversarial.hpp"
#include "layerprobe/probes.hpp"

namespace lp {

/// layers_as_rows: one row per layer (shallow nets); layers_as_columns: the
/// transposed layout used for deep residual nets.
enum class Orientation { layers_as_rows, layers_as_columns };

Orientation orientation_from_string(std::string_view s);
std::string_view to_string(Orientation o);

/// Layers as rows up to 8 rows, transposed beyond.
Orientation auto_orientation(const RobustnessMatrix& m);

enum class Palette { viridis, gray };
Palette palette_from_string(std::string_view s);

/// Colour of a value on the fixed [0, 1] scale, as "#rrggbb".
std::string palette_color(Palette p, double value);

/// Value annotation used inside cells.
std::string format_cell(double value);

/// One <rect class="cell"> and one <text class="value"> per measured cell,
/// row and column labels, and the title. Byte-stable for equal inputs.
std::string heatmap_svg(const RobustnessMatrix& m, Orientation orientation,
                        Palette palette = Palette::viridis, const std::string& title = "");
std::string heatmap_svg(const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels,
                        const std::vector<std::vector<double>>& values, Palette palette,
                        const std::string& title, double scale_max = 1.0);

/// One polyline per row over the column axis, with a legend.
std::string lines_svg(const RobustnessMatrix& m, const std::string& title = "");
std::string lines_svg(const DistanceMatrix& d, bool linf, const std::string& title = "");
std::string lines_svg(const std::vector<std::string>& series_names,
                      const std::vector<std::string>& x_labels,
                      const std::vector<std::vector<double>>& values,
                      const std::string& title, const std::string& y_label);

/// Mean +- std per width as a line with error bars.
std::string width_sweep_svg(const std::vector<WidthSweepRow>& rows, const std::string& title = "");

std::string width_sweep_csv(const std::vector<WidthSweepRow>& rows);
nlohmann::json width_sweep_json(const std::vector<WidthSweepRow>& rows);
std::vector<WidthSweepRow> width_sweep_from_json(const nlohmann::json& j);

void emit_heatmap(const RobustnessMatrix& m, Orientation orientation, Palette palette,
                  const std::filesystem::path& path);
void emit_lines(const RobustnessMatrix& m, const std::filesystem::path& path);
void emit_lines(const DistanceMatrix& d, bool linf, const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace lp
