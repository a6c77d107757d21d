// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "layerprobe/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "layerprobe/checkpoints.hpp"

namespace lp {

Orientation orientation_from_string(std::string_view s) {
  if (s == "rows") return Orientation::layers_as_rows;
  if (s == "columns" || s == "transposed") return Orientation::layers_as_columns;
  throw Error("unknown orientation '" + std::string(s) + "' (rows, columns)");
}

std::string_view to_string(Orientation o) {
  return o == Orientation::layers_as_rows ? "rows" : "columns";
}

Orientation auto_orientation(const RobustnessMatrix& m) {
  return m.rows.size() > 8 ? Orientation::layers_as_columns : Orientation::layers_as_rows;
}

Palette palette_from_string(std::string_view s) {
  if (s == "viridis") return Palette::viridis;
  if (s == "gray") return Palette::gray;
  throw Error("unknown palette '" + std::string(s) + "' (viridis, gray)");
}

namespace {

std::string hex(int r, int g, int b) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

std::string num(double v, int digits = 1) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const std::array<std::array<int, 3>, 5> kViridis{{{68, 1, 84},
                                                  {59, 82, 139},
                                                  {33, 145, 140},
                                                  {94, 201, 98},
                                                  {253, 231, 37}}};

const std::array<const char*, 10> kLineColors{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                              "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                                              "#bcbd22", "#17becf"};

int text_width(const std::string& s) { return static_cast<int>(s.size()) * 7; }

std::string svg_open(int w, int h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
         "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + ' ' +
         std::to_string(h) + "\" font-family=\"monospace\" font-size=\"11\">\n";
}

}  // namespace

std::string palette_color(Palette p, double value) {
  const double v = std::isnan(value) ? 0.0 : std::clamp(value, 0.0, 1.0);
  if (p == Palette::gray) {
    const int g = static_cast<int>(std::lround(255.0 * (1.0 - v)));
    return hex(g, g, g);
  }
  const double pos = v * (kViridis.size() - 1);
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(pos), kViridis.size() - 2);
  const double t = pos - static_cast<double>(i);
  std::array<int, 3> c{};
  for (int k = 0; k < 3; ++k) {
    c[k] = static_cast<int>(std::lround(kViridis[i][k] * (1.0 - t) + kViridis[i + 1][k] * t));
  }
  return hex(c[0], c[1], c[2]);
}

std::string format_cell(double value) { return num(value, 3); }

std::string heatmap_svg(const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels,
                        const std::vector<std::vector<double>>& values, Palette palette,
                        const std::string& title, double scale_max) {
  if (row_labels.empty() || col_labels.empty()) throw Error("heatmap: empty matrix");
  constexpr int cw = 56, ch = 22;
  int left = 10;
  for (const auto& r : row_labels) left = std::max(left, text_width(r) + 14);
  int top = 30;
  for (const auto& c : col_labels) top = std::max(top, text_width(c) * 7 / 10 + 34);
  const int width = left + cw * static_cast<int>(col_labels.size()) + 70;
  const int height = top + ch * static_cast<int>(row_labels.size()) + 20;
  std::string s = svg_open(width, height);
  s += "<title>" + escape(title) + "</title>\n";
  s += "<text class=\"title\" x=\"" + std::to_string(left) + "\" y=\"16\">" + escape(title) +
       "</text>\n";
  for (std::size_t c = 0; c < col_labels.size(); ++c) {
    const int x = left + cw * static_cast<int>(c) + cw / 2;
    s += "<text class=\"col-label\" x=\"" + std::to_string(x) + "\" y=\"" +
         std::to_string(top - 6) + "\" transform=\"rotate(-40 " + std::to_string(x) + ' ' +
         std::to_string(top - 6) + ")\">" + escape(col_labels[c]) + "</text>\n";
  }
  for (std::size_t r = 0; r < row_labels.size(); ++r) {
    const int y = top + ch * static_cast<int>(r);
    s += "<text class=\"row-label\" x=\"" + std::to_string(left - 6) + "\" y=\"" +
         std::to_string(y + 15) + "\" text-anchor=\"end\">" + escape(row_labels[r]) +
         "</text>\n";
    for (std::size_t c = 0; c < col_labels.size(); ++c) {
      const double v = values[r][c];
      if (std::isnan(v)) continue;
      const double scaled = v / scale_max;
      const int x = left + cw * static_cast<int>(c);
      s += "<rect class=\"cell\" data-row=\"" + escape(row_labels[r]) + "\" data-col=\"" +
           escape(col_labels[c]) + "\" x=\"" + std::to_string(x) + "\" y=\"" +
           std::to_string(y) + "\" width=\"" + std::to_string(cw) + "\" height=\"" +
           std::to_string(ch) + "\" fill=\"" + palette_color(palette, scaled) + "\"/>\n";
      const bool dark = palette == Palette::viridis ? scaled < 0.6 : scaled > 0.5;
      s += "<text class=\"value\" x=\"" + std::to_string(x + cw / 2) + "\" y=\"" +
           std::to_string(y + 15) + "\" text-anchor=\"middle\" fill=\"" +
           (dark ? "#ffffff" : "#000000") + "\">" + format_cell(v) + "</text>\n";
    }
  }
  // Colour bar on the fixed scale.
  const int bx = left + cw * static_cast<int>(col_labels.size()) + 14;
  const int bh = ch * static_cast<int>(row_labels.size());
  for (int k = 0; k < 10; ++k) {
    s += "<rect class=\"scale\" x=\"" + std::to_string(bx) + "\" y=\"" +
         std::to_string(top + bh * (9 - k) / 10) + "\" width=\"12\" height=\"" +
         std::to_string(std::max(1, bh / 10 + 1)) + "\" fill=\"" +
         palette_color(palette, (k + 0.5) / 10.0) + "\"/>\n";
  }
  s += "<text class=\"scale-label\" x=\"" + std::to_string(bx + 16) + "\" y=\"" +
       std::to_string(top + 10) + "\">" + num(scale_max, 2) + "</text>\n";
  s += "<text class=\"scale-label\" x=\"" + std::to_string(bx + 16) + "\" y=\"" +
       std::to_string(top + bh) + "\">0</text>\n";
  s += "</svg>\n";
  return s;
}

std::string heatmap_svg(const RobustnessMatrix& m, Orientation orientation, Palette palette,
                        const std::string& title) {
  std::string t = title;
  if (t.empty()) {
    t = m.metadata.value("arch", std::string("model")) + " " +
        m.metadata.value("scheme", std::string("")) + " test error";
  }
  std::string svg;
  if (orientation == Orientation::layers_as_rows) {
    svg = heatmap_svg(m.rows, m.cols, m.values, palette, t);
  } else {
    std::vector<std::vector<double>> tv(m.cols.size(), std::vector<double>(m.rows.size()));
    for (std::size_t r = 0; r < m.rows.size(); ++r) {
      for (std::size_t c = 0; c < m.cols.size(); ++c) tv[c][r] = m.values[r][c];
    }
    svg = heatmap_svg(m.cols, m.rows, tv, palette, t);
  }
  // Provenance.
  const auto pos = svg.find("<title>");
  svg.insert(pos, "<desc>" + escape(m.metadata.dump()) + "</desc>\n");
  return svg;
}

std::string lines_svg(const std::vector<std::string>& names,
                      const std::vector<std::string>& x_labels,
                      const std::vector<std::vector<double>>& values, const std::string& title,
                      const std::string& y_label) {
  if (names.empty() || x_labels.empty()) throw Error("line plot: no data");
  double ymax = 0.0;
  for (const auto& row : values) {
    for (double v : row) {
      if (!std::isnan(v)) ymax = std::max(ymax, v);
    }
  }
  if (ymax <= 0.0) ymax = 1.0;
  constexpr int left = 60, top = 30, pw = 420, ph = 240;
  int legend_w = 0;
  for (const auto& n : names) legend_w = std::max(legend_w, text_width(n) + 30);
  const int width = left + pw + 20 + legend_w;
  const int height = std::max(top + ph + 60, top + 16 * static_cast<int>(names.size()) + 20);
  const std::size_t nx = x_labels.size();
  auto px = [&](std::size_t i) {
    return left + (nx == 1 ? pw / 2 : static_cast<int>(std::lround(double(pw) * i / (nx - 1))));
  };
  auto py = [&](double v) { return top + ph - ph * std::clamp(v / ymax, 0.0, 1.0); };

  std::string s = svg_open(width, height);
  s += "<title>" + escape(title) + "</title>\n";
  s += "<text class=\"title\" x=\"" + std::to_string(left) + "\" y=\"16\">" + escape(title) +
       "</text>\n";
  s += "<rect class=\"frame\" x=\"" + std::to_string(left) + "\" y=\"" + std::to_string(top) +
       "\" width=\"" + std::to_string(pw) + "\" height=\"" + std::to_string(ph) +
       "\" fill=\"none\" stroke=\"#000000\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ymax * k / 4.0;
    s += "<text class=\"y-tick\" x=\"" + std::to_string(left - 4) + "\" y=\"" +
         num(py(v) + 4) + "\" text-anchor=\"end\">" + num(v, 3) + "</text>\n";
  }
  for (std::size_t i = 0; i < nx; ++i) {
    s += "<text class=\"x-tick\" x=\"" + std::to_string(px(i)) + "\" y=\"" +
         std::to_string(top + ph + 16) + "\" text-anchor=\"middle\">" + escape(x_labels[i]) +
         "</text>\n";
  }
  s += "<text class=\"y-label\" x=\"12\" y=\"" + std::to_string(top + ph / 2) +
       "\" transform=\"rotate(-90 12 " + std::to_string(top + ph / 2) + ")\">" +
       escape(y_label) + "</text>\n";
  for (std::size_t r = 0; r < names.size(); ++r) {
    const char* color = kLineColors[r % kLineColors.size()];
    std::string pts;
    for (std::size_t i = 0; i < nx; ++i) {
      const double v = values[r][i];
      if (std::isnan(v)) continue;
      if (!pts.empty()) pts += ' ';
      pts += std::to_string(px(i)) + ',' + num(py(v));
    }
    s += "<polyline class=\"series\" data-name=\"" + escape(names[r]) + "\" points=\"" + pts +
         "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
    const int ly = top + 16 * static_cast<int>(r) + 8;
    s += "<line class=\"legend-swatch\" x1=\"" + std::to_string(left + pw + 20) + "\" y1=\"" +
         std::to_string(ly - 4) + "\" x2=\"" + std::to_string(left + pw + 40) + "\" y2=\"" +
         std::to_string(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text class=\"legend\" x=\"" + std::to_string(left + pw + 44) + "\" y=\"" +
         std::to_string(ly) + "\">" + escape(names[r]) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

std::string lines_svg(const RobustnessMatrix& m, const std::string& title) {
  std::string svg = lines_svg(m.rows, m.cols, m.values,
                              title.empty() ? "test error per reset" : title, "test error");
  svg.insert(svg.find("<title>"), "<desc>" + escape(m.metadata.dump()) + "</desc>\n");
  return svg;
}

std::string lines_svg(const DistanceMatrix& d, bool linf, const std::string& title) {
  std::vector<std::string> xs;
  for (int t : d.checkpoints) xs.push_back(std::to_string(t));
  const std::string what = linf ? "inf-norm distance" : "normalized 2-norm distance";
  return lines_svg(d.layers, xs, linf ? d.linf : d.l2, title.empty() ? what : title, what);
}

std::string width_sweep_svg(const std::vector<WidthSweepRow>& rows, const std::string& title) {
  std::vector<std::string> xs;
  std::vector<std::vector<double>> v(3);
  for (const auto& r : rows) {
    xs.push_back(std::to_string(r.width));
    v[0].push_back(r.mean);
    v[1].push_back(r.mean - r.std);
    v[2].push_back(r.mean + r.std);
  }
  return lines_svg({"mean", "mean-std", "mean+std"}, xs, v,
                   title.empty() ? "upper-layer re-init delta vs width" : title,
                   "error delta");
}

std::string width_sweep_csv(const std::vector<WidthSweepRow>& rows) {
  std::string out = "width,mean,std,trials\n";
  for (const auto& r : rows) {
    std::string trials;
    for (double t : r.trials) {
      if (!trials.empty()) trials += ';';
      trials += num(t, 6);
    }
    out += std::to_string(r.width) + ',' + num(r.mean, 6) + ',' + num(r.std, 6) + ',' + trials +
           '\n';
  }
  return out;
}

nlohmann::json width_sweep_json(const std::vector<WidthSweepRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"width", r.width}, {"mean", r.mean}, {"std", r.std}, {"trials", r.trials}});
  }
  return out;
}

std::vector<WidthSweepRow> width_sweep_from_json(const nlohmann::json& j) {
  std::vector<WidthSweepRow> rows;
  for (const auto& r : j) {
    rows.push_back({r.at("width").get<int>(), r.at("mean").get<double>(),
                    r.at("std").get<double>(), r.at("trials").get<std::vector<double>>()});
  }
  return rows;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void emit_heatmap(const RobustnessMatrix& m, Orientation orientation, Palette palette,
                  const std::filesystem::path& path) {
  write_text(path, heatmap_svg(m, orientation, palette));
}

void emit_lines(const RobustnessMatrix& m, const std::filesystem::path& path) {
  write_text(path, lines_svg(m));
}

void emit_lines(const DistanceMatrix& d, bool linf, const std::filesystem::path& path) {
  write_text(path, lines_svg(d, linf));
}

}  // namespace lp
