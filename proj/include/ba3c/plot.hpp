#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ba3c {

namespace detail {

inline std::string fmt_num(double v) {
  char buf[32];
  if (v != 0.0 && (std::abs(v) < 1e-3 || std::abs(v) >= 1e4))
    std::snprintf(buf, sizeof buf, "%.2e", v);
  else
    std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

/// Blue (0) to red (1) ramp for heatmap cells.
inline std::string heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const int r = int(std::lround(255.0 * v));
  const int b = int(std::lround(255.0 * (1.0 - v)));
  const int g = int(std::lround(80.0 * (1.0 - std::abs(2.0 * v - 1.0))));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace detail

/// Minimal self-contained SVG line plot: one polyline per series, shared
/// axes with min/max tick labels. No external tooling involved.
inline void svg_line_plot(const std::string& path, const std::string& title,
                          const std::string& xlabel, const std::string& ylabel,
                          const std::vector<double>& xs,
                          const std::vector<std::vector<double>>& series,
                          const std::vector<std::string>& series_names) {
  if (xs.empty() || series.empty()) throw std::invalid_argument("svg_line_plot: empty data");
  for (const auto& s : series)
    if (s.size() != xs.size()) throw std::invalid_argument("svg_line_plot: ragged series");

  const double W = 640, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
  double xmin = xs.front(), xmax = xs.front(), ymin = series[0][0], ymax = series[0][0];
  for (double x : xs) xmin = std::min(xmin, x), xmax = std::max(xmax, x);
  for (const auto& s : series)
    for (double y : s) ymin = std::min(ymin, y), ymax = std::max(ymax, y);
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  const auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  const auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::ofstream os(path);
  if (!os) throw std::runtime_error("svg_line_plot: cannot open " + path);
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n"
     << "<rect width='100%' height='100%' fill='white'/>\n"
     << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15'>" << title
     << "</text>\n"
     << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
     << "' stroke='black'/>\n"
     << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
     << "' stroke='black'/>\n"
     << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 12
     << "' text-anchor='middle' font-size='12'>" << xlabel << "</text>\n"
     << "<text x='16' y='" << (mt + H - mb) / 2 << "' font-size='12' transform='rotate(-90 16 "
     << (mt + H - mb) / 2 << ")' text-anchor='middle'>" << ylabel << "</text>\n";
  // min/max ticks
  os << "<text x='" << ml << "' y='" << H - mb + 16 << "' font-size='11' text-anchor='middle'>"
     << detail::fmt_num(xmin) << "</text>\n"
     << "<text x='" << W - mr << "' y='" << H - mb + 16
     << "' font-size='11' text-anchor='middle'>" << detail::fmt_num(xmax) << "</text>\n"
     << "<text x='" << ml - 6 << "' y='" << H - mb + 4 << "' font-size='11' text-anchor='end'>"
     << detail::fmt_num(ymin) << "</text>\n"
     << "<text x='" << ml - 6 << "' y='" << mt + 4 << "' font-size='11' text-anchor='end'>"
     << detail::fmt_num(ymax) << "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = colors[si % 5];
    os << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
    for (std::size_t i = 0; i < xs.size(); ++i)
      os << px(xs[i]) << "," << py(series[si][i]) << " ";
    os << "'/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i)
      os << "<circle cx='" << px(xs[i]) << "' cy='" << py(series[si][i])
         << "' r='3' fill='" << color << "'/>\n";
    if (si < series_names.size())
      os << "<text x='" << W - mr - 8 << "' y='" << mt + 16 + 16 * double(si)
         << "' font-size='12' text-anchor='end' fill='" << color << "'>" << series_names[si]
         << "</text>\n";
  }
  os << "</svg>\n";
}

/// Cell grid heatmap; missing cells render gray. Values are expected in
/// [0,1] (1 = best).
inline void svg_heatmap(const std::string& path, const std::string& title,
                        const std::string& xlabel, const std::string& ylabel,
                        const std::vector<std::vector<std::optional<double>>>& cells,
                        const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels) {
  if (cells.empty() || cells.front().empty())
    throw std::invalid_argument("svg_heatmap: empty grid");
  const std::size_t rows = cells.size(), cols = cells.front().size();
  const double cell = 48, ml = 90, mt = 50, mr = 20, mb = 60;
  const double W = ml + cell * double(cols) + mr, H = mt + cell * double(rows) + mb;

  std::ofstream os(path);
  if (!os) throw std::runtime_error("svg_heatmap: cannot open " + path);
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n"
     << "<rect width='100%' height='100%' fill='white'/>\n"
     << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='15'>" << title
     << "</text>\n";
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = ml + cell * double(c), y = mt + cell * double(r);
      const auto& v = cells[r][c];
      os << "<rect x='" << x << "' y='" << y << "' width='" << cell << "' height='" << cell
         << "' fill='" << (v ? detail::heat_color(*v) : std::string("#cccccc"))
         << "' stroke='white'/>\n";
      if (v)
        os << "<text x='" << x + cell / 2 << "' y='" << y + cell / 2 + 4
           << "' text-anchor='middle' font-size='10' fill='white'>" << detail::fmt_num(*v)
           << "</text>\n";
    }
  }
  for (std::size_t r = 0; r < rows && r < row_labels.size(); ++r)
    os << "<text x='" << ml - 8 << "' y='" << mt + cell * (double(r) + 0.5) + 4
       << "' text-anchor='end' font-size='11'>" << row_labels[r] << "</text>\n";
  for (std::size_t c = 0; c < cols && c < col_labels.size(); ++c)
    os << "<text x='" << ml + cell * (double(c) + 0.5) << "' y='" << mt + cell * double(rows) + 16
       << "' text-anchor='middle' font-size='11'>" << col_labels[c] << "</text>\n";
  os << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 10
     << "' text-anchor='middle' font-size='12'>" << xlabel << "</text>\n"
     << "<text x='16' y='" << (mt + H - mb) / 2 << "' font-size='12' transform='rotate(-90 16 "
     << (mt + H - mb) / 2 << ")' text-anchor='middle'>" << ylabel << "</text>\n"
     << "</svg>\n";
}

}  // namespace ba3c
