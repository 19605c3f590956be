#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nelscope/errors.hpp"
#include "nelscope/simulator.hpp"

namespace nelscope {

inline std::vector<TimelineRow> read_timeline_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in.is_open()) throw ConfigError("cannot open timeline: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("minute,region_id,median_rtt_ms", 0) != 0)
    throw ParseError("not a timeline CSV: " + path);
  std::vector<TimelineRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string minute, region, rtt, count;
    if (!std::getline(ss, minute, ',') || !std::getline(ss, region, ',') ||
        !std::getline(ss, rtt, ',') || !std::getline(ss, count, ','))
      throw ParseError("bad timeline row: " + line);
    TimelineRow row;
    try {
      row.minute = std::stoll(minute);
      row.median_rtt_ms = std::stod(rtt);
      row.upload_count = std::stoll(count);
    } catch (const std::exception&) {
      throw ParseError("bad timeline row: " + line);
    }
    row.region_id = region;
    rows.push_back(std::move(row));
  }
  return rows;
}

// Per-region RTT over time as a plain SVG: one polyline and one legend entry
// per region. Good enough to eyeball a run without a plotting stack.
inline std::string render_timeline_svg(const std::vector<TimelineRow>& rows) {
  constexpr double kWidth = 900, kHeight = 480;
  constexpr double kLeft = 60, kRight = 160, kTop = 20, kBottom = 40;
  static const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                   "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  std::map<std::string, std::vector<std::pair<std::int64_t, double>>> series;
  std::int64_t min_minute = 0, max_minute = 1;
  double max_rtt = 1.0;
  bool first = true;
  for (const auto& r : rows) {
    series[r.region_id].emplace_back(r.minute, r.median_rtt_ms);
    if (first || r.minute < min_minute) min_minute = r.minute;
    if (first || r.minute > max_minute) max_minute = r.minute;
    max_rtt = std::max(max_rtt, r.median_rtt_ms);
    first = false;
  }
  double span_x = std::max<double>(1.0, static_cast<double>(max_minute - min_minute));
  double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  auto x_of = [&](std::int64_t minute) {
    return kLeft + (static_cast<double>(minute - min_minute) / span_x) * plot_w;
  };
  auto y_of = [&](double rtt) { return kTop + plot_h - (rtt / max_rtt) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\""
      << kLeft + plot_w << "\" y2=\"" << kTop + plot_h
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft
      << "\" y2=\"" << kTop + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 8
      << "\" text-anchor=\"middle\" font-size=\"13\">minute</text>\n";
  svg << "<text x=\"14\" y=\"" << kTop + plot_h / 2
      << "\" font-size=\"13\" transform=\"rotate(-90 14 " << kTop + plot_h / 2
      << ")\" text-anchor=\"middle\">median RTT (ms)</text>\n";
  svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << kTop + plot_h + 4
      << "\" text-anchor=\"end\" font-size=\"11\">0</text>\n";
  svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << kTop + 4
      << "\" text-anchor=\"end\" font-size=\"11\">" << max_rtt << "</text>\n";

  int color = 0, legend_row = 0;
  for (const auto& [region, points] : series) {
    auto sorted = points;
    std::sort(sorted.begin(), sorted.end());
    const char* stroke = kPalette[color++ % 8];
    svg << "<polyline data-region=\"" << region << "\" fill=\"none\" stroke=\"" << stroke
        << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [minute, rtt] : sorted) svg << x_of(minute) << ',' << y_of(rtt) << ' ';
    svg << "\"/>\n";
    double ly = kTop + 14 + 18 * legend_row++;
    svg << "<rect x=\"" << kLeft + plot_w + 16 << "\" y=\"" << ly - 9
        << "\" width=\"12\" height=\"12\" fill=\"" << stroke << "\"/>\n";
    svg << "<text class=\"legend\" x=\"" << kLeft + plot_w + 34 << "\" y=\"" << ly + 2
        << "\" font-size=\"12\">" << region << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace nelscope
