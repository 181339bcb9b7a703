#pragma once

// Minimal static SVG line charts for the metrics series.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "vdg/tensor.hpp"
#include "vdg/train.hpp"

namespace vdg {

struct ChartSeries {
  std::string name;
  std::vector<double> x, y;
};

inline std::string render_line_chart(const std::string& title,
                                     const ChartSeries& series,
                                     double reference_line = std::nan("")) {
  if (series.x.empty() || series.x.size() != series.y.size())
    throw ContractError("chart: empty or mismatched series");
  const int width = 640, height = 400;
  const int ml = 70, mr = 20, mt = 40, mb = 45;
  double xmin = *std::min_element(series.x.begin(), series.x.end());
  double xmax = *std::max_element(series.x.begin(), series.x.end());
  double ymin = *std::min_element(series.y.begin(), series.y.end());
  double ymax = *std::max_element(series.y.begin(), series.y.end());
  if (!std::isnan(reference_line)) {
    ymin = std::min(ymin, reference_line);
    ymax = std::max(ymax, reference_line);
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) {
    ymax += 0.5;
    ymin -= 0.5;
  }
  double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double v) {
    return ml + (v - xmin) / (xmax - xmin) * (width - ml - mr);
  };
  auto py = [&](double v) {
    return height - mb - (v - ymin) / (ymax - ymin) * (height - mt - mb);
  };
  char buf[256];
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
         "viewBox=\"0 0 640 400\">\n";
  svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf),
                "<text x=\"320\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" "
                "text-anchor=\"middle\">%s</text>\n",
                title.c_str());
  svg += buf;
  // axes
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                ml, height - mb, width - mr, height - mb);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                ml, mt, ml, height - mb);
  svg += buf;
  // extremal tick labels
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\" "
                "text-anchor=\"middle\">%.4g</text>\n",
                ml, height - mb + 16, xmin);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\" "
                "text-anchor=\"middle\">%.4g</text>\n",
                width - mr, height - mb + 16, xmax);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\" "
                "text-anchor=\"end\">%.4g</text>\n",
                ml - 6, height - mb + 4, ymin + ypad);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\" "
                "text-anchor=\"end\">%.4g</text>\n",
                ml - 6, mt + 4, ymax - ypad);
  svg += buf;
  if (!std::isnan(reference_line)) {
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%.2f\" x2=\"%d\" y2=\"%.2f\" stroke=\"#c04040\" "
                  "stroke-dasharray=\"6,4\"/>\n",
                  ml, py(reference_line), width - mr, py(reference_line));
    svg += buf;
  }
  svg += "<polyline fill=\"none\" stroke=\"#2060c0\" stroke-width=\"1.5\" points=\"";
  for (size_t i = 0; i < series.x.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px(series.x[i]), py(series.y[i]));
    svg += buf;
  }
  svg += "\"/>\n</svg>\n";
  return svg;
}

inline std::vector<EpochMetrics> parse_metrics_csv(const std::string& text) {
  std::vector<EpochMetrics> rows;
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line)) throw ConfigError("metrics csv: empty file");
  const std::string expect =
      "epoch,loss_total,loss_inv,loss_var,loss_cov,loss_budget,flops_ratio,lr,tau";
  if (detail::trim(line) != expect)
    throw ConfigError("metrics csv: unexpected header");
  while (std::getline(ss, line)) {
    if (detail::trim(line).empty()) continue;
    EpochMetrics m;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &m.epoch,
                    &m.loss_total, &m.loss_inv, &m.loss_var, &m.loss_cov,
                    &m.loss_budget, &m.flops_ratio, &m.lr, &m.tau) != 9)
      throw ConfigError("metrics csv: malformed row: " + line);
    rows.push_back(m);
  }
  if (rows.empty()) throw ConfigError("metrics csv: no data rows");
  return rows;
}

// one SVG per tracked series; the flops_ratio chart can carry a target line
inline std::vector<std::filesystem::path> write_metric_charts(
    const std::filesystem::path& out_dir, const std::vector<EpochMetrics>& rows,
    double target_ratio = std::nan("")) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<double> epochs;
  for (const auto& r : rows) epochs.push_back(r.epoch);
  struct Pick {
    const char* name;
    double EpochMetrics::*field;
    bool with_target;
  };
  const Pick picks[] = {
      {"loss_total", &EpochMetrics::loss_total, false},
      {"loss_inv", &EpochMetrics::loss_inv, false},
      {"loss_var", &EpochMetrics::loss_var, false},
      {"loss_cov", &EpochMetrics::loss_cov, false},
      {"loss_budget", &EpochMetrics::loss_budget, false},
      {"flops_ratio", &EpochMetrics::flops_ratio, true},
      {"lr", &EpochMetrics::lr, false},
      {"tau", &EpochMetrics::tau, false},
  };
  std::vector<fs::path> written;
  for (const auto& p : picks) {
    ChartSeries s;
    s.name = p.name;
    s.x = epochs;
    for (const auto& r : rows) s.y.push_back(r.*(p.field));
    fs::path file = out_dir / (std::string(p.name) + ".svg");
    double ref = p.with_target ? target_ratio : std::nan("");
    write_text_atomic(file, render_line_chart(p.name, s, ref));
    written.push_back(file);
  }
  return written;
}

}  // namespace vdg
