#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "caedet/metrics.hpp"

namespace caedet {

namespace detail {

struct Series {
  std::string label;
  std::string colour;
  std::vector<std::pair<double, double>> points;
};

inline std::string fmt(double v, const char* spec = "%.2f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

/// One panel: frame, ticks, one polyline per series, legend.
inline std::string svg_panel(double left, double top, double width, double height,
                             const std::string& title, double x_lo, double x_hi, double y_lo,
                             double y_hi, const std::vector<Series>& series,
                             const char* tick_spec) {
  auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * width; };
  auto py = [&](double y) { return top + height - (y - y_lo) / (y_hi - y_lo) * height; };
  std::string s;
  s += "<g class=\"panel\">\n";
  s += "<text x=\"" + fmt(left + width / 2) + "\" y=\"" + fmt(top - 12) +
       "\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
  s += "<rect x=\"" + fmt(left) + "\" y=\"" + fmt(top) + "\" width=\"" + fmt(width) +
       "\" height=\"" + fmt(height) + "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = y_lo + (y_hi - y_lo) * i / 4.0;
    s += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(py(y)) + "\" x2=\"" + fmt(left + width) +
         "\" y2=\"" + fmt(py(y)) + "\" stroke=\"#ddd\"/>\n";
    s += "<text x=\"" + fmt(left - 6) + "\" y=\"" + fmt(py(y) + 4) +
         "\" text-anchor=\"end\" font-size=\"11\">" + fmt(y, tick_spec) + "</text>\n";
  }
  const auto x_first = static_cast<long>(std::ceil(x_lo)), x_last = static_cast<long>(std::floor(x_hi));
  const long x_step = std::max(1L, (x_last - x_first) / 10 + 1);
  for (long x = x_first; x <= x_last; x += x_step) {
    s += "<text x=\"" + fmt(px(x)) + "\" y=\"" + fmt(top + height + 16) +
         "\" text-anchor=\"middle\" font-size=\"11\">" + std::to_string(x) + "</text>\n";
  }
  s += "<text x=\"" + fmt(left + width / 2) + "\" y=\"" + fmt(top + height + 34) +
       "\" text-anchor=\"middle\" font-size=\"12\">epoch</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& ser = series[k];
    std::string pts;
    for (const auto& [x, y] : ser.points) {
      if (!pts.empty()) pts += ' ';
      pts += fmt(px(x), "%.3f") + "," + fmt(py(y), "%.3f");
    }
    s += "<polyline class=\"series\" data-label=\"" + ser.label + "\" fill=\"none\" stroke=\"" +
         ser.colour + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    const double ly = top + 16 + 16.0 * static_cast<double>(k);
    s += "<line x1=\"" + fmt(left + width - 120) + "\" y1=\"" + fmt(ly) + "\" x2=\"" +
         fmt(left + width - 100) + "\" y2=\"" + fmt(ly) + "\" stroke=\"" + ser.colour +
         "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + fmt(left + width - 94) + "\" y=\"" + fmt(ly + 4) +
         "\" font-size=\"11\">" + ser.label + "</text>\n";
  }
  s += "</g>\n";
  return s;
}

}  // namespace detail

/// SVG chart with an accuracy panel and a loss panel over epochs.
/// The accuracy axis always ends at 1 and starts at the data minimum rounded
/// down to a multiple of 0.05, so near-constant accuracy draws as a flat line.
inline std::string render_metrics_svg(const std::vector<EpochMetrics>& rows) {
  using detail::Series;
  if (rows.empty()) throw DomainError("render_metrics_svg: no metric rows");
  Series train_acc{"train accuracy", "#1f77b4", {}}, val_acc{"validation accuracy", "#ff7f0e", {}};
  Series train_loss{"train loss", "#1f77b4", {}}, val_loss{"validation loss", "#ff7f0e", {}};
  for (const auto& r : rows) {
    const double e = static_cast<double>(r.epoch);
    train_acc.points.emplace_back(e, r.train_acc);
    train_loss.points.emplace_back(e, r.train_loss);
    if (r.val_acc) val_acc.points.emplace_back(e, *r.val_acc);
    if (r.val_loss) val_loss.points.emplace_back(e, *r.val_loss);
  }
  std::vector<Series> acc{train_acc}, loss{train_loss};
  if (!val_acc.points.empty()) acc.push_back(val_acc);
  if (!val_loss.points.empty()) loss.push_back(val_loss);

  double x_lo = static_cast<double>(rows.front().epoch), x_hi = x_lo;
  double acc_min = 1.0, loss_max = 0.0;
  for (const auto& s : acc)
    for (const auto& [x, y] : s.points) {
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      acc_min = std::min(acc_min, y);
    }
  for (const auto& s : loss)
    for (const auto& p : s.points) loss_max = std::max(loss_max, p.second);
  if (x_hi == x_lo) {
    x_lo -= 0.5;
    x_hi += 0.5;
  }
  double acc_lo = std::clamp(std::floor(acc_min / 0.05) * 0.05, 0.0, 0.95);
  if (acc_min - acc_lo < 1e-12 && acc_lo > 0) acc_lo -= 0.05;
  const double loss_hi = loss_max > 0 ? loss_max * 1.1 : 1.0;

  const double W = 720, H = 560;
  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt(W, "%.0f") +
         "\" height=\"" + detail::fmt(H, "%.0f") + "\" viewBox=\"0 0 720 560\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += detail::svg_panel(80, 40, 600, 190, "Accuracy", x_lo, x_hi, acc_lo, 1.0, acc, "%.2f");
  svg += detail::svg_panel(80, 320, 600, 190, "Loss", x_lo, x_hi, 0.0, loss_hi, loss, "%.3g");
  svg += "</svg>\n";
  return svg;
}

}  // namespace caedet
