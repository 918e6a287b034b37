#include "autoddpm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace autoddpm {
namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

std::string header(const std::string& title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) +
       "</text>\n";
  return s;
}

std::string axes(const Range& yr, const std::string& y_label) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string s = "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y0) +
                  "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(y1) +
       "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = yr.lo + (yr.hi - yr.lo) * i / 5.0;
    const double y = y0 - (y0 - y1) * i / 5.0;
    s += "<line x1=\"" + num(x0 - 4) + "\" y1=\"" + num(y) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y) +
         "\" stroke=\"#ddd\"/>\n";
    s += "<text x=\"" + num(x0 - 8) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + tick_label(v) + "</text>\n";
  }
  s += "<text transform=\"translate(18," + num((y0 + y1) / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       escape(y_label) + "</text>\n";
  return s;
}

std::string legend_entry(int i, const std::string& name, bool dashed) {
  const double x = kWidth - kRight + 15, y = kTop + 10 + 20 * i;
  std::string s = "<line x1=\"" + num(x) + "\" y1=\"" + num(y) + "\" x2=\"" + num(x + 22) + "\" y2=\"" + num(y) +
                  "\" stroke=\"" + kPalette[i % 10] + "\" stroke-width=\"2\"" +
                  (dashed ? " stroke-dasharray=\"5,3\"" : "") + "/>\n";
  s += "<text x=\"" + num(x + 28) + "\" y=\"" + num(y + 4) + "\">" + escape(name) + "</text>\n";
  return s;
}

}  // namespace

std::string render_svg(const LinePlot& plot) {
  Range xr, yr;
  for (const auto& s : plot.series) {
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      xr.add(s.x[i]);
      const double e = i < s.err.size() && std::isfinite(s.err[i]) ? s.err[i] : 0.0;
      yr.add(s.y[i] - e);
      yr.add(s.y[i] + e);
    }
  }
  xr.finish();
  yr.finish();
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  const auto px = [&](double v) { return x0 + (v - xr.lo) / (xr.hi - xr.lo) * (x1 - x0); };
  const auto py = [&](double v) { return y0 - (v - yr.lo) / (yr.hi - yr.lo) * (y0 - y1); };

  std::string svg = header(plot.title) + axes(yr, plot.y_label);
  std::vector<double> ticks;
  for (const auto& s : plot.series) ticks.insert(ticks.end(), s.x.begin(), s.x.end());
  std::sort(ticks.begin(), ticks.end());
  ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
  for (const double t : ticks) {
    svg += "<text x=\"" + num(px(t)) + "\" y=\"" + num(y0 + 18) + "\" text-anchor=\"middle\">" + tick_label(t) +
           "</text>\n";
  }
  svg += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(kHeight - 18) + "\" text-anchor=\"middle\">" +
         escape(plot.x_label) + "</text>\n";
  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const auto& s = plot.series[k];
    const char* colour = kPalette[k % 10];
    std::string points;
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      points += num(px(s.x[i])) + "," + num(py(s.y[i])) + " ";
      svg += "<circle cx=\"" + num(px(s.x[i])) + "\" cy=\"" + num(py(s.y[i])) + "\" r=\"3\" fill=\"" + colour +
             "\"/>\n";
      if (i < s.err.size() && std::isfinite(s.err[i]) && s.err[i] > 0) {
        svg += "<line x1=\"" + num(px(s.x[i])) + "\" y1=\"" + num(py(s.y[i] - s.err[i])) + "\" x2=\"" +
               num(px(s.x[i])) + "\" y2=\"" + num(py(s.y[i] + s.err[i])) + "\" stroke=\"" + colour + "\"/>\n";
      }
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"2\"" +
           (s.dashed ? " stroke-dasharray=\"5,3\"" : "") + " points=\"" + points + "\"/>\n";
    svg += legend_entry(static_cast<int>(k), s.name, s.dashed);
  }
  return svg + "</svg>\n";
}

std::string render_svg(const BarPlot& plot) {
  Range yr;
  yr.add(0.0);
  for (const auto& g : plot.groups) {
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      const double e = i < g.err.size() && std::isfinite(g.err[i]) ? g.err[i] : 0.0;
      yr.add(g.values[i] + e);
    }
  }
  yr.finish();
  yr.lo = std::min(yr.lo, 0.0);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  const auto py = [&](double v) { return y0 - (v - yr.lo) / (yr.hi - yr.lo) * (y0 - y1); };
  std::string svg = header(plot.title) + axes(yr, plot.y_label);
  const double group_w = (x1 - x0) / std::max<std::size_t>(plot.groups.size(), 1);
  const double bar_w = 0.8 * group_w / std::max<std::size_t>(plot.bar_names.size(), 1);
  for (std::size_t g = 0; g < plot.groups.size(); ++g) {
    const auto& grp = plot.groups[g];
    const double gx = x0 + g * group_w + 0.1 * group_w;
    for (std::size_t b = 0; b < grp.values.size(); ++b) {
      const double v = grp.values[b];
      if (!std::isfinite(v)) continue;
      const double top = py(std::max(v, 0.0)), base = py(std::min(v, 0.0));
      svg += "<rect x=\"" + num(gx + b * bar_w) + "\" y=\"" + num(top) + "\" width=\"" + num(bar_w * 0.9) +
             "\" height=\"" + num(base - top) + "\" fill=\"" + kPalette[b % 10] + "\"/>\n";
      if (b < grp.err.size() && std::isfinite(grp.err[b]) && grp.err[b] > 0) {
        const double cx = gx + b * bar_w + bar_w * 0.45;
        svg += "<line x1=\"" + num(cx) + "\" y1=\"" + num(py(v - grp.err[b])) + "\" x2=\"" + num(cx) + "\" y2=\"" +
               num(py(v + grp.err[b])) + "\" stroke=\"black\"/>\n";
      }
    }
    svg += "<text x=\"" + num(x0 + (g + 0.5) * group_w) + "\" y=\"" + num(y0 + 18) + "\" text-anchor=\"middle\">" +
           escape(grp.label) + "</text>\n";
  }
  for (std::size_t b = 0; b < plot.bar_names.size(); ++b) svg += legend_entry(static_cast<int>(b), plot.bar_names[b], false);
  return svg + "</svg>\n";
}

}  // namespace autoddpm
