#pragma once
// Minimal static SVG charts for experiment outputs.

#include <string>
#include <vector>

namespace autoddpm {

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::vector<double> err;  // optional symmetric error bars, same length as y
  bool dashed = false;
};

struct LinePlot {
  std::string title, x_label, y_label;
  std::vector<Series> series;
};

struct BarGroup {
  std::string label;
  std::vector<double> values, err;  // one per bar name
};

struct BarPlot {
  std::string title, y_label;
  std::vector<std::string> bar_names;
  std::vector<BarGroup> groups;
};

std::string render_svg(const LinePlot& plot);
std::string render_svg(const BarPlot& plot);

}  // namespace autoddpm
