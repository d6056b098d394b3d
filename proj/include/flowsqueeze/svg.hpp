#pragma once

/**
 * Minimal static SVG chart emitters (line series and grouped bars).
 */

#include <string>
#include <vector>

namespace flowsqueeze {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Multi-series line chart with axes and a legend.
std::string line_chart_svg(const std::vector<Series>& series,
                           const std::string& title,
                           const std::string& x_label,
                           const std::string& y_label);

struct BarGroup {
  std::string label;                 // x-axis group label
  std::vector<double> values;        // one value per series
};

/// Grouped bar chart; series_labels names the bars within each group.
std::string bar_chart_svg(const std::vector<BarGroup>& groups,
                          const std::vector<std::string>& series_labels,
                          const std::string& title,
                          const std::string& y_label);

}  // namespace flowsqueeze
