#include <flowsqueeze/svg.hpp>

#include <flowsqueeze/errors.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace flowsqueeze {

namespace {

constexpr int kWidth = 720;
constexpr int kHeight = 440;
constexpr int kMarginLeft = 70;
constexpr int kMarginRight = 150;
constexpr int kMarginTop = 50;
constexpr int kMarginBottom = 60;

const char* kPalette[] = {"#3b6fb6", "#c2453a", "#d9a520", "#3f8f4e",
                          "#7b509b", "#4aa3a0", "#8a8a8a"};

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(4);
  out << v;
  return out.str();
}

struct Scale {
  double lo, hi;
  double px0, px1;
  double operator()(double v) const {
    double t = (v - lo) / (hi - lo);
    return px0 + t * (px1 - px0);
  }
};

void axes(std::ostringstream& svg, const Scale& xs, const Scale& ys,
          const std::string& title, const std::string& x_label,
          const std::string& y_label) {
  svg << "<rect width='" << kWidth << "' height='" << kHeight
      << "' fill='white'/>\n";
  svg << "<text x='" << kWidth / 2 << "' y='24' text-anchor='middle' "
      << "font-size='16' font-family='sans-serif'>" << title << "</text>\n";
  // frame
  svg << "<line x1='" << xs.px0 << "' y1='" << ys.px1 << "' x2='" << xs.px1
      << "' y2='" << ys.px1 << "' stroke='black'/>\n";
  svg << "<line x1='" << xs.px0 << "' y1='" << ys.px0 << "' x2='" << xs.px0
      << "' y2='" << ys.px1 << "' stroke='black'/>\n";
  // ticks
  for (int i = 0; i <= 4; ++i) {
    double v = xs.lo + (xs.hi - xs.lo) * i / 4.0;
    double px = xs(v);
    svg << "<line x1='" << px << "' y1='" << ys.px1 << "' x2='" << px
        << "' y2='" << ys.px1 + 5 << "' stroke='black'/>\n";
    svg << "<text x='" << px << "' y='" << ys.px1 + 20
        << "' text-anchor='middle' font-size='11' "
        << "font-family='sans-serif'>" << fmt(v) << "</text>\n";
    v = ys.lo + (ys.hi - ys.lo) * i / 4.0;
    double py = ys(v);
    svg << "<line x1='" << xs.px0 - 5 << "' y1='" << py << "' x2='" << xs.px0
        << "' y2='" << py << "' stroke='black'/>\n";
    svg << "<text x='" << xs.px0 - 8 << "' y='" << py + 4
        << "' text-anchor='end' font-size='11' font-family='sans-serif'>"
        << fmt(v) << "</text>\n";
  }
  svg << "<text x='" << (xs.px0 + xs.px1) / 2 << "' y='" << kHeight - 14
      << "' text-anchor='middle' font-size='13' font-family='sans-serif'>"
      << x_label << "</text>\n";
  svg << "<text x='18' y='" << (ys.px0 + ys.px1) / 2
      << "' text-anchor='middle' font-size='13' font-family='sans-serif' "
      << "transform='rotate(-90 18 " << (ys.px0 + ys.px1) / 2 << ")'>"
      << y_label << "</text>\n";
}

void legend(std::ostringstream& svg, const std::vector<std::string>& labels) {
  double y = kMarginTop + 10;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    svg << "<rect x='" << kWidth - kMarginRight + 14 << "' y='" << y - 9
        << "' width='12' height='12' fill='" << color << "'/>\n";
    svg << "<text x='" << kWidth - kMarginRight + 32 << "' y='" << y + 2
        << "' font-size='12' font-family='sans-serif'>" << labels[i]
        << "</text>\n";
    y += 20;
  }
}

}  // namespace

std::string line_chart_svg(const std::vector<Series>& series,
                           const std::string& title,
                           const std::string& x_label,
                           const std::string& y_label) {
  if (series.empty()) throw ArgumentError("line_chart_svg: no series");
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  for (const auto& s : series) {
    if (s.x.empty() || s.x.size() != s.y.size()) {
      throw ArgumentError("line_chart_svg: empty or mismatched series");
    }
    for (double v : s.x) { xlo = std::min(xlo, v); xhi = std::max(xhi, v); }
    for (double v : s.y) { ylo = std::min(ylo, v); yhi = std::max(yhi, v); }
  }
  if (xhi == xlo) xhi = xlo + 1;
  if (yhi == ylo) { yhi += 0.5; ylo -= 0.5; }
  double pad = 0.05 * (yhi - ylo);
  ylo -= pad; yhi += pad;

  Scale xs{xlo, xhi, kMarginLeft, kWidth - kMarginRight};
  Scale ys{ylo, yhi, kHeight - kMarginBottom, kMarginTop};  // y grows upward
  std::swap(ys.px0, ys.px1);
  Scale yflip{ylo, yhi, kHeight - kMarginBottom, kMarginTop};

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth
      << "' height='" << kHeight << "'>\n";
  axes(svg, xs, Scale{ylo, yhi, kMarginTop, kHeight - kMarginBottom}, title,
       x_label, y_label);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    svg << "<polyline fill='none' stroke='" << color
        << "' stroke-width='1.8' points='";
    for (std::size_t j = 0; j < series[i].x.size(); ++j) {
      svg << fmt(xs(series[i].x[j])) << ',' << fmt(yflip(series[i].y[j]))
          << ' ';
    }
    svg << "'/>\n";
  }
  std::vector<std::string> labels;
  for (const auto& s : series) labels.push_back(s.label);
  legend(svg, labels);
  svg << "</svg>\n";
  return svg.str();
}

std::string bar_chart_svg(const std::vector<BarGroup>& groups,
                          const std::vector<std::string>& series_labels,
                          const std::string& title,
                          const std::string& y_label) {
  if (groups.empty()) throw ArgumentError("bar_chart_svg: no groups");
  double yhi = 0.0, ylo = 0.0;
  for (const auto& g : groups) {
    if (g.values.size() != series_labels.size()) {
      throw ArgumentError("bar_chart_svg: group size mismatch");
    }
    for (double v : g.values) { yhi = std::max(yhi, v); ylo = std::min(ylo, v); }
  }
  if (yhi == ylo) yhi = ylo + 1;
  yhi *= 1.05;

  Scale yflip{ylo, yhi, kHeight - kMarginBottom, kMarginTop};
  double plot_w = kWidth - kMarginLeft - kMarginRight;
  double group_w = plot_w / static_cast<double>(groups.size());
  double bar_w = group_w * 0.8 / static_cast<double>(series_labels.size());

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth
      << "' height='" << kHeight << "'>\n";
  Scale xs{0.0, static_cast<double>(groups.size()), kMarginLeft,
           kWidth - kMarginRight};
  axes(svg, xs, Scale{ylo, yhi, kMarginTop, kHeight - kMarginBottom}, title,
       "", y_label);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    double gx = kMarginLeft + group_w * (static_cast<double>(gi) + 0.1);
    for (std::size_t si = 0; si < series_labels.size(); ++si) {
      double v = groups[gi].values[si];
      double y0 = yflip(std::max(v, 0.0));
      double h = std::abs(yflip(0.0) - yflip(v));
      svg << "<rect x='" << fmt(gx + bar_w * si) << "' y='" << fmt(y0)
          << "' width='" << fmt(bar_w * 0.92) << "' height='" << fmt(h)
          << "' fill='" << kPalette[si % std::size(kPalette)] << "'/>\n";
    }
    svg << "<text x='" << fmt(gx + group_w * 0.4) << "' y='"
        << kHeight - kMarginBottom + 20
        << "' text-anchor='middle' font-size='12' "
        << "font-family='sans-serif'>" << groups[gi].label << "</text>\n";
  }
  legend(svg, series_labels);
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace flowsqueeze
