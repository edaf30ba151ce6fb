#include "mesa/svgplot.hpp"

#include <algorithm>
#include <cmath>

#include "mesa/csvio.hpp"
#include "mesa/errors.hpp"

namespace mesa::svg {

namespace {

constexpr double kMarginLeft = 64.0;
constexpr double kMarginRight = 16.0;
constexpr double kMarginTop = 30.0;
constexpr double kMarginBottom = 46.0;
constexpr int kTicks = 5;

std::string num(double v) { return csv::format_double(v); }

std::string escape(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
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

// Tick label with limited digits (ticks are guides, not data carriers).
std::string tick_label(double v) {
  const double rounded = std::abs(v) < 1e-12 ? 0.0 : v;
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.4g", rounded);
  return buffer;
}

}  // namespace

double Axes::to_px_x(double x) const { return px + (x - xmin) / (xmax - xmin) * pw; }
double Axes::to_px_y(double y) const { return py + ph - (y - ymin) / (ymax - ymin) * ph; }

Axes compute_axes(const PlotSpec& spec, std::span<const Series> series) {
  if (series.empty()) throw ConfigError("line_chart: needs at least one series");
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
  bool first = true;
  for (const Series& s : series) {
    if (s.x.size() != s.y.size() || (!s.band.empty() && s.band.size() != s.x.size()))
      throw ShapeError("line_chart: series arrays must align");
    if (s.x.empty()) throw ShapeError("line_chart: empty series '" + s.label + "'");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double half = s.band.empty() ? 0.0 : s.band[i];
      const double lo = s.y[i] - half;
      const double hi = s.y[i] + half;
      if (first) {
        xmin = xmax = s.x[i];
        ymin = lo;
        ymax = hi;
        first = false;
      } else {
        xmin = std::min(xmin, s.x[i]);
        xmax = std::max(xmax, s.x[i]);
        ymin = std::min(ymin, lo);
        ymax = std::max(ymax, hi);
      }
    }
  }
  // Pad 5% on every side; degenerate ranges get a unit of slack.
  const double xpad = xmax > xmin ? 0.05 * (xmax - xmin) : 1.0;
  const double ypad = ymax > ymin ? 0.05 * (ymax - ymin) : 1.0;
  Axes axes;
  axes.xmin = xmin - xpad;
  axes.xmax = xmax + xpad;
  axes.ymin = ymin - ypad;
  axes.ymax = ymax + ypad;
  axes.px = kMarginLeft;
  axes.py = kMarginTop;
  axes.pw = spec.width - kMarginLeft - kMarginRight;
  axes.ph = spec.height - kMarginTop - kMarginBottom;
  if (axes.pw <= 0.0 || axes.ph <= 0.0)
    throw ConfigError("line_chart: plot area is not positive");
  return axes;
}

std::string line_chart(const PlotSpec& spec, std::span<const Series> series) {
  const Axes a = compute_axes(spec, series);
  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(spec.width) +
         "\" height=\"" + num(spec.height) + "\" viewBox=\"0 0 " + num(spec.width) + " " +
         num(spec.height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  // Grid lines and tick labels.
  for (int t = 0; t <= kTicks; ++t) {
    const double fx = a.xmin + (a.xmax - a.xmin) * t / kTicks;
    const double fy = a.ymin + (a.ymax - a.ymin) * t / kTicks;
    const double gx = a.to_px_x(fx);
    const double gy = a.to_px_y(fy);
    out += "<line x1=\"" + num(gx) + "\" y1=\"" + num(a.py) + "\" x2=\"" + num(gx) +
           "\" y2=\"" + num(a.py + a.ph) + "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    out += "<line x1=\"" + num(a.px) + "\" y1=\"" + num(gy) + "\" x2=\"" + num(a.px + a.pw) +
           "\" y2=\"" + num(gy) + "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    out += "<text x=\"" + num(gx) + "\" y=\"" + num(a.py + a.ph + 16.0) +
           "\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">" +
           escape(tick_label(fx)) + "</text>\n";
    out += "<text x=\"" + num(a.px - 6.0) + "\" y=\"" + num(gy + 3.0) +
           "\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">" +
           escape(tick_label(fy)) + "</text>\n";
  }

  // Error bands under the lines.
  for (const Series& s : series) {
    if (s.band.empty()) continue;
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i)
      points += num(a.to_px_x(s.x[i])) + "," + num(a.to_px_y(s.y[i] + s.band[i])) + " ";
    for (std::size_t i = s.x.size(); i-- > 0;)
      points += num(a.to_px_x(s.x[i])) + "," + num(a.to_px_y(s.y[i] - s.band[i])) + " ";
    points.pop_back();
    out += "<polygon points=\"" + points + "\" fill=\"" + s.color +
           "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
  }
  for (const Series& s : series) {
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i)
      points += num(a.to_px_x(s.x[i])) + "," + num(a.to_px_y(s.y[i])) + " ";
    points.pop_back();
    out += "<polyline points=\"" + points + "\" fill=\"none\" stroke=\"" + s.color +
           "\" stroke-width=\"1.5\"/>\n";
  }

  // Frame, labels, legend.
  out += "<rect x=\"" + num(a.px) + "\" y=\"" + num(a.py) + "\" width=\"" + num(a.pw) +
         "\" height=\"" + num(a.ph) + "\" fill=\"none\" stroke=\"#333333\"/>\n";
  out += "<text x=\"" + num(spec.width / 2.0) + "\" y=\"18\" font-family=\"monospace\" "
         "font-size=\"13\" text-anchor=\"middle\">" +
         escape(spec.title) + "</text>\n";
  out += "<text x=\"" + num(a.px + a.pw / 2.0) + "\" y=\"" + num(spec.height - 10.0) +
         "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">" +
         escape(spec.x_label) + "</text>\n";
  out += "<text x=\"14\" y=\"" + num(a.py + a.ph / 2.0) +
         "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\" "
         "transform=\"rotate(-90 14 " +
         num(a.py + a.ph / 2.0) + ")\">" + escape(spec.y_label) + "</text>\n";
  double legend_y = a.py + 14.0;
  for (const Series& s : series) {
    const double lx = a.px + a.pw - 150.0;
    out += "<line x1=\"" + num(lx) + "\" y1=\"" + num(legend_y - 4.0) + "\" x2=\"" +
           num(lx + 22.0) + "\" y2=\"" + num(legend_y - 4.0) + "\" stroke=\"" + s.color +
           "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + num(lx + 28.0) + "\" y=\"" + num(legend_y) +
           "\" font-family=\"monospace\" font-size=\"11\">" + escape(s.label) + "</text>\n";
    legend_y += 16.0;
  }
  out += "</svg>\n";
  return out;
}

std::string heatmap_chart(const PlotSpec& spec, std::size_t grid_n,
                          std::span<const double> values) {
  if (grid_n == 0 || values.size() != grid_n * grid_n)
    throw ShapeError("heatmap_chart: values must form a grid_n x grid_n grid");
  const double px = kMarginLeft, py = kMarginTop;
  const double pw = spec.width - kMarginLeft - kMarginRight;
  const double ph = spec.height - kMarginTop - kMarginBottom;
  if (pw <= 0.0 || ph <= 0.0) throw ConfigError("heatmap_chart: plot area is not positive");
  const double cw = pw / static_cast<double>(grid_n);
  const double ch = ph / static_cast<double>(grid_n);

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(spec.width) +
         "\" height=\"" + num(spec.height) + "\" viewBox=\"0 0 " + num(spec.width) + " " +
         num(spec.height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t iy = 0; iy < grid_n; ++iy) {
    for (std::size_t ix = 0; ix < grid_n; ++ix) {
      const double v = std::clamp(values[iy * grid_n + ix], 0.0, 1.0);
      // White at 0 toward dark red at 1.
      const int r = static_cast<int>(std::lround(255.0 - 77.0 * v));
      const int g = static_cast<int>(std::lround(255.0 - 229.0 * v));
      const int b = static_cast<int>(std::lround(255.0 - 229.0 * v));
      const double x = px + static_cast<double>(ix) * cw;
      // Row 0 belongs at the bottom of the chart.
      const double y = py + ph - static_cast<double>(iy + 1) * ch;
      out += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(cw) +
             "\" height=\"" + num(ch) + "\" fill=\"rgb(" + std::to_string(r) + "," +
             std::to_string(g) + "," + std::to_string(b) + ")\"/>\n";
    }
  }
  out += "<rect x=\"" + num(px) + "\" y=\"" + num(py) + "\" width=\"" + num(pw) +
         "\" height=\"" + num(ph) + "\" fill=\"none\" stroke=\"#333333\"/>\n";
  out += "<text x=\"" + num(spec.width / 2.0) + "\" y=\"18\" font-family=\"monospace\" "
         "font-size=\"13\" text-anchor=\"middle\">" +
         escape(spec.title) + "</text>\n";
  out += "</svg>\n";
  return out;
}

}  // namespace mesa::svg
