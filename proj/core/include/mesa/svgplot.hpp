#pragma once

// Deterministic SVG rendering for learning curves (with standard-error
// bands) and critic heatmaps. Output is a pure function of the inputs:
// identical data yields byte-identical SVG.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mesa::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> band;  // optional half-widths per point (empty = none)
  std::string color = "#1f77b4";
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  double width = 640.0;
  double height = 420.0;
};

// Linear data-to-pixel mapping used by line_chart; exposed so tests and
// tooling can invert coordinates read back from the SVG.
struct Axes {
  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;  // padded data range
  double px = 0.0, py = 0.0, pw = 0.0, ph = 0.0;          // plot rect (pixels)

  double to_px_x(double x) const;
  double to_px_y(double y) const;  // pixel y grows downward
};

Axes compute_axes(const PlotSpec& spec, std::span<const Series> series);

std::string line_chart(const PlotSpec& spec, std::span<const Series> series);

// Row-major grid (y slow, row 0 drawn at the bottom) with a white-to-red
// map; values are clamped to [0, 1].
std::string heatmap_chart(const PlotSpec& spec, std::size_t grid_n,
                          std::span<const double> values);

}  // namespace mesa::svg
