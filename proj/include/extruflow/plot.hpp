#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "extruflow/profile.hpp"

namespace extruflow {

using Rgb = std::array<std::uint8_t, 3>;

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // row-major RGB

  RgbImage() = default;
  RgbImage(int w, int h, Rgb fill);
  void set(int x, int y, Rgb c);
  Rgb get(int x, int y) const;
};

void save_png(const std::string& path, const RgbImage& image);

struct PlotSeries {
  std::string label;
  WidthProfile profile;
  bool dashed = false;
};

struct PlotBounds {
  double x0 = 0.0;
  double x1 = 1.0;
  double y0 = 0.0;
  double y1 = 1.0;
};

/// Range covering every sample of every series, padded by 5% in y.
PlotBounds autoscale(std::span<const PlotSeries> series);

/// Fixed palette; series i is drawn in color i modulo its size.
const std::vector<Rgb>& plot_palette();

struct PlotLayout {
  int width = 900;
  int height = 420;
  int margin_left = 60;
  int margin_right = 20;
  int margin_top = 20;
  int margin_bottom = 40;
};

/// Line plot with axes, tick labels and a legend of colored swatches (order = series order).
/// Throws DataError if any series is empty.
RgbImage render_plot(std::span<const PlotSeries> series, const PlotLayout& layout = {});

}  // namespace extruflow
