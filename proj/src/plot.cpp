#include "extruflow/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <png.h>

#include "extruflow/errors.hpp"

namespace extruflow {

namespace {

constexpr Rgb kWhite{255, 255, 255};
constexpr Rgb kBlack{0, 0, 0};
constexpr Rgb kGrid{225, 225, 225};

// 3x5 glyphs, one row per byte (low 3 bits, MSB left).
const std::array<std::uint8_t, 5>* glyph(char c) {
  static const std::array<std::uint8_t, 5> digits[10] = {
      {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
      {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7}};
  static const std::array<std::uint8_t, 5> dot{0, 0, 0, 0, 2};
  static const std::array<std::uint8_t, 5> minus{0, 0, 7, 0, 0};
  if (c >= '0' && c <= '9') return &digits[c - '0'];
  if (c == '.') return &dot;
  if (c == '-') return &minus;
  return nullptr;
}

void draw_text(RgbImage& img, int x, int y, const std::string& s, Rgb color, int scale = 2) {
  for (char c : s) {
    if (const auto* g = glyph(c)) {
      for (int r = 0; r < 5; ++r) {
        for (int col = 0; col < 3; ++col) {
          if (!((*g)[r] >> (2 - col) & 1)) continue;
          for (int dy = 0; dy < scale; ++dy) {
            for (int dx = 0; dx < scale; ++dx) img.set(x + col * scale + dx, y + r * scale + dy, color);
          }
        }
      }
    }
    x += 4 * scale;
  }
}

int text_width(const std::string& s, int scale = 2) { return static_cast<int>(s.size()) * 4 * scale - scale; }

void draw_line(RgbImage& img, double x0, double y0, double x1, double y1, Rgb color, bool dashed,
               double& dash_phase) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int n = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    const double phase = dash_phase + t * len;
    if (dashed && std::fmod(phase, 12.0) >= 7.0) continue;
    const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
    const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
    img.set(x, y, color);
    img.set(x, y + 1, color);
  }
  dash_phase += len;
}

// 1, 2 or 5 times a power of ten, giving about `target` intervals.
double nice_step(double range, int target) {
  const double raw = range / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10.0 * mag;
}

std::string tick_label(double v, double step) {
  const int decimals = std::max(0, static_cast<int>(-std::floor(std::log10(step) + 1e-9)));
  std::string s = fmt::format("{:.{}f}", v, decimals);
  if (s == "-0" || s.find_first_not_of("-0.") == std::string::npos) s = std::string(s.size() - (s[0] == '-'), '0');
  if (s.find('.') != std::string::npos && std::stod(s) == 0.0) s = fmt::format("{:.{}f}", 0.0, decimals);
  return s;
}

}  // namespace

RgbImage::RgbImage(int w, int h, Rgb fill) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3) {
  for (std::size_t i = 0; i < data.size(); i += 3) std::copy(fill.begin(), fill.end(), data.begin() + i);
}

void RgbImage::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  std::copy(c.begin(), c.end(), data.begin() + (static_cast<std::size_t>(y) * width + x) * 3);
}

Rgb RgbImage::get(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {data[i], data[i + 1], data[i + 2]};
}

void save_png(const std::string& path, const RgbImage& image) {
  png_image out{};
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(image.width);
  out.height = static_cast<png_uint_32>(image.height);
  out.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&out, path.c_str(), 0, image.data.data(), 0, nullptr)) {
    throw DataError(fmt::format("{}: {}", path, out.message));
  }
}

const std::vector<Rgb>& plot_palette() {
  static const std::vector<Rgb> p{{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {255, 127, 14}, {148, 103, 189}, {23, 190, 207}};
  return p;
}

PlotBounds autoscale(std::span<const PlotSeries> series) {
  PlotBounds b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
               std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const PlotSeries& s : series) {
    if (s.profile.empty()) throw DataError(fmt::format("series '{}' has no samples", s.label));
    for (const auto& p : s.profile.samples()) {
      b.x0 = std::min(b.x0, p.x);
      b.x1 = std::max(b.x1, p.x);
      b.y0 = std::min(b.y0, p.w);
      b.y1 = std::max(b.y1, p.w);
    }
  }
  if (series.empty()) throw DataError("nothing to plot");
  if (b.x1 <= b.x0) b.x1 = b.x0 + 1.0;
  const double pad = b.y1 > b.y0 ? 0.05 * (b.y1 - b.y0) : std::max(0.05 * std::abs(b.y0), 0.05);
  b.y0 -= pad;
  b.y1 += pad;
  return b;
}

RgbImage render_plot(std::span<const PlotSeries> series, const PlotLayout& layout) {
  const PlotBounds b = autoscale(series);
  RgbImage img(layout.width, layout.height, kWhite);
  const int left = layout.margin_left;
  const int right = layout.width - layout.margin_right;
  const int top = layout.margin_top;
  const int bottom = layout.height - layout.margin_bottom;
  const auto px = [&](double x) { return left + (x - b.x0) / (b.x1 - b.x0) * (right - left); };
  const auto py = [&](double y) { return bottom - (y - b.y0) / (b.y1 - b.y0) * (bottom - top); };

  double phase = 0.0;
  const double xs = nice_step(b.x1 - b.x0, 8);
  for (double t = std::ceil(b.x0 / xs) * xs; t <= b.x1 + 1e-9 * xs; t += xs) {
    const double x = px(t);
    draw_line(img, x, top, x, bottom, kGrid, false, phase);
    const std::string label = tick_label(t, xs);
    draw_text(img, static_cast<int>(x) - text_width(label) / 2, bottom + 8, label, kBlack);
  }
  const double ys = nice_step(b.y1 - b.y0, 6);
  for (double t = std::ceil(b.y0 / ys) * ys; t <= b.y1 + 1e-9 * ys; t += ys) {
    const double y = py(t);
    draw_line(img, left, y, right, y, kGrid, false, phase);
    const std::string label = tick_label(t, ys);
    draw_text(img, left - 6 - text_width(label), static_cast<int>(y) - 5, label, kBlack);
  }
  draw_line(img, left, bottom, right, bottom, kBlack, false, phase);
  draw_line(img, left, top, left, bottom, kBlack, false, phase);

  const auto& palette = plot_palette();
  for (std::size_t i = 0; i < series.size(); ++i) {
    const Rgb color = palette[i % palette.size()];
    const auto& s = series[i].profile.samples();
    phase = 0.0;
    if (s.size() == 1) img.set(static_cast<int>(px(s[0].x)), static_cast<int>(py(s[0].w)), color);
    for (std::size_t k = 1; k < s.size(); ++k) {
      draw_line(img, px(s[k - 1].x), py(s[k - 1].w), px(s[k].x), py(s[k].w), color, series[i].dashed, phase);
    }
    // Legend swatch, top right, one row per series.
    const int ly = top + 6 + static_cast<int>(i) * 14;
    for (int dy = 0; dy < 8; ++dy) {
      for (int dx = 0; dx < 24; ++dx) img.set(right - 30 + dx, ly + dy, color);
    }
  }
  return img;
}

}  // namespace extruflow
