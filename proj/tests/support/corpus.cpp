#include "corpus.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "extruflow/gcode_io.hpp"

namespace extruflow::testing {

namespace {

std::string xyz(double x, double y) { return fmt::format("X{:.3f} Y{:.3f}", x, y); }

// Absolute E, 3 layers of a 20 mm square with retraction between layers.
std::string square_tower() {
  std::string g = ";FLAVOR:Marlin\n;Generated for testing\nM104 S210\nM109 S210\nG21\nG90\nM82\nG92 E0\n";
  const double xi = 0.04;
  double e = 0.0;
  for (int layer = 0; layer < 3; ++layer) {
    const double z = 0.2 + 0.2 * layer;
    g += fmt::format(";LAYER:{}\n", layer);
    g += fmt::format("G0 F7200 {} Z{:.3f}\n", xyz(40, 40), z);
    if (layer > 0) g += fmt::format("G1 F2400 E{:.5f}\n", e);  // unretract
    g += ";TYPE:WALL-OUTER\nG1 F3600\n";
    const double pts[4][2] = {{60, 40}, {60, 60}, {40, 60}, {40, 40}};
    double px = 40, py = 40;
    for (int i = 0; i < 4; ++i) {
      e += xi * std::hypot(pts[i][0] - px, pts[i][1] - py);
      g += fmt::format("G1 {} E{:.5f}\n", xyz(pts[i][0], pts[i][1]), e);
      px = pts[i][0];
      py = pts[i][1];
    }
    g += fmt::format("G1 F2400 E{:.5f}\n", e - 0.8);  // retract
    g += "M106 S255\n";
  }
  g += "M107\nM104 S0\n;End of Gcode\n";
  return g;
}

// Relative E serpentine infill: 90-degree turns joined by short connectors.
std::string zigzag() {
  std::string g = "; zigzag infill\nG90\nM83\nG0 X10 Y10 Z0.2 F6000\nG1 F3000\n";
  const double xi = 0.035;
  double x = 10, y = 10;
  for (int row = 0; row < 6; ++row) {
    const double nx = row % 2 == 0 ? 40.0 : 10.0;
    g += fmt::format("G1 {} E{:.5f}\n", xyz(nx, y), xi * std::abs(nx - x));
    x = nx;
    if (row < 5) {
      y += 3.0;
      g += fmt::format("G1 {} E{:.5f}\n", xyz(x, y), xi * 3.0);
    }
  }
  g += "; end\n";
  return g;
}

std::string straight_lines() {
  std::string g = "G90\nM83\n; straight lines, no corners\n";
  for (int i = 0; i < 3; ++i) {
    const double y = 10.0 + 5.0 * i;
    g += fmt::format("G0 X10 Y{:.1f} Z0.2 F6000\n", y);
    g += fmt::format("G1 X45 Y{:.1f} E{:.5f} F3600\n", y, 0.04 * 35.0);
    g += "M117 line done\n";
  }
  return g;
}

std::string hexagon() {
  std::string g = "G90\nM83\n;TYPE:WALL-OUTER\nG0 X30 Y20 Z0.2 F6000\nG1 F2700\n";
  double px = 30, py = 20;
  for (int i = 1; i <= 6; ++i) {
    const double t = i * std::numbers::pi / 3.0;
    const double x = 20.0 + 10.0 * std::cos(t);
    const double y = 20.0 + 10.0 * std::sin(t);
    g += fmt::format("G1 {} E{:.5f}\n", xyz(x, y), 0.045 * std::hypot(x - px, y - py));
    px = x;
    py = y;
  }
  return g;
}

}  // namespace

ModelFile reference_model() {
  ModelFile m;
  m.extrusion = {16.98, 37.81, 8.80};
  m.corner = CornerModel{66.0, 406.0};
  return m;
}

std::vector<CorpusFile> generated_corpus(const ModelFile& model) {
  std::vector<CorpusFile> out;
  out.push_back({"square_tower.gcode", square_tower(), true});
  out.push_back({"zigzag.gcode", zigzag(), true});
  out.push_back({"straight_lines.gcode", straight_lines(), false});
  out.push_back({"hexagon.gcode", hexagon(), true});
  const ToolPath ext = generate_extrusion_pattern(0.03, 0.05, 3600.0);
  out.push_back({"extrusion_pattern.gcode", format_toolpath(ext, ext.extrusion_mode), false});
  const double zeta = 0.04;
  const ToolPath corner = generate_corner_pattern(zeta, 3600.0, {}, model.corner.value_or(CornerModel{}));
  out.push_back({"corner_pattern.gcode", format_toolpath(corner, corner.extrusion_mode), true});
  return out;
}

}  // namespace extruflow::testing
