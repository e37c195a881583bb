#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "extruflow/vision.hpp"

namespace extruflow {

/// Straight bead along +x in board millimetres; y is the bead centre.
struct SceneLine {
  double x0 = 0.0;
  double y = 0.0;
  double length = 30.0;
  double width = 0.68;
};

/// Synthetic photo content: a checkerboard whose inner corner (0, 0) sits at the
/// board origin, a light quiet zone around it, and light beads on a dark bed.
struct Scene {
  BoardSpec board;
  std::vector<SceneLine> lines;
  double bed = 0.15;
  double bead = 0.85;
  double dark_square = 0.05;
  double light_square = 0.95;
  double min_x = -10.0;  // visible extent, board mm
  double min_y = -10.0;
  double max_x = 80.0;
  double max_y = 40.0;

  double intensity(double x, double y) const;
};

struct Camera {
  Eigen::Matrix3d board_to_image = Eigen::Matrix3d::Identity();
  int width = 0;
  int height = 0;
};

/// Pinhole view of the board plane tilted by `tilt_deg` about the board x axis,
/// scaled to `px_per_mm` at the scene centre and framed to the visible extent.
Camera tilted_camera(const Scene& scene, double tilt_deg, double px_per_mm, double rotate_deg = 0.0);

struct RenderOptions {
  int supersample = 4;
  double blur_sigma_px = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;
  bool quantize = true;  // round to 8-bit levels
};

GrayImage render_scene(const Scene& scene, const Camera& camera, const RenderOptions& options = {});

}  // namespace extruflow
