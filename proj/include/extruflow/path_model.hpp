#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "extruflow/gcode_io.hpp"
#include "extruflow/geometry.hpp"

namespace extruflow {

inline constexpr double kDefaultCornerThresholdDeg = 30.0;
inline constexpr double kDefaultStep = 0.1;

/// Straight stretch between two corners (or region endpoints), by point index.
struct LineSpan {
  std::size_t start_index = 0;
  std::size_t end_index = 0;
  double length = 0.0;  // mm

  std::size_t segment_count() const { return end_index - start_index; }
};

/// A connected print polyline resampled at spacing `step`.
struct DiscretizedPath {
  std::vector<Vec3> points;
  double step = kDefaultStep;
  std::vector<double> segment_lengths;     // points.size() - 1 entries
  std::vector<std::size_t> corner_indices;  // interior point indices, strictly increasing
  std::vector<LineSpan> line_spans;
  std::vector<std::size_t> segment_edge;    // input edge (vertex i -> i+1) of each segment
  std::vector<std::string> warnings;

  std::size_t segment_count() const { return segment_lengths.size(); }
  double arc_length() const;
  /// Arc length at point i.
  std::vector<double> point_arc_lengths() const;
};

/// Maximal run of consecutive print moves of a ToolPath.
struct PrintRegion {
  std::vector<std::size_t> move_indices;
  std::vector<Vec3> vertices;  // move_indices.size() + 1 points
  bool closed = false;
};

/// Splits a ToolPath into print regions. Travel moves, in-place extrusion and
/// Z-only print moves end a region; Z-only moves belong to no region.
std::vector<PrintRegion> print_regions(const ToolPath& path);

/// Interior vertices whose turn angle is at least `threshold_deg`. For a closed
/// polyline the seam vertex (index 0) is reported too when it is sharp.
std::vector<std::size_t> detect_corners(std::span<const Vec3> vertices, double threshold_deg);

/// Corners of every print region, as indices of the move that ends at the corner.
std::vector<std::size_t> detect_corners(const ToolPath& path, double threshold_deg);

/// Subdivides each edge into ceil(L/step) segments, the last one carrying the remainder.
DiscretizedPath discretize(std::span<const Vec3> vertices, double step,
                           double corner_threshold_deg = kDefaultCornerThresholdDeg);

/// One DiscretizedPath per print region. Throws ContractError without print moves.
std::vector<DiscretizedPath> discretize(const ToolPath& path, double step,
                                        double corner_threshold_deg = kDefaultCornerThresholdDeg);

}  // namespace extruflow
