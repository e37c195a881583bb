#include "extruflow/path_model.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "extruflow/errors.hpp"

namespace extruflow {

double DiscretizedPath::arc_length() const {
  double total = 0.0;
  for (double l : segment_lengths) total += l;
  return total;
}

std::vector<double> DiscretizedPath::point_arc_lengths() const {
  std::vector<double> s(points.size(), 0.0);
  for (std::size_t k = 0; k < segment_lengths.size(); ++k) s[k + 1] = s[k] + segment_lengths[k];
  return s;
}

namespace {

bool z_only(const GMove& m) {
  return m.start.x == m.target.x && m.start.y == m.target.y && m.start.z != m.target.z;
}

}  // namespace

std::vector<PrintRegion> print_regions(const ToolPath& path) {
  std::vector<PrintRegion> regions;
  PrintRegion current;
  auto flush = [&] {
    if (!current.move_indices.empty()) {
      current.closed = current.vertices.size() > 3 && current.vertices.front() == current.vertices.back();
      regions.push_back(std::move(current));
    }
    current = PrintRegion{};
  };
  for (std::size_t i = 0; i < path.moves.size(); ++i) {
    const GMove& m = path.moves[i];
    if (m.kind != MoveKind::print || z_only(m)) {
      flush();
      continue;
    }
    if (current.vertices.empty()) current.vertices.push_back(m.start);
    current.move_indices.push_back(i);
    current.vertices.push_back(m.target);
  }
  flush();
  return regions;
}

std::vector<std::size_t> detect_corners(std::span<const Vec3> vertices, double threshold_deg) {
  if (!(threshold_deg > 0.0 && threshold_deg < 180.0)) {
    throw ContractError(fmt::format("corner threshold {} deg outside (0, 180)", threshold_deg));
  }
  std::vector<std::size_t> corners;
  const std::size_t n = vertices.size();
  if (n < 3) return corners;
  const bool closed = n > 3 && vertices.front() == vertices.back();
  if (closed && turn_angle_deg(vertices[n - 1] - vertices[n - 2], vertices[1] - vertices[0]) >= threshold_deg) {
    corners.push_back(0);
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (turn_angle_deg(vertices[i] - vertices[i - 1], vertices[i + 1] - vertices[i]) >= threshold_deg) {
      corners.push_back(i);
    }
  }
  return corners;
}

std::vector<std::size_t> detect_corners(const ToolPath& path, double threshold_deg) {
  std::vector<std::size_t> out;
  for (const auto& region : print_regions(path)) {
    for (std::size_t v : detect_corners(region.vertices, threshold_deg)) {
      // Vertex v is the end of move v-1; the seam (v == 0) is the end of the last move.
      out.push_back(v == 0 ? region.move_indices.back() : region.move_indices[v - 1]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

DiscretizedPath discretize(std::span<const Vec3> vertices, double step, double corner_threshold_deg) {
  if (!(step > 0.0) || !std::isfinite(step)) throw ContractError("discretization step must be positive");
  if (vertices.size() < 2) throw ContractError("discretize needs at least one line");

  // Drop repeated vertices so every edge has a direction.
  std::vector<Vec3> verts;
  std::vector<std::size_t> source_edge;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const Vec3& v = vertices[i];
    if (!is_finite(v)) throw ContractError("non-finite vertex");
    if (verts.empty() || !(verts.back() == v)) {
      if (!verts.empty()) source_edge.push_back(i - 1);
      verts.push_back(v);
    }
  }
  if (verts.size() < 2) throw ContractError("discretize needs a line of nonzero length");

  DiscretizedPath out;
  out.step = step;
  out.points.push_back(verts.front());
  std::vector<std::size_t> vertex_point_index{0};
  for (std::size_t e = 0; e + 1 < verts.size(); ++e) {
    const Vec3 a = verts[e];
    const Vec3 b = verts[e + 1];
    const double len = distance(a, b);
    const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(len / step - 1e-9)));
    const Vec3 dir = (1.0 / len) * (b - a);
    for (std::size_t k = 1; k < n; ++k) {
      out.points.push_back(a + (static_cast<double>(k) * step) * dir);
      out.segment_lengths.push_back(step);
    }
    out.points.push_back(b);
    out.segment_lengths.push_back(len - static_cast<double>(n - 1) * step);
    out.segment_edge.insert(out.segment_edge.end(), n, source_edge[e]);
    vertex_point_index.push_back(out.points.size() - 1);
  }

  for (std::size_t v : detect_corners(verts, corner_threshold_deg)) {
    if (v != 0) out.corner_indices.push_back(vertex_point_index[v]);
  }

  std::vector<std::size_t> bounds{0};
  bounds.insert(bounds.end(), out.corner_indices.begin(), out.corner_indices.end());
  bounds.push_back(out.points.size() - 1);
  for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
    LineSpan span{bounds[i], bounds[i + 1], 0.0};
    for (std::size_t k = span.start_index; k < span.end_index; ++k) span.length += out.segment_lengths[k];
    if (span.length < step) {
      out.warnings.push_back(fmt::format("line of {:.4f} mm is shorter than the step {:.4f} mm",
                                         span.length, step));
    }
    out.line_spans.push_back(span);
  }
  return out;
}

std::vector<DiscretizedPath> discretize(const ToolPath& path, double step, double corner_threshold_deg) {
  if (path.print_move_count() == 0) throw ContractError("tool path has no print moves");
  std::vector<DiscretizedPath> out;
  for (const auto& region : print_regions(path)) {
    out.push_back(discretize(region.vertices, step, corner_threshold_deg));
  }
  return out;
}

}  // namespace extruflow
