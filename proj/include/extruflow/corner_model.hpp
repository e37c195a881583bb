#pragma once

#include <vector>

#include "extruflow/models.hpp"
#include "extruflow/path_model.hpp"

namespace extruflow {

/// Predicted width x mm into the deceleration zone at constant extrusion speed.
/// Domain 0 <= x < d_tr; throws DomainError otherwise.
double decel_width(const CornerModel& model, double w_nominal, double x);

/// Predicted width x mm after a corner while the head accelerates. Domain 0 < x <= d_tr.
double accel_width(const CornerModel& model, double w_nominal, double x);

/// Motion speed at distance s into a line of length `length` that starts and ends at rest:
/// min(v_const, sqrt(2 a s), sqrt(2 a (length - s))).
double line_speed(const CornerModel& model, double length, double s);

/// Speed at every segment midpoint of a discretized path (mm/s).
std::vector<double> segment_speeds(const CornerModel& model, const DiscretizedPath& path);

/// Speed at every segment end (mm/s); a segment that ends a line ends at rest.
std::vector<double> segment_end_speeds(const CornerModel& model, const DiscretizedPath& path);

enum class ReferenceStage { initial_trim, ramp_up, constant, ramp_down, final_trim };

struct ReferencePoint {
  double value = 0.0;
  ReferenceStage stage = ReferenceStage::constant;
};

/// Five-stage compensated width at position x of a line of length `length`.
/// Lines shorter than 2*d_tr cut both ramps at their intersection (x = length/2);
/// lines no longer than w_nominal are trimmed entirely.
ReferencePoint reference_value(const CornerModel& model, double length, double w_nominal, double x);

/// Target width per segment of a DiscretizedPath, sampled at segment midpoints.
struct WidthReference {
  std::vector<double> target;  // mm, one per segment
  std::vector<double> x;       // arc length of each midpoint, mm
  std::vector<ReferenceStage> stage;
  double nominal = 0.0;

  std::size_t size() const { return target.size(); }
};

/// Applies the five-stage profile to every line span and concatenates the results.
WidthReference build_reference(const ExtrusionModel& ext, const CornerModel& corner,
                               const DiscretizedPath& path, double w_nominal);

/// Reference without corner dynamics: trims at both ends of every line, nominal between.
WidthReference build_trim_reference(const DiscretizedPath& path, double w_nominal);

}  // namespace extruflow
