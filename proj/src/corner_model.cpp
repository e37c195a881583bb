#include "extruflow/corner_model.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "extruflow/errors.hpp"

namespace extruflow {

double decel_width(const CornerModel& model, double w_nominal, double x) {
  model.validate();
  const double d_tr = model.d_tr();
  if (!(x >= 0.0) || !(x < d_tr)) {
    throw DomainError(fmt::format("deceleration distance {} outside [0, d_tr={})", x, d_tr));
  }
  const double v = model.v_const;
  return v / std::sqrt(v * v - 2.0 * model.decel * x) * w_nominal;
}

double accel_width(const CornerModel& model, double w_nominal, double x) {
  model.validate();
  const double d_tr = model.d_tr();
  if (!(x > 0.0) || !(x <= d_tr)) {
    throw DomainError(fmt::format("acceleration distance {} outside (0, d_tr={}]", x, d_tr));
  }
  return model.v_const / std::sqrt(2.0 * model.decel * x) * w_nominal;
}

double line_speed(const CornerModel& model, double length, double s) {
  const double from_start = std::sqrt(2.0 * model.decel * std::max(0.0, s));
  const double to_end = std::sqrt(2.0 * model.decel * std::max(0.0, length - s));
  return std::min({model.v_const, from_start, to_end});
}

std::vector<double> segment_speeds(const CornerModel& model, const DiscretizedPath& path) {
  std::vector<double> speed(path.segment_count(), model.v_const);
  for (const LineSpan& span : path.line_spans) {
    double s = 0.0;
    for (std::size_t k = span.start_index; k < span.end_index; ++k) {
      const double mid = s + 0.5 * path.segment_lengths[k];
      speed[k] = line_speed(model, span.length, mid);
      s += path.segment_lengths[k];
    }
  }
  return speed;
}

std::vector<double> segment_end_speeds(const CornerModel& model, const DiscretizedPath& path) {
  std::vector<double> speed(path.segment_count(), model.v_const);
  for (const LineSpan& span : path.line_spans) {
    double s = 0.0;
    for (std::size_t k = span.start_index; k < span.end_index; ++k) {
      s += path.segment_lengths[k];
      speed[k] = k + 1 == span.end_index ? 0.0 : line_speed(model, span.length, s);
    }
  }
  return speed;
}

ReferencePoint reference_value(const CornerModel& model, double length, double w_nominal, double x) {
  const double v = model.v_const;
  const double a = model.decel;
  const double d_tr = model.d_tr();
  const double half_w = 0.5 * w_nominal;
  if (length <= w_nominal) return {0.0, x <= 0.5 * length ? ReferenceStage::initial_trim : ReferenceStage::final_trim};
  if (x <= half_w) return {0.0, ReferenceStage::initial_trim};
  if (x > length - half_w) return {0.0, ReferenceStage::final_trim};
  if (length < 2.0 * d_tr) {
    // Ramps meet at the midpoint; both sides use the same magnitude a.
    if (x <= 0.5 * length) return {std::sqrt(2.0 * a * x) / v * w_nominal, ReferenceStage::ramp_up};
    return {std::sqrt(2.0 * a * (length - x)) / v * w_nominal, ReferenceStage::ramp_down};
  }
  if (x < d_tr) return {std::sqrt(2.0 * a * x) / v * w_nominal, ReferenceStage::ramp_up};
  if (x <= length - d_tr) return {w_nominal, ReferenceStage::constant};
  const double radicand = v * v - 2.0 * a * (x - (length - d_tr));
  return {std::sqrt(std::max(0.0, radicand)) / v * w_nominal, ReferenceStage::ramp_down};
}

WidthReference build_reference(const ExtrusionModel& ext, const CornerModel& corner,
                               const DiscretizedPath& path, double w_nominal) {
  ext.validate();
  corner.validate();
  if (!(w_nominal > 0.0)) throw ContractError("nominal width must be positive");
  WidthReference ref;
  ref.nominal = w_nominal;
  ref.target.reserve(path.segment_count());
  double offset = 0.0;
  for (const LineSpan& span : path.line_spans) {
    double s = 0.0;
    for (std::size_t k = span.start_index; k < span.end_index; ++k) {
      const double mid = s + 0.5 * path.segment_lengths[k];
      const ReferencePoint p = reference_value(corner, span.length, w_nominal, mid);
      ref.target.push_back(std::min(p.value, w_nominal));
      ref.stage.push_back(p.stage);
      ref.x.push_back(offset + mid);
      s += path.segment_lengths[k];
    }
    offset += span.length;
  }
  return ref;
}

WidthReference build_trim_reference(const DiscretizedPath& path, double w_nominal) {
  if (!(w_nominal > 0.0)) throw ContractError("nominal width must be positive");
  WidthReference ref;
  ref.nominal = w_nominal;
  const double half_w = 0.5 * w_nominal;
  double offset = 0.0;
  for (const LineSpan& span : path.line_spans) {
    double s = 0.0;
    for (std::size_t k = span.start_index; k < span.end_index; ++k) {
      const double x = s + 0.5 * path.segment_lengths[k];
      ReferenceStage stage = ReferenceStage::constant;
      if (span.length <= w_nominal) {
        stage = x <= 0.5 * span.length ? ReferenceStage::initial_trim : ReferenceStage::final_trim;
      } else if (x <= half_w) {
        stage = ReferenceStage::initial_trim;
      } else if (x > span.length - half_w) {
        stage = ReferenceStage::final_trim;
      }
      ref.target.push_back(stage == ReferenceStage::constant ? w_nominal : 0.0);
      ref.stage.push_back(stage);
      ref.x.push_back(offset + x);
      s += path.segment_lengths[k];
    }
    offset += span.length;
  }
  return ref;
}

}  // namespace extruflow
