#include "extruflow/extrusion_dynamics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "extruflow/corner_model.hpp"
#include "extruflow/errors.hpp"

namespace extruflow {

double steady_width(const ExtrusionModel& model, double zeta) { return model.alpha * zeta; }

double time_constant(const ExtrusionModel& model, Regime regime) {
  switch (regime) {
    case Regime::expand: return model.tau_expand;
    case Regime::shrink: return model.tau_shrink;
    case Regime::mixed: return 0.5 * (model.tau_expand + model.tau_shrink);
  }
  return model.tau_expand;
}

StepMatrices step_matrices(const ExtrusionModel& model, double delta_s, Regime regime) {
  const double tau = time_constant(model, regime);
  if (!(delta_s > 0.0)) throw ContractError("step length must be positive");
  if (delta_s >= tau) {
    throw StabilityError(fmt::format("step {} mm is not below tau_{} = {} mm", delta_s,
                                     to_string(regime), tau));
  }
  return {1.0 - delta_s / tau, model.alpha * delta_s / tau};
}

Regime drive_regime(const ExtrusionModel& model, double xi, double w) {
  return model.alpha * xi - w >= 0.0 ? Regime::expand : Regime::shrink;
}

namespace {

// One step in incremental form so that a state already at alpha*xi stays exactly there.
double advance(const ExtrusionModel& model, double w, double drive_ratio, double ds) {
  const Regime regime = drive_regime(model, drive_ratio, w);
  const double tau = time_constant(model, regime);
  if (ds >= tau) {
    throw StabilityError(fmt::format("step {} mm is not below tau_{} = {} mm", ds, to_string(regime), tau));
  }
  const double next = w + (ds / tau) * (model.alpha * drive_ratio - w);
  return std::max(0.0, next);
}

}  // namespace

WidthProfile simulate_plant(const ExtrusionModel& model, const ControlSequence& controls, double w0) {
  model.validate();
  controls.validate();
  if (controls.xi.empty()) throw ContractError("simulate_plant needs at least one control");
  std::vector<WidthSample> samples;
  samples.reserve(controls.size() + 1);
  double x = 0.0;
  double w = std::max(0.0, w0);
  samples.push_back({x, w});
  for (std::size_t k = 0; k < controls.size(); ++k) {
    const double ds = controls.length_of(k);
    w = advance(model, w, controls.xi[k], ds);
    x += ds;
    samples.push_back({x, w});
  }
  return WidthProfile(std::move(samples));
}

WidthProfile simulate_corner_plant(const ExtrusionModel& ext, const CornerModel& corner,
                                   const ControlSequence& controls, const DiscretizedPath& geometry,
                                   double w0, CornerCoupling coupling) {
  ext.validate();
  corner.validate();
  controls.validate();
  if (controls.size() != geometry.segment_count()) {
    throw ContractError(fmt::format("{} controls for {} path segments", controls.size(),
                                    geometry.segment_count()));
  }
  // Input coupling scales what enters the filter over a segment; output coupling is a static
  // map of the width at the sample point.
  const std::vector<double> speed = coupling == CornerCoupling::input ? segment_speeds(corner, geometry)
                                                                      : segment_end_speeds(corner, geometry);
  const double floor_speed = kSpeedFloorFraction * corner.v_const;
  std::vector<WidthSample> samples;
  samples.reserve(controls.size() + 1);
  double x = 0.0;
  double w = std::max(0.0, w0);
  samples.push_back({x, w});
  for (std::size_t k = 0; k < controls.size(); ++k) {
    const double ds = geometry.segment_lengths[k];
    const double amplification = corner.v_const / std::max(speed[k], floor_speed);
    x += ds;
    if (coupling == CornerCoupling::input) {
      w = advance(ext, w, controls.xi[k] * amplification, ds);
      samples.push_back({x, w});
    } else {
      w = advance(ext, w, controls.xi[k], ds);
      samples.push_back({x, w * amplification});
    }
  }
  return WidthProfile(std::move(samples));
}

}  // namespace extruflow
