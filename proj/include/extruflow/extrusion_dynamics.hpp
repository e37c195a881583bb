#pragma once

#include "extruflow/models.hpp"
#include "extruflow/path_model.hpp"
#include "extruflow/profile.hpp"

namespace extruflow {

/// w = alpha * zeta. No range check: zeta outside [xi_low, xi_high] is still evaluated.
double steady_width(const ExtrusionModel& model, double zeta);

/// tau_expand, tau_shrink or their mean for Regime::mixed.
double time_constant(const ExtrusionModel& model, Regime regime);

struct StepMatrices {
  double a = 0.0;
  double b = 0.0;
};

/// Explicit discretization of dw/dx = (alpha*xi - w)/tau over one step:
/// a = 1 - ds/tau, b = alpha*ds/tau. Throws StabilityError when ds >= tau.
StepMatrices step_matrices(const ExtrusionModel& model, double delta_s, Regime regime);

/// Regime the plant uses for one step: the sign of the drive alpha*xi - w.
Regime drive_regime(const ExtrusionModel& model, double xi, double w);

/// Iterates the width recursion with the drive-direction regime per step and
/// clamps width at zero. Samples are (x_k, w_k) for k = 0..N with x_0 = 0.
WidthProfile simulate_plant(const ExtrusionModel& model, const ControlSequence& controls, double w0);

/// Corner-aware virtual printer: the commanded ratio of each segment is scaled by
/// v_const / v(x) for the trapezoidal speed profile of its line span (v floored at
/// 2% of v_const), then filtered by the same width recursion.
///
/// CornerCoupling::output is an alternative reading of the same physics: the ratio is
/// filtered first (extruder flow lag) and the speed factor scales the filtered width.
enum class CornerCoupling { input, output };

WidthProfile simulate_corner_plant(const ExtrusionModel& ext, const CornerModel& corner,
                                   const ControlSequence& controls, const DiscretizedPath& geometry,
                                   double w0 = 0.0, CornerCoupling coupling = CornerCoupling::input);

inline constexpr double kSpeedFloorFraction = 0.02;

}  // namespace extruflow
