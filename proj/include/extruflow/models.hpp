#pragma once

namespace extruflow {

/// Steady-state width law plus asymmetric first-order spatial dynamics.
struct ExtrusionModel {
  double alpha = 16.98;      // mm of width per unit velocity ratio
  double tau_expand = 37.81;  // mm, for rising width
  double tau_shrink = 8.80;   // mm, for falling width
  double xi_low = 0.03;
  double xi_high = 0.05;

  /// Throws ContractError when a field violates its invariant.
  void validate() const;
};

/// Corner kinematics: cruise speed and the shared accel/decel magnitude.
struct CornerModel {
  double v_const = 66.0;  // mm/s
  double decel = 406.0;   // mm/s^2

  /// Transient distance v^2 / (2a), mm.
  double d_tr() const { return v_const * v_const / (2.0 * decel); }
  void validate() const;
};

enum class Regime { expand, shrink, mixed };

const char* to_string(Regime r);

}  // namespace extruflow
