#include "extruflow/models.hpp"

#include <cmath>

#include <fmt/format.h>

#include "extruflow/errors.hpp"

namespace extruflow {

void ExtrusionModel::validate() const {
  const bool finite = std::isfinite(alpha) && std::isfinite(tau_expand) && std::isfinite(tau_shrink) &&
                      std::isfinite(xi_low) && std::isfinite(xi_high);
  if (!finite) throw ContractError("extrusion model has non-finite parameters");
  if (!(alpha > 0.0)) throw ContractError(fmt::format("alpha must be positive (got {})", alpha));
  if (!(tau_expand > 0.0) || !(tau_shrink > 0.0)) {
    throw ContractError(fmt::format("time constants must be positive (got {}, {})", tau_expand, tau_shrink));
  }
  if (!(xi_low < xi_high)) {
    throw ContractError(fmt::format("xi_low {} must be below xi_high {}", xi_low, xi_high));
  }
}

void CornerModel::validate() const {
  if (!(v_const > 0.0) || !std::isfinite(v_const)) {
    throw ContractError(fmt::format("corner speed must be positive (got {})", v_const));
  }
  if (!(decel > 0.0) || !std::isfinite(decel)) {
    throw ContractError(fmt::format("corner deceleration must be positive (got {})", decel));
  }
}

const char* to_string(Regime r) {
  switch (r) {
    case Regime::expand: return "expand";
    case Regime::shrink: return "shrink";
    case Regime::mixed: return "mixed";
  }
  return "?";
}

}  // namespace extruflow
