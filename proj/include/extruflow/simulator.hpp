#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "extruflow/extrusion_dynamics.hpp"
#include "extruflow/gcode_io.hpp"
#include "extruflow/models.hpp"
#include "extruflow/path_model.hpp"
#include "extruflow/profile.hpp"

namespace extruflow {

/// How the width entering each print region is chosen.
///   primed:  w0 = alpha * xi of the first segment (a measured line already in steady state)
///   chained: 0 for the first region, then the last width of the previous region
/// Width entering each print region: primed at the steady width of its first command,
/// at the nominal width, or chained from the previous region (0 for the first).
enum class InitialWidth { primed, nominal, chained };

struct SimulationOptions {
  double step = kDefaultStep;
  InitialWidth initial = InitialWidth::chained;
  double nominal_width = 0.0;  // mm, for InitialWidth::nominal
  double corner_threshold_deg = kDefaultCornerThresholdDeg;
  CornerCoupling coupling = CornerCoupling::input;
};

struct RegionSimulation {
  DiscretizedPath path;
  ControlSequence controls;
  WidthProfile width;
};

/// Extrusion ratio of every discretized segment of a region: E / length of the source move.
ControlSequence region_controls(const ToolPath& toolpath, const PrintRegion& region,
                                const DiscretizedPath& path);

/// Runs the virtual printer over every print region. With a corner model the
/// speed-dependent plant is used, otherwise the pure extrusion plant.
std::vector<RegionSimulation> simulate_toolpath(const ToolPath& toolpath, const ExtrusionModel& model,
                                                const std::optional<CornerModel>& corner,
                                                const SimulationOptions& options = {});

/// Adds N(0, sigma^2) to every width, clamping at zero.
WidthProfile add_noise(const WidthProfile& profile, double sigma, std::mt19937_64& rng);

}  // namespace extruflow
