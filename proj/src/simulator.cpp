#include "extruflow/simulator.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "extruflow/errors.hpp"
#include "extruflow/extrusion_dynamics.hpp"

namespace extruflow {

ControlSequence region_controls(const ToolPath& toolpath, const PrintRegion& region,
                                const DiscretizedPath& path) {
  if (path.segment_edge.size() != path.segment_count()) throw ContractError("path lacks segment provenance");
  ControlSequence c;
  c.step = path.step;
  c.segment_lengths = path.segment_lengths;
  c.xi.reserve(path.segment_count());
  for (std::size_t edge : path.segment_edge) {
    if (edge >= region.move_indices.size()) throw ContractError("segment refers to a move outside the region");
    const GMove& m = toolpath.moves[region.move_indices[edge]];
    c.xi.push_back(m.extrude / m.length());
  }
  return c;
}

std::vector<RegionSimulation> simulate_toolpath(const ToolPath& toolpath, const ExtrusionModel& model,
                                                const std::optional<CornerModel>& corner,
                                                const SimulationOptions& options) {
  if (options.initial == InitialWidth::nominal && !(options.nominal_width > 0.0)) {
    throw ContractError("nominal initial width needs a positive nominal width");
  }
  std::vector<RegionSimulation> out;
  double carry = 0.0;
  for (const PrintRegion& region : print_regions(toolpath)) {
    RegionSimulation sim;
    sim.path = discretize(region.vertices, options.step, options.corner_threshold_deg);
    sim.controls = region_controls(toolpath, region, sim.path);
    double w0 = carry;
    if (options.initial == InitialWidth::primed) w0 = std::max(0.0, model.alpha * sim.controls.xi.front());
    if (options.initial == InitialWidth::nominal) w0 = options.nominal_width;
    sim.width = corner ? simulate_corner_plant(model, *corner, sim.controls, sim.path, w0, options.coupling)
                       : simulate_plant(model, sim.controls, w0);
    carry = sim.width[sim.width.size() - 1].w;
    out.push_back(std::move(sim));
  }
  return out;
}

WidthProfile add_noise(const WidthProfile& profile, double sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0.0)) throw ContractError("noise level must be >= 0");
  std::normal_distribution<double> noise(0.0, sigma);
  WidthProfile out;
  for (const auto& s : profile.samples()) {
    const double n = sigma > 0.0 ? noise(rng) : 0.0;
    out.push_back({s.x, std::max(0.0, s.w + n)});
  }
  return out;
}

}  // namespace extruflow
