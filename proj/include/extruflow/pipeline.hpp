#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "extruflow/corner_model.hpp"
#include "extruflow/extrusion_dynamics.hpp"
#include "extruflow/gcode_io.hpp"
#include "extruflow/optimal_control.hpp"
#include "extruflow/simulator.hpp"
#include "extruflow/system_id.hpp"
#include "extruflow/vision.hpp"

namespace extruflow {

/// Rectangular measurement region in board millimetres.
struct Roi {
  std::string name;
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;
  std::optional<bool> blurry;  // unset: decided by --blurry / heuristic
};

enum class BlurMode { on, off, automatic };

struct ProjectConfig {
  double target_speed = 3600.0;  // mm/min
  double xi_low = 0.03;
  double xi_high = 0.05;
  std::optional<double> nominal_width;  // mm; default alpha * (xi_low + xi_high) / 2
  double step = 0.1;                    // mm
  std::optional<double> u_min;          // control bounds; default [xi_low, xi_high]
  std::optional<double> u_max;
  double corner_threshold_deg = kDefaultCornerThresholdDeg;
  CornerCoupling corner_coupling = CornerCoupling::input;
  InitialWidth initial_width = InitialWidth::nominal;
  double measurement_noise = 0.0;  // mm, added when simulating a print as a measurement

  BoardSpec board;
  RectifiedFrame frame;
  std::vector<Roi> rois;
  double sample_pitch = 0.1;  // mm
  double threshold_n = 2.0;

  PatternGeometry extrusion_pattern;
  CornerPatternGeometry corner_pattern;
  bool detect_transition = false;

  std::string model_file;

  /// Throws DomainError on non-positive dimensions or inconsistent bounds.
  void validate() const;
  double nominal(const ExtrusionModel& model) const;
  double lower_bound() const { return u_min.value_or(xi_low); }
  double upper_bound() const { return u_max.value_or(xi_high); }
};

ProjectConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ProjectConfig& config);
ProjectConfig load_config(const std::string& path);

// --- measurement -------------------------------------------------------------

struct RoiMeasurement {
  std::string name;
  WidthProfile profile;
  Segmentation method = Segmentation::kmeans;
  double noise_weight = 0.0;
  std::vector<std::string> warnings;
};

struct ImageMeasurement {
  Homography homography;
  GrayImage rectified;
  std::vector<Point2> corners;
  std::vector<RoiMeasurement> rois;
};

/// Board detection (or the given corners), rectification and per-ROI width profiles.
ImageMeasurement measure_image(const GrayImage& image, const ProjectConfig& config, BlurMode blur,
                               const std::optional<std::vector<Point2>>& corners = std::nullopt);

// --- optimization ------------------------------------------------------------

struct LineReport {
  std::size_t region = 0;
  std::size_t line = 0;
  std::size_t segments = 0;
  double length = 0.0;          // mm
  double predicted_rmse = 0.0;  // mm, model prediction against the reference
};

struct OptimizeResult {
  std::string gcode;
  std::vector<LineReport> lines;
  std::vector<DiscretizedPath> paths;
  std::vector<WidthReference> references;
  std::vector<Solution> solutions;
  double input_extrusion = 0.0;   // mm of filament
  double output_extrusion = 0.0;  // sum of xi_k * ds_k over all segments
  std::vector<std::string> warnings;
};

/// First line of every optimized file; its presence marks an already compensated input.
inline constexpr const char* kOptimizedMarker = "extruflow optimized";

bool is_optimized(const ToolPath& path);

OptimizeResult optimize_gcode(const ToolPath& path, const ModelFile& model, const ProjectConfig& config);

// --- simulation --------------------------------------------------------------

struct SimulationReport {
  std::vector<RegionSimulation> regions;
  std::vector<WidthProfile> targets;  // intended width per region sample
  double tracking_rmse = 0.0;         // plant width against the intended width, mm
  double max_error = 0.0;             // max |w - w*| over corner windows, mm
  double corner_variance = 0.0;       // variance of w over corner windows, mm^2
  std::size_t corner_count = 0;
  std::size_t window_samples = 0;
  double nominal = 0.0;
};

/// Intended width: nominal except in the trim zones at both ends of every line.
WidthProfile target_width(const DiscretizedPath& path, double w_nominal);

/// Samples within d_tr of a corner apex, excluding the trim zone within w/2 of it.
std::vector<std::size_t> corner_window_samples(const DiscretizedPath& path, double d_tr, double w_nominal);

SimulationReport simulate_gcode(const ToolPath& path, const ModelFile& model, const ProjectConfig& config);

nlohmann::json to_json(const SimulationReport& report);
nlohmann::json to_json(const OptimizeResult& result);

}  // namespace extruflow
