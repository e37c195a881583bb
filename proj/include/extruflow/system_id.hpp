#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "extruflow/gcode_io.hpp"
#include "extruflow/models.hpp"
#include "extruflow/profile.hpp"

namespace extruflow {

struct WidthStats {
  double mean = 0.0;
  double std = 0.0;  // population (MLE) standard deviation
};

/// Gaussian MLE of a constant-width measurement. Needs at least 10 samples.
WidthStats estimate_constant_width(std::span<const double> samples);

/// alpha = (w_high / xi_high + w_low / xi_low) / 2.
double estimate_alpha(double w_low, double w_high, double xi_low, double xi_high);

struct StepFitResult {
  double tau = 0.0;  // mm
  double w_minus = 0.0;
  double w_plus = 0.0;
  double residual_rmse = 0.0;
  std::vector<std::string> warnings;
};

/// Fits w(u) = w- + (w+ - w-)(1 - exp(-u/tau)), u = x - transition_x, over the samples
/// past the transition. Only tau is free. Throws DataError when tau ends on a bound.
StepFitResult fit_time_constant(const WidthProfile& profile, double w_minus, double w_plus, double transition_x);

/// Converts a continuous time constant fitted on data sampled every ds into the
/// constant of the explicit recursion that reproduces those samples exactly.
double recursion_time_constant(double tau_continuous, double ds);

/// First sample of three consecutive ones departing more than 3 sigma from w_minus
/// toward w_plus. Without sigma the designed location is returned.
double detect_step_transition(const WidthProfile& profile, double w_minus, double w_plus,
                              std::optional<double> sigma, std::optional<double> designed_x = std::nullopt);

/// A width profile running up to a corner apex located at `apex_x` on its axis.
struct CornerProfile {
  WidthProfile width;
  double apex_x = 0.0;
};

struct CornerFit {
  double v_hat = 0.0;  // mm/s
  double a_hat = 0.0;  // mm/s^2
  double residual_rmse = 0.0;
  /// v^2 / (2a) of the fit. The deceleration profile depends on (v, a) only
  /// through this quantity, so it is the well-determined output.
  double d_tr() const { return v_hat * v_hat / (2.0 * a_hat); }
};

struct CornerFitResult {
  double v_hat = 0.0;
  double a_hat = 0.0;
  double residual_rmse = 0.0;
  std::vector<CornerFit> per_corner;
  /// Per profile: plateau width the profile was rescaled from, and the fitted distance range.
  std::vector<double> plateau;
  std::vector<std::pair<double, double>> window;
  /// Condition number of the Gauss-Newton matrix at the joint optimum.
  double condition = 0.0;
  std::vector<std::string> warnings;

  double d_tr() const { return v_hat * v_hat / (2.0 * a_hat); }
};

/// Deceleration-zone width w_nominal * v / sqrt(v^2 - 2a(x - apex + d_tr)), and
/// w_nominal before the zone starts. Distance to apex must be positive.
double corner_width_model(double v, double a, double w_nominal, double distance_to_apex);

/// Joint least-squares fit of (v, a) over all profiles after rescaling each one so its
/// plateau (median of the second quarter of samples before the apex, counted from the far
/// end) equals w_nominal, from a 5x5 grid of starts. Each profile contributes the samples out
/// to twice the distance where its rise begins. Samples within w_nominal/2 of the apex are
/// ignored.
CornerFitResult fit_corner_params(std::span<const CornerProfile> profiles, double w_nominal);

struct PatternGeometry {
  double line_length = 40.0;  // mm
  double spacing = 5.0;       // mm between lines
  double origin_x = 20.0;
  double origin_y = 20.0;
  double z = 0.2;
  double margin = 6.0;        // mm excluded at each line end; more than a typical d_tr
};

/// Four parallel lines: xi_low, xi_low -> xi_high, xi_high, xi_high -> xi_low,
/// steps at the midpoint. Measurement windows are written as "; measure" comments.
ToolPath generate_extrusion_pattern(double xi_low, double xi_high, double speed_mm_min,
                                    const PatternGeometry& geometry = {});

struct CornerPatternGeometry {
  double leg_length = 30.0;  // mm
  double spacing = 10.0;     // mm between L shapes
  double origin_x = 20.0;
  double origin_y = 20.0;
  double z = 0.2;
};

/// Four isolated L corners printed at constant ratio zeta. Throws ContractError when a
/// leg is shorter than four transient distances of `expected`.
ToolPath generate_corner_pattern(double zeta, double speed_mm_min, const CornerPatternGeometry& geometry = {},
                                 const CornerModel& expected = {});

/// Extrusion identification from the four pattern lines (in pattern order).
struct ExtrusionIdentification {
  double alpha = 0.0;
  double tau_expand = 0.0;
  double tau_shrink = 0.0;
  WidthStats low;
  WidthStats high;
  StepFitResult expand_fit;
  StepFitResult shrink_fit;
  std::vector<std::string> warnings;
};

struct ExtrusionIdOptions {
  double xi_low = 0.03;
  double xi_high = 0.05;
  double margin = 6.0;           // mm ignored at each line end
  double transition_x = 20.0;    // designed step location along the line
  bool detect_transition = false;
  bool recursion_consistent = true;  // convert tau to the explicit-recursion constant
};

ExtrusionIdentification identify_extrusion(std::span<const WidthProfile> lines, const ExtrusionIdOptions& options);

/// Model parameter file.
struct ModelFile {
  ExtrusionModel extrusion;
  std::optional<CornerModel> corner;
  nlohmann::json provenance = nlohmann::json::object();
};

nlohmann::json to_json(const ModelFile& model);
ModelFile model_from_json(const nlohmann::json& j);
void save_model(const std::string& path, const ModelFile& model);
ModelFile load_model(const std::string& path);

}  // namespace extruflow
