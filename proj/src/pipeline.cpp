#include "extruflow/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "extruflow/corner_model.hpp"
#include "extruflow/errors.hpp"

namespace extruflow {

using nlohmann::json;

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key) || j[key].is_null()) return;
  try {
    out = j[key].get<T>();
  } catch (const json::exception& e) {
    throw DataError(fmt::format("config field '{}': {}", key, e.what()));
  }
}

template <typename T>
void read_optional(const json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key) || j[key].is_null()) return;
  T v{};
  read_field(j, key, v);
  out = v;
}

const char* coupling_name(CornerCoupling c) { return c == CornerCoupling::input ? "input" : "output"; }

const char* initial_name(InitialWidth w) {
  switch (w) {
    case InitialWidth::primed: return "primed";
    case InitialWidth::nominal: return "nominal";
    case InitialWidth::chained: return "chained";
  }
  return "?";
}

InitialWidth parse_initial(const std::string& s) {
  if (s == "primed") return InitialWidth::primed;
  if (s == "nominal") return InitialWidth::nominal;
  if (s == "chained") return InitialWidth::chained;
  throw DataError(fmt::format("initial_width must be primed, nominal or chained, got '{}'", s));
}

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) throw DomainError(fmt::format("config: {} must be positive, got {}", name, v));
}

// Arc length of every path point.
std::vector<double> arc_positions(const DiscretizedPath& path) { return path.point_arc_lengths(); }

// [start, end] arc length of every line span.
std::vector<std::pair<double, double>> span_extents(const DiscretizedPath& path) {
  const std::vector<double> xs = arc_positions(path);
  std::vector<std::pair<double, double>> out;
  for (const LineSpan& s : path.line_spans) out.emplace_back(xs[s.start_index], xs[s.end_index]);
  return out;
}

double rmse(std::span<const double> a, std::span<const double> b) {
  if (a.empty()) return 0.0;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(ss / static_cast<double>(a.size()));
}

}  // namespace

void ProjectConfig::validate() const {
  require_positive(target_speed, "target_speed");
  require_positive(xi_low, "xi_low");
  require_positive(xi_high, "xi_high");
  if (!(xi_low < xi_high)) throw DomainError("config: xi_low must be below xi_high");
  if (nominal_width) require_positive(*nominal_width, "nominal_width");
  require_positive(step, "step");
  if (!(lower_bound() < upper_bound())) throw DomainError("config: control bounds must satisfy u_min < u_max");
  if (!(corner_threshold_deg > 0.0 && corner_threshold_deg < 180.0)) {
    throw DomainError("config: corner_threshold_deg must lie in (0, 180)");
  }
  if (!(measurement_noise >= 0.0)) throw DomainError("config: measurement_noise must be >= 0");
  if (board.rows < 2 || board.cols < 2) throw DomainError("config: checkerboard needs at least 2x2 inner corners");
  require_positive(board.square_mm, "board.square_mm");
  require_positive(frame.px_per_mm, "frame.px_per_mm");
  require_positive(sample_pitch, "sample_pitch");
  require_positive(threshold_n, "threshold_n");
  for (const Roi& r : rois) {
    if (!(r.x1 > r.x0 && r.y1 > r.y0)) throw DomainError(fmt::format("config: ROI '{}' is empty", r.name));
  }
  require_positive(extrusion_pattern.line_length, "extrusion_pattern.line_length");
  require_positive(extrusion_pattern.spacing, "extrusion_pattern.spacing");
  require_positive(corner_pattern.leg_length, "corner_pattern.leg_length");
  require_positive(corner_pattern.spacing, "corner_pattern.spacing");
}

double ProjectConfig::nominal(const ExtrusionModel& model) const {
  return nominal_width.value_or(model.alpha * 0.5 * (xi_low + xi_high));
}

ProjectConfig config_from_json(const json& j) {
  if (!j.is_object()) throw DataError("config must be a JSON object");
  ProjectConfig c;
  read_field(j, "target_speed", c.target_speed);
  read_field(j, "xi_low", c.xi_low);
  read_field(j, "xi_high", c.xi_high);
  read_optional(j, "nominal_width", c.nominal_width);
  read_field(j, "step", c.step);
  read_optional(j, "u_min", c.u_min);
  read_optional(j, "u_max", c.u_max);
  read_field(j, "corner_threshold_deg", c.corner_threshold_deg);
  if (j.contains("corner_coupling")) {
    std::string s;
    read_field(j, "corner_coupling", s);
    if (s == "input") {
      c.corner_coupling = CornerCoupling::input;
    } else if (s == "output") {
      c.corner_coupling = CornerCoupling::output;
    } else {
      throw DataError(fmt::format("corner_coupling must be input or output, got '{}'", s));
    }
  }
  if (j.contains("initial_width")) {
    std::string s;
    read_field(j, "initial_width", s);
    c.initial_width = parse_initial(s);
  }
  read_field(j, "measurement_noise", c.measurement_noise);
  if (j.contains("checkerboard")) {
    const json& b = j["checkerboard"];
    read_field(b, "rows", c.board.rows);
    read_field(b, "cols", c.board.cols);
    read_field(b, "square_mm", c.board.square_mm);
  }
  if (j.contains("rectified")) {
    const json& f = j["rectified"];
    read_field(f, "origin_x_mm", c.frame.origin_x_mm);
    read_field(f, "origin_y_mm", c.frame.origin_y_mm);
    read_field(f, "px_per_mm", c.frame.px_per_mm);
    read_field(f, "width", c.frame.width);
    read_field(f, "height", c.frame.height);
  }
  if (j.contains("rois")) {
    if (!j["rois"].is_array()) throw DataError("config field 'rois' must be an array");
    int index = 0;
    for (const json& r : j["rois"]) {
      Roi roi;
      roi.name = fmt::format("roi{}", ++index);
      read_field(r, "name", roi.name);
      read_field(r, "x0", roi.x0);
      read_field(r, "y0", roi.y0);
      read_field(r, "x1", roi.x1);
      read_field(r, "y1", roi.y1);
      read_optional(r, "blurry", roi.blurry);
      c.rois.push_back(roi);
    }
  }
  read_field(j, "sample_pitch", c.sample_pitch);
  read_field(j, "threshold_n", c.threshold_n);
  if (j.contains("extrusion_pattern")) {
    const json& p = j["extrusion_pattern"];
    read_field(p, "line_length", c.extrusion_pattern.line_length);
    read_field(p, "spacing", c.extrusion_pattern.spacing);
    read_field(p, "origin_x", c.extrusion_pattern.origin_x);
    read_field(p, "origin_y", c.extrusion_pattern.origin_y);
    read_field(p, "z", c.extrusion_pattern.z);
    read_field(p, "margin", c.extrusion_pattern.margin);
  }
  if (j.contains("corner_pattern")) {
    const json& p = j["corner_pattern"];
    read_field(p, "leg_length", c.corner_pattern.leg_length);
    read_field(p, "spacing", c.corner_pattern.spacing);
    read_field(p, "origin_x", c.corner_pattern.origin_x);
    read_field(p, "origin_y", c.corner_pattern.origin_y);
    read_field(p, "z", c.corner_pattern.z);
  }
  read_field(j, "detect_transition", c.detect_transition);
  read_field(j, "model_file", c.model_file);
  c.validate();
  return c;
}

json to_json(const ProjectConfig& c) {
  json j;
  j["target_speed"] = c.target_speed;
  j["xi_low"] = c.xi_low;
  j["xi_high"] = c.xi_high;
  j["nominal_width"] = c.nominal_width ? json(*c.nominal_width) : json(nullptr);
  j["step"] = c.step;
  j["u_min"] = c.lower_bound();
  j["u_max"] = c.upper_bound();
  j["corner_threshold_deg"] = c.corner_threshold_deg;
  j["corner_coupling"] = coupling_name(c.corner_coupling);
  j["initial_width"] = initial_name(c.initial_width);
  j["measurement_noise"] = c.measurement_noise;
  j["checkerboard"] = {{"rows", c.board.rows}, {"cols", c.board.cols}, {"square_mm", c.board.square_mm}};
  j["rectified"] = {{"origin_x_mm", c.frame.origin_x_mm}, {"origin_y_mm", c.frame.origin_y_mm},
                    {"px_per_mm", c.frame.px_per_mm},     {"width", c.frame.width},
                    {"height", c.frame.height}};
  j["rois"] = json::array();
  for (const Roi& r : c.rois) {
    json o = {{"name", r.name}, {"x0", r.x0}, {"y0", r.y0}, {"x1", r.x1}, {"y1", r.y1}};
    if (r.blurry) o["blurry"] = *r.blurry;
    j["rois"].push_back(o);
  }
  j["sample_pitch"] = c.sample_pitch;
  j["threshold_n"] = c.threshold_n;
  const auto& e = c.extrusion_pattern;
  j["extrusion_pattern"] = {{"line_length", e.line_length}, {"spacing", e.spacing}, {"origin_x", e.origin_x},
                            {"origin_y", e.origin_y},       {"z", e.z},             {"margin", e.margin}};
  const auto& k = c.corner_pattern;
  j["corner_pattern"] = {{"leg_length", k.leg_length}, {"spacing", k.spacing}, {"origin_x", k.origin_x},
                         {"origin_y", k.origin_y},     {"z", k.z}};
  j["detect_transition"] = c.detect_transition;
  j["model_file"] = c.model_file;
  return j;
}

ProjectConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open config '{}'", path));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(fmt::format("config '{}': {}", path, e.what()));
  }
  return config_from_json(j);
}

// --- measurement -------------------------------------------------------------

ImageMeasurement measure_image(const GrayImage& image, const ProjectConfig& config, BlurMode blur,
                               const std::optional<std::vector<Point2>>& corners) {
  config.validate();
  ImageMeasurement out;
  out.corners = corners ? *corners : detect_checkerboard(image, config.board.rows, config.board.cols);
  if (out.corners.size() != static_cast<std::size_t>(config.board.rows * config.board.cols)) {
    throw DataError(fmt::format("{} corners given, checkerboard has {}", out.corners.size(),
                                config.board.rows * config.board.cols));
  }
  RectifiedFrame frame = config.frame;
  if (frame.width <= 0 || frame.height <= 0) {
    double max_x = (config.board.cols + 1) * config.board.square_mm;
    double max_y = (config.board.rows + 1) * config.board.square_mm;
    for (const Roi& r : config.rois) {
      max_x = std::max(max_x, r.x1);
      max_y = std::max(max_y, r.y1);
    }
    frame.width = static_cast<int>(std::ceil((max_x - frame.origin_x_mm) * frame.px_per_mm)) + 1;
    frame.height = static_cast<int>(std::ceil((max_y - frame.origin_y_mm) * frame.px_per_mm)) + 1;
  }
  out.homography = board_homography(out.corners, config.board, frame);
  out.rectified = rectify(image, out.homography.h, frame.width, frame.height);

  for (const Roi& r : config.rois) {
    const Point2 a = frame.to_pixel({r.x0, r.y0});
    const Point2 b = frame.to_pixel({r.x1, r.y1});
    const int x0 = static_cast<int>(std::lround(std::min(a.x, b.x)));
    const int y0 = static_cast<int>(std::lround(std::min(a.y, b.y)));
    const int x1 = static_cast<int>(std::lround(std::max(a.x, b.x)));
    const int y1 = static_cast<int>(std::lround(std::max(a.y, b.y)));
    const GrayImage roi = crop(out.rectified, x0, y0, x1 - x0, y1 - y0);

    bool blurry = blur == BlurMode::on;
    const ClusterSummary k = cluster_kmeans(roi.pixels);
    if (r.blurry) {
      blurry = *r.blurry;
    } else if (blur == BlurMode::automatic) {
      blurry = k.noise().weight > kBlurryNoiseWeight;
    }
    const RoiResult res = measure_roi(roi, out.homography.pixel_scale, config.sample_pitch,
                                      blurry ? Segmentation::gmm : Segmentation::kmeans, config.threshold_n);
    RoiMeasurement m;
    m.name = r.name;
    m.profile = res.measurement.profile;
    m.method = res.method;
    m.noise_weight = k.noise().weight;
    m.warnings = res.measurement.warnings;
    out.rois.push_back(std::move(m));
  }
  return out;
}

// --- optimization ------------------------------------------------------------

bool is_optimized(const ToolPath& path) {
  const std::string marker = std::string("; ") + kOptimizedMarker;
  const auto marked = [&](const std::vector<std::string>& lines) {
    return std::any_of(lines.begin(), lines.end(), [&](const std::string& l) { return l.rfind(marker, 0) == 0; });
  };
  if (marked(path.trailing)) return true;
  return std::any_of(path.moves.begin(), path.moves.end(),
                     [&](const GMove& m) { return marked(m.passthrough_before); });
}

OptimizeResult optimize_gcode(const ToolPath& path, const ModelFile& model, const ProjectConfig& config) {
  config.validate();
  model.extrusion.validate();
  OptimizeResult out;
  if (is_optimized(path)) {
    out.warnings.push_back("input already carries an extruflow optimization header; compensating twice");
  }
  const double wn = config.nominal(model.extrusion);
  const std::vector<PrintRegion> regions = print_regions(path);
  if (regions.empty()) throw DataError("input has no print moves");

  std::vector<TrackingProblem> problems;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    DiscretizedPath dp = discretize(regions[r].vertices, config.step, config.corner_threshold_deg);
    for (auto& w : dp.warnings) out.warnings.push_back(fmt::format("region {}: {}", r + 1, w));
    if (!dp.corner_indices.empty() && !model.corner) {
      throw DataError(fmt::format(
          "region {} has {} corner(s) but the model has no corner parameters; print the corner pattern "
          "('extruflow pattern corner'), measure it and identify with --corner profiles",
          r + 1, dp.corner_indices.size()));
    }
    WidthReference ref = model.corner ? build_reference(model.extrusion, *model.corner, dp, wn)
                                      : build_trim_reference(dp, wn);
    TrackingProblem p;
    p.reference = ref.target;
    p.model = model.extrusion;
    p.xi_min = config.lower_bound();
    p.xi_max = config.upper_bound();
    p.step = config.step;
    p.segment_lengths = dp.segment_lengths;
    if (config.initial_width == InitialWidth::nominal) p.w0 = wn;
    if (config.initial_width == InitialWidth::primed) {
      const GMove& first = path.moves[regions[r].move_indices.front()];
      p.w0 = std::max(0.0, model.extrusion.alpha * first.extrude / first.length());
    }
    problems.push_back(std::move(p));
    out.paths.push_back(std::move(dp));
    out.references.push_back(std::move(ref));
  }

  if (config.initial_width == InitialWidth::chained) {
    out.solutions = solve_chain(problems);
  } else {
    for (const TrackingProblem& p : problems) out.solutions.push_back(solve_per_regime(p));
  }

  for (std::size_t r = 0; r < regions.size(); ++r) {
    const DiscretizedPath& dp = out.paths[r];
    const Solution& s = out.solutions[r];
    for (std::size_t li = 0; li < dp.line_spans.size(); ++li) {
      const LineSpan& span = dp.line_spans[li];
      const std::span<const double> pred(s.predicted.data() + span.start_index + 1, span.segment_count());
      const std::span<const double> ref(problems[r].reference.data() + span.start_index, span.segment_count());
      out.lines.push_back({r + 1, li + 1, span.segment_count(), span.length, rmse(pred, ref)});
    }
    for (std::size_t k = 0; k < s.controls.size(); ++k) out.output_extrusion += s.controls.xi[k] * dp.segment_lengths[k];
  }
  out.input_extrusion = path.total_extrusion();

  // Rewrite: travel moves and passthrough unchanged, every print region replaced by its
  // discretized segments with E = xi_k * ds_k.
  GcodeWriter w(ExtrusionMode::relative);
  w.comment(kOptimizedMarker);
  w.comment(kToolVersion);
  const ExtrusionModel& m = model.extrusion;
  w.comment(fmt::format("alpha={} tau_expand={} tau_shrink={} xi_range=[{}, {}]", format_number(m.alpha),
                        format_number(m.tau_expand), format_number(m.tau_shrink), format_number(m.xi_low),
                        format_number(m.xi_high)));
  if (model.corner) {
    w.comment(fmt::format("v_const={} decel={}", format_number(model.corner->v_const),
                          format_number(model.corner->decel)));
  }
  w.comment(fmt::format("nominal_width={} step={} bounds=[{}, {}]", format_number(wn), format_number(config.step),
                        format_number(config.lower_bound()), format_number(config.upper_bound())));
  w.preamble();

  const auto feed = [](const GMove& mv) {
    return mv.active_feedrate > 0.0 ? std::optional<double>(mv.active_feedrate) : std::nullopt;
  };
  std::size_t next_region = 0;
  std::size_t i = 0;
  while (i < path.moves.size()) {
    if (next_region < regions.size() && regions[next_region].move_indices.front() == i) {
      const PrintRegion& region = regions[next_region];
      const DiscretizedPath& dp = out.paths[next_region];
      const ControlSequence& c = out.solutions[next_region].controls;
      std::size_t next_edge = 0;
      for (std::size_t k = 0; k < c.size(); ++k) {
        const std::size_t edge = dp.segment_edge[k];
        for (; next_edge <= edge; ++next_edge) {
          for (const auto& line : path.moves[region.move_indices[next_edge]].passthrough_before) w.raw(line);
        }
        w.extrude(dp.points[k + 1], c.xi[k] * dp.segment_lengths[k],
                  feed(path.moves[region.move_indices[edge]]));
      }
      for (; next_edge < region.move_indices.size(); ++next_edge) {
        for (const auto& line : path.moves[region.move_indices[next_edge]].passthrough_before) w.raw(line);
      }
      i = region.move_indices.back() + 1;
      ++next_region;
      continue;
    }
    const GMove& mv = path.moves[i];
    for (const auto& line : mv.passthrough_before) w.raw(line);
    if (mv.kind == MoveKind::print || mv.in_place_extrusion) {
      // Z-only print moves and in-place extrusion are not part of any region.
      w.extrude(mv.target, mv.extrude, feed(mv));
    } else {
      w.travel(mv.target, feed(mv), mv.extrude != 0.0 ? std::optional<double>(mv.extrude) : std::nullopt);
    }
    ++i;
  }
  for (const auto& line : path.trailing) w.raw(line);
  out.gcode = w.str();
  return out;
}

// --- simulation --------------------------------------------------------------

WidthProfile target_width(const DiscretizedPath& path, double w_nominal) {
  const std::vector<double> xs = arc_positions(path);
  const auto spans = span_extents(path);
  const double half_w = 0.5 * w_nominal;
  WidthProfile out;
  for (double x : xs) {
    bool trimmed = false;
    for (const auto& [a, b] : spans) {
      if (x < a - 1e-12 || x > b + 1e-12) continue;
      if (x - a <= half_w || b - x < half_w) trimmed = true;
    }
    out.push_back({x, trimmed ? 0.0 : w_nominal});
  }
  return out;
}

std::vector<std::size_t> corner_window_samples(const DiscretizedPath& path, double d_tr, double w_nominal) {
  const std::vector<double> xs = arc_positions(path);
  const double total = xs.back();
  std::vector<double> apexes;
  for (std::size_t c : path.corner_indices) {
    apexes.push_back(xs[c]);
    if (c == 0) apexes.push_back(total);  // closed-loop seam
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (double apex : apexes) {
      const double d = std::abs(xs[i] - apex);
      if (d <= d_tr && d >= 0.5 * w_nominal) {
        out.push_back(i);
        break;
      }
    }
  }
  return out;
}

SimulationReport simulate_gcode(const ToolPath& path, const ModelFile& model, const ProjectConfig& config) {
  config.validate();
  SimulationReport rep;
  rep.nominal = config.nominal(model.extrusion);
  SimulationOptions opt;
  opt.step = config.step;
  opt.initial = config.initial_width;
  opt.nominal_width = rep.nominal;
  opt.corner_threshold_deg = config.corner_threshold_deg;
  opt.coupling = config.corner_coupling;
  rep.regions = simulate_toolpath(path, model.extrusion, model.corner, opt);

  double ss = 0.0;
  std::size_t n = 0;
  std::vector<double> window;
  for (const RegionSimulation& r : rep.regions) {
    WidthProfile target = target_width(r.path, rep.nominal);
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double e = r.width[i].w - target[i].w;
      ss += e * e;
      ++n;
    }
    rep.targets.push_back(std::move(target));
    if (model.corner) {
      rep.corner_count += r.path.corner_indices.size();
      for (std::size_t i : corner_window_samples(r.path, model.corner->d_tr(), rep.nominal)) {
        window.push_back(r.width[i].w);
        rep.max_error = std::max(rep.max_error, std::abs(r.width[i].w - rep.nominal));
      }
    }
  }
  rep.tracking_rmse = n > 0 ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
  rep.window_samples = window.size();
  if (!window.empty()) {
    double mean = 0.0;
    for (double w : window) mean += w;
    mean /= static_cast<double>(window.size());
    double var = 0.0;
    for (double w : window) var += (w - mean) * (w - mean);
    rep.corner_variance = var / static_cast<double>(window.size());
  }
  return rep;
}

json to_json(const SimulationReport& r) {
  json j;
  j["nominal_width"] = r.nominal;
  j["tracking_rmse"] = r.tracking_rmse;
  j["regions"] = r.regions.size();
  j["corners"] = r.corner_count;
  j["corner_window_samples"] = r.window_samples;
  j["max_error"] = r.window_samples > 0 ? json(r.max_error) : json(nullptr);
  j["corner_variance"] = r.window_samples > 0 ? json(r.corner_variance) : json(nullptr);
  return j;
}

json to_json(const OptimizeResult& r) {
  json j;
  j["input_extrusion"] = r.input_extrusion;
  j["output_extrusion"] = r.output_extrusion;
  j["extrusion_delta"] = r.output_extrusion - r.input_extrusion;
  j["lines"] = json::array();
  for (const LineReport& l : r.lines) {
    j["lines"].push_back({{"region", l.region},
                          {"line", l.line},
                          {"segments", l.segments},
                          {"length", l.length},
                          {"predicted_rmse", l.predicted_rmse}});
  }
  j["warnings"] = r.warnings;
  return j;
}

}  // namespace extruflow
