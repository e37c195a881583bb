#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "extruflow/errors.hpp"
#include "extruflow/gcode_io.hpp"
#include "extruflow/pipeline.hpp"
#include "extruflow/plot.hpp"
#include "extruflow/system_id.hpp"
#include "extruflow/vision.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace extruflow;

namespace {

struct Globals {
  std::string config_path;
  std::string out;
  std::uint64_t seed = 1;
};

ProjectConfig config_for(const Globals& g) {
  return g.config_path.empty() ? ProjectConfig{} : load_config(g.config_path);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError(fmt::format("cannot open {}", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ModelFile model_for(const std::string& flag, const ProjectConfig& config) {
  const std::string path = flag.empty() ? config.model_file : flag;
  if (path.empty()) throw UsageError("a model file is required (--model FILE or model_file in the config)");
  if (!fs::exists(path)) throw UsageError(fmt::format("model file {} does not exist", path));
  return load_model(path);
}

// "path" or "path.csv:column"; x is always the first column.
PlotSeries read_series(const std::string& spec) {
  std::string path = spec;
  std::string column;
  const auto colon = spec.rfind(':');
  if (colon != std::string::npos && colon > 1 && !fs::exists(spec)) {
    path = spec.substr(0, colon);
    column = spec.substr(colon + 1);
  }
  std::ifstream in(path);
  if (!in) throw UsageError(fmt::format("cannot open {}", path));
  std::string line;
  if (!std::getline(in, line)) throw DataError(fmt::format("{} is empty", path));
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> names;
  {
    std::istringstream h(line);
    std::string name;
    while (std::getline(h, name, ',')) names.push_back(name);
  }
  if (names.size() < 2) throw DataError(fmt::format("{}: need at least two columns", path));
  std::size_t col = 1;
  if (!column.empty()) {
    const auto it = std::find(names.begin(), names.end(), column);
    if (it == names.end()) throw UsageError(fmt::format("{} has no column '{}'", path, column));
    col = static_cast<std::size_t>(it - names.begin());
  }
  PlotSeries s;
  s.label = column.empty() ? fs::path(path).stem().string() : column;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() <= col) throw ParseError(lineno, fmt::format("{}: missing column", path));
    try {
      const double x = std::stod(cells[0]);
      const double y = std::stod(cells[col]);
      // Plots may show widths below zero (model predictions) or repeated x (region seams).
      if (!s.profile.empty() && x <= s.profile[s.profile.size() - 1].x) continue;
      s.profile.push_back({x, std::max(0.0, y)});
    } catch (const std::invalid_argument&) {
      throw ParseError(lineno, fmt::format("{}: malformed number", path));
    }
  }
  if (s.profile.empty()) throw DataError(fmt::format("{} has no samples", path));
  return s;
}

// --- pattern -----------------------------------------------------------------

int cmd_pattern(const Globals& g, const std::string& kind, const std::string& model_flag, double speed) {
  const ProjectConfig config = config_for(g);
  const double v = speed > 0.0 ? speed : config.target_speed;
  ToolPath path;
  std::string summary;
  if (kind == "extrusion") {
    path = generate_extrusion_pattern(config.xi_low, config.xi_high, v, config.extrusion_pattern);
    summary = fmt::format("extrusion pattern: 4 lines, xi {} / {}, {} mm/min", config.xi_low, config.xi_high, v);
  } else if (kind == "corner") {
    const ModelFile model = model_for(model_flag, config);
    const double zeta = config.nominal(model.extrusion) / model.extrusion.alpha;
    path = generate_corner_pattern(zeta, v, config.corner_pattern, model.corner.value_or(CornerModel{}));
    summary = fmt::format("corner pattern: zeta {:.5f} (w* {:.4f} mm / alpha {:.4f}), {} mm/min", zeta,
                          config.nominal(model.extrusion), model.extrusion.alpha, v);
  } else {
    throw UsageError(fmt::format("unknown pattern kind '{}' (extrusion or corner)", kind));
  }
  const std::string out = g.out.empty() ? fmt::format("{}_pattern.gcode", kind) : g.out;
  write_text(out, format_toolpath(path, ExtrusionMode::relative));
  std::cout << summary << "\nwrote " << out << "\n";
  return 0;
}

// --- measure -----------------------------------------------------------------

int cmd_measure(const Globals& g, const std::string& image_path, const std::string& corners_path,
                const std::string& blurry) {
  const ProjectConfig config = config_for(g);
  if (config.rois.empty()) throw UsageError("the config lists no ROIs to measure");
  if (!fs::exists(image_path)) throw UsageError(fmt::format("image {} does not exist", image_path));
  const GrayImage image = load_image(image_path);
  std::optional<std::vector<Point2>> corners;
  if (!corners_path.empty()) corners = load_corners_csv(corners_path);
  const BlurMode mode = blurry == "on" ? BlurMode::on : blurry == "off" ? BlurMode::off : BlurMode::automatic;
  const ImageMeasurement m = measure_image(image, config, mode, corners);

  const fs::path dir = g.out.empty() ? fs::path("measure") : fs::path(g.out);
  fs::create_directories(dir);
  save_png((dir / "rectified.png").string(), m.rectified);
  json report;
  report["image"] = image_path;
  report["pixel_scale_mm"] = m.homography.pixel_scale;
  report["reprojection_rms_px"] = m.homography.rms_error;
  report["warnings"] = m.homography.warnings;
  report["rois"] = json::array();
  std::cout << fmt::format("pixel scale {:.5f} mm/px, reprojection RMS {:.3f} px\n", m.homography.pixel_scale,
                           m.homography.rms_error);
  for (const auto& w : m.homography.warnings) spdlog::warn("{}", w);
  for (const RoiMeasurement& r : m.rois) {
    const fs::path csv = dir / (r.name + ".csv");
    save_profile_csv(csv.string(), r.profile);
    const auto ws = r.profile.ws();
    double mean = 0.0;
    for (double w : ws) mean += w;
    mean = ws.empty() ? 0.0 : mean / static_cast<double>(ws.size());
    const char* method = r.method == Segmentation::gmm ? "gmm" : "kmeans";
    std::cout << fmt::format("{}: {} samples, mean width {:.4f} mm ({}, noise weight {:.3f})\n", r.name,
                             r.profile.size(), mean, method, r.noise_weight);
    for (const auto& w : r.warnings) spdlog::warn("{}: {}", r.name, w);
    report["rois"].push_back({{"name", r.name},
                              {"csv", csv.filename().string()},
                              {"samples", r.profile.size()},
                              {"mean_width_mm", mean},
                              {"method", method},
                              {"noise_weight", r.noise_weight},
                              {"warnings", r.warnings}});
  }
  write_json(dir / "measure.json", report);
  return 0;
}

// --- identify ----------------------------------------------------------------

void fit_corners(const ProjectConfig& config, const std::vector<std::string>& files, double apex, ModelFile& model,
                 std::ostringstream& text) {
  const double apex_x = apex > 0.0 ? apex : config.corner_pattern.leg_length;
  std::vector<CornerProfile> profiles;
  for (const auto& f : files) profiles.push_back({load_profile_csv(f), apex_x});
  const double wn = config.nominal(model.extrusion);
  const CornerFitResult fit = fit_corner_params(profiles, wn);
  for (const auto& w : fit.warnings) spdlog::warn("corner fit: {}", w);
  model.corner = CornerModel{fit.v_hat, fit.a_hat};
  text << fmt::format("v_const    = {:.4f} mm/s\n", fit.v_hat);
  text << fmt::format("decel      = {:.4f} mm/s^2\n", fit.a_hat);
  text << fmt::format("d_tr       = {:.4f} mm (fit condition {:.3g})\n", fit.d_tr(), fit.condition);
  json& p = model.provenance;
  p["corner_profiles"] = files;
  p["corner_apex_x"] = apex_x;
  p["corner_nominal_width"] = wn;
  p["corner_fit_rmse"] = fit.residual_rmse;
  p["corner_condition"] = fit.condition;
  p["corner_d_tr"] = fit.d_tr();
  p["corner_warnings"] = fit.warnings;
}

int identify_corners_only(const Globals& g, const ProjectConfig& config, const std::vector<std::string>& files,
                          double apex, ModelFile model) {
  std::ostringstream text;
  text << fmt::format("alpha      = {:.4f} (from the given model)\n", model.extrusion.alpha);
  fit_corners(config, files, apex, model, text);
  const std::string out = g.out.empty() ? "model.json" : g.out;
  save_model(out, model);
  text << "wrote " << out << "\n";
  std::cout << text.str();
  return 0;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

int cmd_identify(const Globals& g, const std::vector<std::string>& extrusion, const std::vector<std::string>& corner,
                 double apex, const std::string& model_flag) {
  const ProjectConfig config = config_for(g);
  if (extrusion.empty() && (corner.empty() || model_flag.empty())) {
    throw UsageError("identify needs --extrusion profiles (4 per repetition), or --corner profiles with --model");
  }
  if (extrusion.empty()) return identify_corners_only(g, config, corner, apex, model_for(model_flag, config));
  if (extrusion.size() % 4 != 0) {
    throw UsageError(fmt::format("--extrusion takes 4 profiles per repetition, got {}", extrusion.size()));
  }
  ExtrusionIdOptions opt;
  opt.xi_low = config.xi_low;
  opt.xi_high = config.xi_high;
  opt.margin = config.extrusion_pattern.margin;
  opt.transition_x = 0.5 * config.extrusion_pattern.line_length;
  opt.detect_transition = config.detect_transition;

  std::vector<double> alphas, taus_e, taus_s;
  json reps = json::array();
  std::ostringstream text;
  for (std::size_t r = 0; r < extrusion.size() / 4; ++r) {
    std::vector<WidthProfile> lines;
    for (std::size_t i = 0; i < 4; ++i) lines.push_back(load_profile_csv(extrusion[4 * r + i]));
    const ExtrusionIdentification id = identify_extrusion(lines, opt);
    for (const auto& w : id.warnings) spdlog::warn("repetition {}: {}", r + 1, w);
    alphas.push_back(id.alpha);
    taus_e.push_back(id.tau_expand);
    taus_s.push_back(id.tau_shrink);
    reps.push_back({{"alpha", id.alpha},
                    {"tau_expand", id.tau_expand},
                    {"tau_shrink", id.tau_shrink},
                    {"w_low", {{"mean", id.low.mean}, {"std", id.low.std}}},
                    {"w_high", {{"mean", id.high.mean}, {"std", id.high.std}}},
                    {"expand_fit_rmse", id.expand_fit.residual_rmse},
                    {"shrink_fit_rmse", id.shrink_fit.residual_rmse},
                    {"warnings", id.warnings}});
  }
  const auto [a_mean, a_std] = mean_std(alphas);
  const auto [te_mean, te_std] = mean_std(taus_e);
  const auto [ts_mean, ts_std] = mean_std(taus_s);
  ModelFile model;
  model.extrusion.alpha = a_mean;
  model.extrusion.tau_expand = te_mean;
  model.extrusion.tau_shrink = ts_mean;
  model.extrusion.xi_low = config.xi_low;
  model.extrusion.xi_high = config.xi_high;
  text << fmt::format("repetitions: {}\n", alphas.size());
  text << fmt::format("alpha      = {:.4f} +/- {:.4f}\n", a_mean, a_std);
  text << fmt::format("tau_expand = {:.4f} +/- {:.4f} mm\n", te_mean, te_std);
  text << fmt::format("tau_shrink = {:.4f} +/- {:.4f} mm\n", ts_mean, ts_std);

  json provenance;
  provenance["tool"] = kToolVersion;
  provenance["extrusion_profiles"] = extrusion;
  provenance["repetitions"] = reps;
  provenance["alpha_std"] = a_std;
  provenance["tau_expand_std"] = te_std;
  provenance["tau_shrink_std"] = ts_std;

  model.provenance = provenance;
  if (!corner.empty()) fit_corners(config, corner, apex, model, text);
  const std::string out = g.out.empty() ? "model.json" : g.out;
  save_model(out, model);
  text << "wrote " << out << "\n";
  std::cout << text.str();
  return 0;
}

// --- optimize ----------------------------------------------------------------

int cmd_optimize(const Globals& g, const std::string& input, const std::string& model_flag) {
  const ProjectConfig config = config_for(g);
  const ModelFile model = model_for(model_flag, config);
  const ToolPath path = parse_gcode(read_text(input));
  const OptimizeResult res = optimize_gcode(path, model, config);
  for (const auto& w : res.warnings) spdlog::warn("{}", w);

  const fs::path out = g.out.empty() ? fs::path(input).replace_extension(".opt.gcode") : fs::path(g.out);
  write_text(out, res.gcode);

  std::ostringstream csv;
  csv << "x_mm,xi,w_pred_mm,w_ref_mm\n";
  double offset = 0.0;
  for (std::size_t r = 0; r < res.solutions.size(); ++r) {
    const Solution& s = res.solutions[r];
    for (std::size_t k = 0; k < s.controls.size(); ++k) {
      csv << fmt::format("{:.6f},{:.6f},{:.6f},{:.6f}\n", offset + s.x[k + 1], s.controls.xi[k], s.predicted[k + 1],
                         res.references[r].target[k]);
    }
    offset += s.x.back();
  }
  fs::path csv_path = out;
  csv_path.replace_extension(".solution.csv");
  write_text(csv_path, csv.str());

  std::ostringstream text;
  text << fmt::format("{} lines in {} print regions\n", res.lines.size(), res.solutions.size());
  for (const LineReport& l : res.lines) {
    text << fmt::format("  region {:>3} line {:>3}: {:>7.2f} mm, {:>5} segments, predicted RMSE {:.4f} mm\n",
                        l.region, l.line, l.length, l.segments, l.predicted_rmse);
  }
  text << fmt::format("total E: input {:.5f} mm, output {:.5f} mm, delta {:+.5f} mm\n", res.input_extrusion,
                      res.output_extrusion, res.output_extrusion - res.input_extrusion);
  text << "wrote " << out.string() << "\n";

  std::string logged;
  for (const auto& w : res.warnings) logged += "warning: " + w + "\n";
  fs::path report = out;
  report.replace_extension(".report.txt");
  write_text(report, text.str() + logged);
  json j = to_json(res);
  j["input"] = input;
  j["output"] = out.filename().string();
  report.replace_extension(".json");
  write_json(report, j);
  std::cout << text.str();
  return 0;
}

// --- simulate ----------------------------------------------------------------

int cmd_simulate(const Globals& g, const std::string& input, const std::string& model_flag,
                 const std::string& initial, double noise) {
  ProjectConfig config = config_for(g);
  if (!initial.empty()) {
    json j = to_json(config);
    j["initial_width"] = initial;
    config = config_from_json(j);
  }
  if (noise >= 0.0) config.measurement_noise = noise;
  const ModelFile model = model_for(model_flag, config);
  const ToolPath path = parse_gcode(read_text(input));
  const SimulationReport rep = simulate_gcode(path, model, config);

  const fs::path dir = g.out.empty() ? fs::path("simulation") : fs::path(g.out);
  fs::create_directories(dir);
  std::mt19937_64 rng(g.seed);
  json j = to_json(rep);
  j["input"] = input;
  j["seed"] = g.seed;
  j["measurement_noise"] = config.measurement_noise;
  j["profiles"] = json::array();
  for (std::size_t r = 0; r < rep.regions.size(); ++r) {
    const std::string name = fmt::format("region_{:03d}.csv", r + 1);
    const WidthProfile w = config.measurement_noise > 0.0
                               ? add_noise(rep.regions[r].width, config.measurement_noise, rng)
                               : rep.regions[r].width;
    save_profile_csv((dir / name).string(), w);
    j["profiles"].push_back(name);
  }
  write_json(dir / "simulation.json", j);

  std::cout << fmt::format("{} print regions, nominal width {:.4f} mm\n", rep.regions.size(), rep.nominal);
  std::cout << fmt::format("tracking RMSE {:.5f} mm\n", rep.tracking_rmse);
  if (rep.window_samples > 0) {
    std::cout << fmt::format("corners {}: max error {:.5f} mm, variance {:.6f} mm^2 over {} samples\n",
                             rep.corner_count, rep.max_error, rep.corner_variance, rep.window_samples);
  }
  std::cout << "wrote " << dir.string() << "\n";
  return 0;
}

// --- plot --------------------------------------------------------------------

int cmd_plot(const Globals& g, const std::vector<std::string>& inputs) {
  std::vector<PlotSeries> series;
  for (const auto& spec : inputs) series.push_back(read_series(spec));
  const std::string out = g.out.empty() ? "plot.png" : g.out;
  const RgbImage img = render_plot(series);
  save_png(out, img);
  const PlotBounds b = autoscale(series);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const Rgb c = plot_palette()[i % plot_palette().size()];
    std::cout << fmt::format("series {} '{}' color #{:02x}{:02x}{:02x}, {} samples\n", i + 1, series[i].label, c[0],
                             c[1], c[2], series[i].profile.size());
  }
  std::cout << fmt::format("x [{:.4f}, {:.4f}] y [{:.4f}, {:.4f}]\nwrote {}\n", b.x0, b.x1, b.y0, b.y1, out);
  return 0;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("extruflow");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("%l: %v");
  const char* env = std::getenv("EXTRUFLOW_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"extruflow: identify extrusion and corner dynamics, compensate G-code"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "project config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "output file or directory");
  app.add_option("--seed", g.seed, "random seed");

  std::string kind;
  std::string model;
  double speed = 0.0;
  auto* pattern = app.add_subcommand("pattern", "write a calibration pattern");
  pattern->add_option("kind", kind, "extrusion or corner")->required();
  pattern->add_option("--model", model, "model file (corner pattern)");
  pattern->add_option("--speed", speed, "printing speed, mm/min");

  std::string image;
  std::string corners;
  std::string blurry = "auto";
  auto* measure = app.add_subcommand("measure", "measure bead widths in a photo");
  measure->add_option("image", image, "PNG/PGM/PPM photo")->required();
  measure->add_option("--corners", corners, "checkerboard corners CSV (x_px,y_px)")->check(CLI::ExistingFile);
  measure->add_option("--blurry", blurry, "segmentation: on (GMM), off (K-means) or auto")
      ->check(CLI::IsMember({"on", "off", "auto"}));

  std::vector<std::string> ext_profiles;
  std::vector<std::string> corner_profiles;
  double apex = 0.0;
  auto* identify = app.add_subcommand("identify", "identify the model from width profiles");
  identify->add_option("--extrusion", ext_profiles, "extrusion-pattern profiles, 4 per repetition")
      ->check(CLI::ExistingFile);
  identify->add_option("--corner", corner_profiles, "corner-pattern profiles")->check(CLI::ExistingFile);
  identify->add_option("--apex", apex, "apex position in the corner profiles, mm");
  identify->add_option("--model", model, "existing model to extend with corner parameters");

  std::string gcode;
  auto* optimize = app.add_subcommand("optimize", "rewrite G-code with optimal extrusion ratios");
  optimize->add_option("gcode", gcode, "input G-code")->required()->check(CLI::ExistingFile);
  optimize->add_option("--model", model, "model file");

  std::string initial;
  double noise = -1.0;
  auto* simulate = app.add_subcommand("simulate", "simulate printed widths");
  simulate->add_option("gcode", gcode, "input G-code")->required()->check(CLI::ExistingFile);
  simulate->add_option("--model", model, "model file");
  simulate->add_option("--initial", initial, "initial width: primed, nominal or chained")
      ->check(CLI::IsMember({"primed", "nominal", "chained"}));
  simulate->add_option("--noise", noise, "measurement noise added to the written profiles, mm");

  std::vector<std::string> plot_inputs;
  auto* plot = app.add_subcommand("plot", "plot width profiles to PNG");
  plot->add_option("csv", plot_inputs, "profile CSVs, optionally file.csv:column")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*pattern) return cmd_pattern(g, kind, model, speed);
    if (*measure) return cmd_measure(g, image, corners, blurry);
    if (*identify) return cmd_identify(g, ext_profiles, corner_profiles, apex, model);
    if (*optimize) return cmd_optimize(g, gcode, model);
    if (*simulate) return cmd_simulate(g, gcode, model, initial, noise);
    if (*plot) return cmd_plot(g, plot_inputs);
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const DetectionError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 2;
}
