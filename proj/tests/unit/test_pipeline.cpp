#include <algorithm>
#include <cmath>
#include <regex>

#include "doctest.h"
#include "extruflow/errors.hpp"
#include "extruflow/pipeline.hpp"
#include "../support/corpus.hpp"

using namespace extruflow;
using extruflow::testing::generated_corpus;
using extruflow::testing::reference_model;

namespace {

std::vector<std::string> passthrough(const ToolPath& p) {
  std::vector<std::string> out;
  for (const GMove& m : p.moves) out.insert(out.end(), m.passthrough_before.begin(), m.passthrough_before.end());
  out.insert(out.end(), p.trailing.begin(), p.trailing.end());
  return out;
}

bool is_subsequence(const std::vector<std::string>& needle, const std::vector<std::string>& hay) {
  std::size_t j = 0;
  for (const auto& h : hay) {
    if (j < needle.size() && h == needle[j]) ++j;
  }
  return j == needle.size();
}

double non_region_extrusion(const ToolPath& p) {
  double e = 0.0;
  for (const GMove& m : p.moves) {
    if (m.in_place_extrusion) e += m.extrude;
  }
  return e;
}

}  // namespace

TEST_CASE("config round-trips through JSON") {
  nlohmann::json j = {{"target_speed", 2400.0},
                      {"xi_low", 0.02},
                      {"xi_high", 0.06},
                      {"u_min", -2.0},
                      {"u_max", 2.0},
                      {"corner_coupling", "output"},
                      {"initial_width", "chained"},
                      {"checkerboard", {{"rows", 5}, {"cols", 8}, {"square_mm", 4.0}}},
                      {"rois", {{{"name", "a"}, {"x0", 1.0}, {"y0", 2.0}, {"x1", 30.0}, {"y1", 4.0}, {"blurry", true}}}}};
  const ProjectConfig c = config_from_json(j);
  CHECK(c.target_speed == 2400.0);
  CHECK(c.lower_bound() == -2.0);
  CHECK(c.corner_coupling == CornerCoupling::output);
  CHECK(c.initial_width == InitialWidth::chained);
  REQUIRE(c.rois.size() == 1);
  CHECK(c.rois[0].blurry == true);
  const nlohmann::json again = to_json(config_from_json(to_json(c)));
  CHECK(again == to_json(c));
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(config_from_json({{"xi_low", 0.05}, {"xi_high", 0.03}}).validate(), DomainError);
  CHECK_THROWS_AS(config_from_json({{"step", 0.0}}).validate(), DomainError);
  CHECK_THROWS_AS(config_from_json({{"u_min", 0.1}, {"u_max", 0.0}}).validate(), DomainError);
  CHECK_NOTHROW(ProjectConfig{}.validate());
}

TEST_CASE("corpus survives emit-parse-emit") {
  for (const auto& f : generated_corpus(reference_model())) {
    CAPTURE(f.name);
    const ToolPath p = parse_gcode(f.text);
    const std::string once = format_toolpath(p, p.extrusion_mode);
    const ToolPath q = parse_gcode(once);
    CHECK(format_toolpath(q, q.extrusion_mode) == once);
    CHECK(q.total_extrusion() == doctest::Approx(p.total_extrusion()).epsilon(1e-9));
  }
}

TEST_CASE("optimized corpus files are clean and conserve E") {
  const ModelFile model = reference_model();
  const ProjectConfig config;
  const std::regex bad("[XYZEF][-+]?(nan|inf)", std::regex::icase);
  for (const auto& f : generated_corpus(model)) {
    CAPTURE(f.name);
    const ToolPath in = parse_gcode(f.text);
    const OptimizeResult r = optimize_gcode(in, model, config);
    const ToolPath out = parse_gcode(r.gcode);
    CHECK(is_optimized(out));
    CHECK(!std::regex_search(r.gcode, bad));
    CHECK(is_subsequence(passthrough(in), passthrough(out)));
    // Cumulative rounding keeps the file total within half a unit of the fifth decimal.
    CHECK(std::abs(out.total_extrusion() - non_region_extrusion(in) - r.output_extrusion) <= 5e-6 + 1e-9);
    for (const Solution& s : r.solutions) {
      for (double xi : s.controls.xi) {
        CHECK(xi >= config.lower_bound() - 1e-12);
        CHECK(xi <= config.upper_bound() + 1e-12);
      }
    }
    CHECK(r.lines.size() >= 1);
  }
}

TEST_CASE("straight lines get trimming and a steady section only") {
  ModelFile model = reference_model();
  model.corner.reset();
  ProjectConfig config;
  config.u_min = -2.0;
  config.u_max = 2.0;
  const auto corpus = generated_corpus(reference_model());
  const auto it = std::find_if(corpus.begin(), corpus.end(), [](const auto& f) { return f.name == "straight_lines.gcode"; });
  REQUIRE(it != corpus.end());
  const OptimizeResult r = optimize_gcode(parse_gcode(it->text), model, config);
  const double steady = config.nominal(model.extrusion) / model.extrusion.alpha;
  REQUIRE(r.solutions.size() == 3);
  for (const Solution& s : r.solutions) {
    const std::size_t n = s.controls.size();
    for (std::size_t k = n / 3; k < 2 * n / 3; ++k) CHECK(s.controls.xi[k] == doctest::Approx(steady).epsilon(1e-6));
    CHECK(s.controls.xi.back() < 0.0);
  }
}

TEST_CASE("corners without corner parameters ask for calibration") {
  ModelFile model = reference_model();
  model.corner.reset();
  const auto corpus = generated_corpus(reference_model());
  try {
    optimize_gcode(parse_gcode(corpus[0].text), model, ProjectConfig{});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("pattern corner") != std::string::npos);
  }
}

TEST_CASE("re-optimizing warns about double compensation") {
  const ModelFile model = reference_model();
  const auto corpus = generated_corpus(model);
  const OptimizeResult once = optimize_gcode(parse_gcode(corpus[2].text), model, ProjectConfig{});
  CHECK(once.warnings.empty());
  const OptimizeResult twice = optimize_gcode(parse_gcode(once.gcode), model, ProjectConfig{});
  CHECK(std::any_of(twice.warnings.begin(), twice.warnings.end(),
                    [](const std::string& w) { return w.find("compensating twice") != std::string::npos; }));
}

TEST_CASE("optimization is deterministic") {
  const ModelFile model = reference_model();
  const auto corpus = generated_corpus(model);
  const ToolPath p = parse_gcode(corpus[1].text);
  CHECK(optimize_gcode(p, model, ProjectConfig{}).gcode == optimize_gcode(p, model, ProjectConfig{}).gcode);
}

TEST_CASE("pipeline closure: optimizing never worsens tracking") {
  // Certainty equivalence: the controller's corner reference inverts output coupling,
  // so that is the plant that matches the controller.
  const ModelFile model = reference_model();
  ProjectConfig config;
  config.corner_coupling = CornerCoupling::output;
  for (const auto& f : generated_corpus(model)) {
    CAPTURE(f.name);
    const ToolPath in = parse_gcode(f.text);
    const double base = simulate_gcode(in, model, config).tracking_rmse;
    const double opt = simulate_gcode(parse_gcode(optimize_gcode(in, model, config).gcode), model, config).tracking_rmse;
    CHECK(opt <= base);
  }
}

TEST_CASE("simulation metrics on trivial files") {
  const ModelFile model = reference_model();
  ProjectConfig config;
  config.initial_width = InitialWidth::chained;
  const ToolPath zero = parse_gcode("G90\nM83\nG0 X0 Y0 Z0.2\nG1 X20 Y0 E0\n");
  const SimulationReport z = simulate_gcode(zero, model, config);
  REQUIRE(z.regions.size() == 1);
  for (double w : z.regions[0].width.ws()) CHECK(w == 0.0);

  config.initial_width = InitialWidth::nominal;
  const double xi = config.nominal(model.extrusion) / model.extrusion.alpha;
  const ToolPath line = parse_gcode("G90\nM83\nG0 X0 Y0 Z0.2\nG1 X50 Y0 E" + format_number(50 * xi) + "\n");
  const SimulationReport c = simulate_gcode(line, model, config);
  CHECK(c.corner_count == 0);
  CHECK(c.window_samples == 0);
  CHECK(c.corner_variance == 0.0);

  ModelFile straight = model;
  straight.corner.reset();
  const SimulationReport s = simulate_gcode(line, straight, config);
  for (double w : s.regions[0].width.ws()) CHECK(w == doctest::Approx(s.nominal).epsilon(1e-4));
}
