// Acceptance run: one PASS/FAIL line per criterion, plus info lines.
// Exit status is 0 once every criterion has been evaluated; --strict makes it the
// number of failing criteria instead.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "../support/corpus.hpp"
#include "extruflow/corner_model.hpp"
#include "extruflow/gcode_io.hpp"
#include "extruflow/optimal_control.hpp"
#include "extruflow/pipeline.hpp"
#include "extruflow/render.hpp"
#include "extruflow/system_id.hpp"

namespace fs = std::filesystem;
using namespace extruflow;

namespace {

constexpr double kAlpha = 16.98;
constexpr double kTauExpand = 37.81;
constexpr double kTauShrink = 8.80;
constexpr double kV = 66.0;
constexpr double kA = 406.0;
constexpr double kNoise = 0.02;
constexpr double kStep = 0.1;

std::string cli_path = EXTRUFLOW_CLI;
std::vector<std::string> report;
int failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void verdict(int id, const std::string& name, bool pass, const std::string& detail) {
  const std::string line = fmt::format("criterion {} {} {}: {}", id, pass ? "PASS" : "FAIL", name, detail);
  std::cout << line << std::endl;
  report.push_back(line);
  if (!pass) ++failures;
}

void info(const std::string& text) {
  const std::string line = "  info: " + text;
  std::cout << line << std::endl;
  report.push_back(line);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int run(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Test-side plant: w+ = w + (ds/tau)(alpha xi - w), tau by drive direction, clamped at 0.
std::vector<double> plant(const std::vector<double>& xi, double w0, double ds) {
  std::vector<double> w{w0};
  for (double u : xi) {
    const double cur = w.back();
    const double target = kAlpha * u;
    const double tau = target >= cur ? kTauExpand : kTauShrink;
    w.push_back(std::max(0.0, cur + ds / tau * (target - cur)));
  }
  return w;
}

double rmse_tail(const std::vector<double>& w, const std::vector<double>& ref) {
  double ss = 0.0;
  for (std::size_t k = 0; k < ref.size(); ++k) ss += (w[k + 1] - ref[k]) * (w[k + 1] - ref[k]);
  return std::sqrt(ss / static_cast<double>(ref.size()));
}

// --- 1 ------------------------------------------------------------------------

void identification(const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const double xl = 0.03, xh = 0.05;
  const std::vector<std::pair<double, double>> programs{{xl, xl}, {xl, xh}, {xh, xh}, {xh, xl}};
  std::vector<double> ea, ee, es;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::normal_distribution<double> noise(0.0, kNoise);
    std::string args;
    for (std::size_t i = 0; i < programs.size(); ++i) {
      std::vector<double> xi(400);
      for (std::size_t k = 0; k < xi.size(); ++k) xi[k] = k < 200 ? programs[i].first : programs[i].second;
      const std::vector<double> w = plant(xi, kAlpha * xi.front(), kStep);
      WidthProfile p;
      for (std::size_t k = 0; k < w.size(); ++k) p.push_back({kStep * static_cast<double>(k), w[k] + noise(rng)});
      const fs::path csv = dir / fmt::format("s{}_line{}.csv", seed, i + 1);
      save_profile_csv(csv.string(), p);
      args += " " + csv.string();
    }
    const fs::path model = dir / fmt::format("s{}_model.json", seed);
    const int rc = run(fmt::format("{} --out {} identify --extrusion{} >/dev/null 2>&1", cli_path, model.string(), args));
    if (rc != 0) {
      verdict(1, "identification fidelity", false, fmt::format("identify exited with {} on seed {}", rc, seed));
      return;
    }
    const ModelFile m = load_model(model.string());
    ea.push_back(std::abs(m.extrusion.alpha / kAlpha - 1.0));
    ee.push_back(std::abs(m.extrusion.tau_expand / kTauExpand - 1.0));
    es.push_back(std::abs(m.extrusion.tau_shrink / kTauShrink - 1.0));
  }
  const double t = seconds_since(t0);
  const double a = median(ea), e = median(ee), s = median(es);
  verdict(1, "identification fidelity", a <= 0.02 && e <= 0.10 && s <= 0.10 && t < 10.0,
          fmt::format("median |err| alpha {:.2f}% (<= 2%), tau_expand {:.2f}% (<= 10%), tau_shrink {:.2f}% (<= 10%), "
                      "{:.2f} s (< 10 s)",
                      100 * a, 100 * e, 100 * s, t));
}

// --- 2 ------------------------------------------------------------------------

std::vector<CornerProfile> corner_profiles(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, kNoise);
  const double d_tr = kV * kV / (2.0 * kA);
  std::vector<CornerProfile> out;
  for (int c = 0; c < 4; ++c) {
    WidthProfile p;
    for (int i = 0; i < 300; ++i) {
      const double x = 0.05 + kStep * i;
      const double into = x - (30.0 - d_tr);
      const double w = into <= 0.0 ? 0.68 : 0.68 * kV / std::sqrt(kV * kV - 2.0 * kA * into);
      p.push_back({x, w + noise(rng)});
    }
    out.push_back({p, 30.0});
  }
  return out;
}

CornerModel corner_fit() {
  const auto t0 = std::chrono::steady_clock::now();
  const CornerFitResult f = fit_corner_params(corner_profiles(1), 0.68);
  const double t = seconds_since(t0);
  const double ev = f.v_hat / kV - 1.0, ea = f.a_hat / kA - 1.0;
  const double d_true = kV * kV / (2.0 * kA);
  verdict(2, "corner-fit fidelity", std::abs(ev) <= 0.05 && std::abs(ea) <= 0.05 && t < 5.0,
          fmt::format("v {:.2f} ({:+.1f}%), a {:.1f} ({:+.1f}%), 5% required; {:.2f} s (< 5 s)", f.v_hat, 100 * ev,
                      f.a_hat, 100 * ea, t));
  info(fmt::format("the width law depends on v and a only through d_tr = v^2/2a; fit condition {:.2g}", f.condition));
  info(fmt::format("d_tr {:.4f} mm against {:.4f} mm ({:+.2f}%)", f.d_tr(), d_true, 100 * (f.d_tr() / d_true - 1.0)));
  std::vector<double> derr;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    derr.push_back(std::abs(fit_corner_params(corner_profiles(seed), 0.68).d_tr() / d_true - 1.0));
  }
  info(fmt::format("d_tr median |err| over 20 seeds {:.2f}%", 100 * median(derr)));
  return {f.v_hat, f.a_hat};
}

// --- 3 ------------------------------------------------------------------------

void tracking() {
  const auto t0 = std::chrono::steady_clock::now();
  const ExtrusionModel model{kAlpha, kTauExpand, kTauShrink, 0.03, 0.05};
  bool pass = true;
  std::string detail;
  for (const auto [from, to] : {std::pair{0.509, 0.849}, std::pair{0.849, 0.509}}) {
    TrackingProblem p;
    for (int k = 0; k < 400; ++k) p.reference.push_back(kStep * (k + 1) <= 20.0 + 1e-9 ? from : to);
    p.model = model;
    p.xi_min = -2.0;
    p.xi_max = 2.0;
    p.w0 = from;
    p.step = kStep;
    const Solution s = solve_per_regime(p);
    const double opt = rmse_tail(plant(s.controls.xi, from, kStep), p.reference);
    std::vector<double> xi;
    for (double r : p.reference) xi.push_back(r / kAlpha);
    const double base = rmse_tail(plant(xi, from, kStep), p.reference);
    const double improvement = 1.0 - opt / base;
    pass = pass && opt <= 0.02 && base >= 3.0 * opt && improvement >= 0.60;
    const std::string ratio = base > 1e6 * opt ? std::string("> 1e6x") : fmt::format("{:.1f}x", base / opt);
    detail += fmt::format("{:.3f}->{:.3f}: optimized {:.4f} mm (<= 0.02), baseline {:.4f} mm ({}, >= 3x), "
                          "improvement {:.1f}% (>= 60%); ",
                          from, to, opt, base, ratio, 100 * improvement);
  }
  const double t = seconds_since(t0);
  verdict(3, "tracking improvement", pass && t < 5.0, detail + fmt::format("{:.2f} s (< 5 s)", t));
}

// --- 4 ------------------------------------------------------------------------

struct CornerOutcome {
  double base_max, base_var, opt_max, opt_var;
};

CornerOutcome corner_run(const ModelFile& model, const ProjectConfig& config) {
  const double zeta = config.nominal(model.extrusion) / model.extrusion.alpha;
  const ToolPath pattern = generate_corner_pattern(zeta, config.target_speed, {}, *model.corner);
  const SimulationReport base = simulate_gcode(pattern, model, config);
  const OptimizeResult opt = optimize_gcode(pattern, model, config);
  const SimulationReport after = simulate_gcode(parse_gcode(opt.gcode), model, config);
  return {base.max_error, base.corner_variance, after.max_error, after.corner_variance};
}

void corner_compensation(const CornerModel& identified) {
  ModelFile model;
  model.extrusion = {kAlpha, kTauExpand, kTauShrink, 0.03, 0.05};
  model.corner = identified;
  const auto t0 = std::chrono::steady_clock::now();
  const CornerOutcome o = corner_run(model, ProjectConfig{});
  const double t = seconds_since(t0);
  const double rm = 1.0 - o.opt_max / o.base_max, rv = 1.0 - o.opt_var / o.base_var;
  verdict(4, "corner compensation", rm >= 0.40 && rv >= 0.45 && t < 10.0,
          fmt::format("max error {:.4f} -> {:.4f} mm ({:.1f}%, >= 40%), variance {:.6f} -> {:.6f} mm^2 ({:.1f}%, "
                      ">= 45%); {:.2f} s (< 10 s)",
                      o.base_max, o.opt_max, 100 * rm, o.base_var, o.opt_var, 100 * rv, t));
  for (const auto coupling : {CornerCoupling::input, CornerCoupling::output}) {
    for (const bool wide : {false, true}) {
      if (coupling == CornerCoupling::input && !wide) continue;
      ProjectConfig c;
      c.corner_coupling = coupling;
      if (wide) {
        c.u_min = -2.0;
        c.u_max = 2.0;
      }
      const CornerOutcome v = corner_run(model, c);
      info(fmt::format("{} coupling, bounds {}: max error {:.1f}%, variance {:.1f}% reduction",
                       coupling == CornerCoupling::input ? "input" : "output", wide ? "[-2, 2]" : "[0.03, 0.05]",
                       100 * (1.0 - v.opt_max / v.base_max), 100 * (1.0 - v.opt_var / v.base_var)));
    }
  }
}

// --- 5 ------------------------------------------------------------------------

struct Oracle {
  Eigen::MatrixXd M;
  Eigen::VectorXd b;  // objective ||M xi - b||^2
};

Oracle condensed(const TrackingProblem& p, const std::vector<Regime>& regimes) {
  const std::size_t n = p.horizon();
  Oracle o{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)),
           Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))};
  std::vector<double> a(n), bb(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double tau = regimes[k] == Regime::expand   ? p.model.tau_expand
                       : regimes[k] == Regime::shrink ? p.model.tau_shrink
                                                      : 0.5 * (p.model.tau_expand + p.model.tau_shrink);
    a[k] = 1.0 - p.step / tau;
    bb[k] = p.model.alpha * p.step / tau;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double free = p.w0;
    for (std::size_t k = 0; k <= i; ++k) free *= a[k];
    o.b[static_cast<Eigen::Index>(i)] = p.reference[i] - free;
    for (std::size_t j = 0; j <= i; ++j) {
      double g = bb[j];
      for (std::size_t k = j + 1; k <= i; ++k) g *= a[k];
      o.M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = g;
    }
  }
  return o;
}

double objective(const Oracle& o, const Eigen::VectorXd& x) { return (o.M * x - o.b).squaredNorm(); }

// Exhaustive active-set enumeration: each variable free, at its lower or at its upper bound.
double enumerate(const Oracle& o, double lo, double hi) {
  const Eigen::Index n = o.M.cols();
  int combos = 1;
  for (Eigen::Index i = 0; i < n; ++i) combos *= 3;
  double best = std::numeric_limits<double>::infinity();
  for (int c = 0; c < combos; ++c) {
    Eigen::VectorXd x(n);
    std::vector<Eigen::Index> free;
    int code = c;
    for (Eigen::Index i = 0; i < n; ++i, code /= 3) {
      if (code % 3 == 0) free.push_back(i);
      x[i] = code % 3 == 1 ? lo : hi;
    }
    if (!free.empty()) {
      Eigen::MatrixXd Mf(n, static_cast<Eigen::Index>(free.size()));
      Eigen::VectorXd rhs = o.b;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (std::find(free.begin(), free.end(), i) == free.end()) rhs -= o.M.col(i) * x[i];
      }
      for (std::size_t f = 0; f < free.size(); ++f) Mf.col(static_cast<Eigen::Index>(f)) = o.M.col(free[f]);
      const Eigen::VectorXd xf = Mf.colPivHouseholderQr().solve(rhs);
      bool feasible = true;
      for (std::size_t f = 0; f < free.size(); ++f) {
        const double v = xf[static_cast<Eigen::Index>(f)];
        feasible = feasible && v >= lo - 1e-12 && v <= hi + 1e-12;
        x[free[f]] = v;
      }
      if (!feasible) continue;
    }
    best = std::min(best, objective(o, x));
  }
  return best;
}

void qp_correctness() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_rel = 0.0, worst_kkt = 0.0, worst_ls = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    TrackingProblem p;
    const std::size_t n = 1 + static_cast<std::size_t>(u(rng) * 8.0) % 8;
    p.model = {5.0 + 15.0 * u(rng), 5.0 + 35.0 * u(rng), 5.0 + 35.0 * u(rng), 0.03, 0.05};
    p.step = 0.1 + 1.9 * u(rng);
    p.w0 = u(rng);
    for (std::size_t k = 0; k < n; ++k) p.reference.push_back(u(rng));
    p.xi_min = 0.05 * u(rng);
    p.xi_max = p.xi_min + 0.005 + 0.05 * u(rng);
    std::vector<Regime> regimes;
    for (std::size_t k = 0; k < n; ++k) regimes.push_back(u(rng) < 0.5 ? Regime::expand : Regime::shrink);

    const Oracle o = condensed(p, regimes);
    const Solution s = solve(p, regimes);
    Eigen::VectorXd x(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) x[static_cast<Eigen::Index>(k)] = s.controls.xi[k];
    const double f = objective(o, x);
    const double best = enumerate(o, p.xi_min, p.xi_max);
    worst_rel = std::max(worst_rel, std::abs(f - best) / std::max(best, 1e-12));
    const Eigen::VectorXd grad = 2.0 * o.M.transpose() * (o.M * x - o.b);
    const Eigen::VectorXd proj = (x - grad).cwiseMax(p.xi_min).cwiseMin(p.xi_max);
    worst_kkt = std::max(worst_kkt, (x - proj).lpNorm<Eigen::Infinity>());

    p.xi_min = -1e6;
    p.xi_max = 1e6;
    const Solution free = solve(p, regimes);
    const Eigen::VectorXd ls = o.M.colPivHouseholderQr().solve(o.b);
    for (std::size_t k = 0; k < n; ++k) {
      const double v = ls[static_cast<Eigen::Index>(k)];
      worst_ls = std::max(worst_ls, std::abs(free.controls.xi[k] - v) / std::max(1.0, std::abs(v)));
    }
  }
  verdict(5, "QP correctness", worst_rel <= 1e-6 && worst_kkt <= 1e-8 && worst_ls <= 1e-6,
          fmt::format("200 instances, horizon <= 8: objective vs enumeration {:.2e} (<= 1e-6 rel), KKT {:.2e} "
                      "(<= 1e-8), unconstrained vs least squares {:.2e} (<= 1e-6)",
                      worst_rel, worst_kkt, worst_ls));
}

// --- 6 ------------------------------------------------------------------------

void reference_construction(const CornerModel& c) {
  const double len = 40.0, w = 0.5;
  const double d = c.d_tr();
  const auto eq = [&](double x) {  // the five stages, written out independently
    if (x <= w / 2) return 0.0;
    if (x <= d) return std::sqrt(2.0 * c.decel * x) / c.v_const * w;
    if (x <= len - d) return w;
    if (x <= len - w / 2) return std::sqrt(c.v_const * c.v_const - 2.0 * c.decel * (x - (len - d))) / c.v_const * w;
    return 0.0;
  };
  const auto ref = [&](double x) { return reference_value(c, len, w, x).value; };
  double boundary = 0.0;
  for (double x : {w / 2, d, len - d, len - w / 2}) boundary = std::max(boundary, std::abs(ref(x) - eq(x)));
  double jump = 0.0;
  for (double x : {d, len - d}) {
    jump = std::max(jump, std::abs(ref(std::nextafter(x, 0.0)) - ref(x)));
    jump = std::max(jump, std::abs(ref(std::nextafter(x, len)) - ref(x)));
  }
  const double trim_jump = std::abs(ref(std::nextafter(w / 2, len)) - std::sqrt(2.0 * c.decel * (w / 2)) / c.v_const * w);
  double mirror = 0.0, interior = 0.0;
  for (int i = 1; i < 4000; ++i) {
    const double x = 0.01 * i + 0.0031;  // off the half-open trim boundaries
    if (x >= len) break;
    mirror = std::max(mirror, std::abs(ref(x) - ref(len - x)));
    interior = std::max(interior, std::abs(ref(x) - eq(x)));
  }
  verdict(6, "reference construction",
          boundary <= 1e-9 && jump <= 1e-9 && mirror <= 1e-9 && interior <= 1e-9 && trim_jump <= 1e-9,
          fmt::format("boundary values {:.1e}, stage II-IV continuity {:.1e}, mirror {:.1e}, all samples {:.1e}, "
                      "trim jump vs ramp {:.1e} (each <= 1e-9; d_tr {:.4f} mm)",
                      boundary, jump, mirror, interior, trim_jump, d));
}

// --- 7 ------------------------------------------------------------------------

void vision() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> widths{0.45, 0.60, 0.75, 0.90};
  Scene scene;
  scene.board = {6, 8, 4.0};
  for (std::size_t i = 0; i < widths.size(); ++i) scene.lines.push_back({40.0, 2.0 + 8.0 * i, 30.0, widths[i]});
  scene.min_x = -10.0;
  scene.max_x = 75.0;
  scene.min_y = -10.0;
  scene.max_y = 32.0;
  const Camera cam = tilted_camera(scene, 25.0, 20.0);

  ProjectConfig config;
  config.board = scene.board;
  config.frame.origin_x_mm = -10.0;
  config.frame.origin_y_mm = -10.0;
  config.frame.px_per_mm = 20.0;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const double y = 2.0 + 8.0 * i;
    config.rois.push_back({fmt::format("line{}", i + 1), 42.0, y - 1.5, 68.0, y + 1.5, std::nullopt});
  }
  const auto squared_errors = [&](const ImageMeasurement& m, double& ss, std::size_t& n) {
    for (std::size_t i = 0; i < m.rois.size(); ++i) {
      for (const auto& s : m.rois[i].profile.samples()) {
        ss += (s.w - widths[i]) * (s.w - widths[i]);
        ++n;
      }
    }
  };
  RenderOptions sharp_opt;
  sharp_opt.noise_sigma = 0.02;
  sharp_opt.seed = 7;
  RenderOptions blur_opt = sharp_opt;
  blur_opt.blur_sigma_px = 3.0;
  const GrayImage sharp = render_scene(scene, cam, sharp_opt);
  const GrayImage blurred = render_scene(scene, cam, blur_opt);

  double ss_sharp = 0.0, ss_gmm = 0.0, ss_km = 0.0;
  std::size_t n_sharp = 0, n_gmm = 0, n_km = 0;
  squared_errors(measure_image(sharp, config, BlurMode::off), ss_sharp, n_sharp);
  squared_errors(measure_image(blurred, config, BlurMode::on), ss_gmm, n_gmm);
  squared_errors(measure_image(blurred, config, BlurMode::off), ss_km, n_km);
  const double t = seconds_since(t0);
  const double policy = std::sqrt((ss_sharp + ss_gmm) / static_cast<double>(n_sharp + n_gmm));
  const double gmm = std::sqrt(ss_gmm / static_cast<double>(n_gmm));
  const double km = std::sqrt(ss_km / static_cast<double>(n_km));
  verdict(7, "vision accuracy", policy <= 0.05 && gmm < km && t < 30.0,
          fmt::format("policy RMSE {:.4f} mm (<= 0.05), blurred GMM {:.4f} vs K-means {:.4f} mm (GMM < K-means "
                      "required); {:.2f} s (< 30 s)",
                      policy, gmm, km, t));
  info(fmt::format("sharp subset, K-means: RMSE {:.4f} mm", std::sqrt(ss_sharp / static_cast<double>(n_sharp))));
}

// --- 8 ------------------------------------------------------------------------

void gcode_integrity() {
  const ModelFile model = testing::reference_model();
  const std::regex bad("[XYZEF][-+]?(nan|inf)", std::regex::icase);
  bool fixed_point = true, sums = true, clean = true, preserved = true;
  double worst_dev = 0.0;
  std::string sum_detail;
  for (const auto& f : testing::generated_corpus(model)) {
    const ToolPath p = parse_gcode(f.text);
    const std::string once = format_toolpath(p, p.extrusion_mode);
    const ToolPath q = parse_gcode(once);
    fixed_point = fixed_point && format_toolpath(q, q.extrusion_mode) == once;

    const OptimizeResult r = optimize_gcode(p, model, ProjectConfig{});
    const ToolPath out = parse_gcode(r.gcode);
    const std::string again = format_toolpath(out, out.extrusion_mode);
    fixed_point = fixed_point && format_toolpath(parse_gcode(again), out.extrusion_mode) == again;
    clean = clean && !std::regex_search(r.gcode, bad);

    double in_place = 0.0;
    for (const GMove& m : p.moves) {
      if (m.in_place_extrusion) in_place += m.extrude;
    }
    std::size_t segments = 0;
    for (const Solution& s : r.solutions) segments += s.controls.size();
    const double dev = std::abs(out.total_extrusion() - in_place - r.output_extrusion);
    const double tol = 1e-6 * static_cast<double>(segments) / 1e4;
    worst_dev = std::max(worst_dev, dev);
    if (dev > tol) {
      sums = false;
      sum_detail += fmt::format(" {} {:.1e} > {:.1e};", f.name, dev, tol);
    }

    std::vector<std::string> before, after;
    const auto collect = [](const ToolPath& t, std::vector<std::string>& lines) {
      for (const GMove& m : t.moves) lines.insert(lines.end(), m.passthrough_before.begin(), m.passthrough_before.end());
      lines.insert(lines.end(), t.trailing.begin(), t.trailing.end());
    };
    collect(p, before);
    collect(out, after);
    std::size_t j = 0;
    for (const auto& line : after) {
      if (j < before.size() && line == before[j]) ++j;
    }
    preserved = preserved && j == before.size();
  }
  verdict(8, "G-code integrity", fixed_point && sums && clean && preserved,
          fmt::format("fixed point {}, E sum within 1e-6 mm per 1e4 segments {}{}, no NaN/inf {}, passthrough kept {}",
                      fixed_point ? "yes" : "no", sums ? "yes" : "no", sum_detail, clean ? "yes" : "no",
                      preserved ? "yes" : "no"));
  info(fmt::format("largest E-sum deviation {:.2e} mm; five-decimal output bounds it by 5e-6 mm at any length",
                   worst_dev));
}

// --- 9 ------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool pipeline(const fs::path& dir) {
  fs::create_directories(dir);
  ModelFile truth = testing::reference_model();
  save_model((dir / "truth.json").string(), truth);
  {
    std::ofstream cfg(dir / "config.json");
    cfg << R"({"initial_width": "primed", "measurement_noise": 0.02, "corner_coupling": "output"})";
  }
  std::ofstream(dir / "tower.gcode") << testing::generated_corpus(truth).front().text;
  const std::string x = fmt::format("cd {} && {} --config config.json --seed 11", dir.string(), cli_path);
  const std::vector<std::string> steps{
      "--out ext.gcode pattern extrusion",
      "--out meas_ext simulate ext.gcode --model truth.json",
      "--out model.json identify --extrusion meas_ext/region_001.csv meas_ext/region_002.csv "
      "meas_ext/region_003.csv meas_ext/region_004.csv",
      "--out corner.gcode pattern corner --model model.json",
      "--out meas_corner simulate corner.gcode --model truth.json",
      "--out model2.json identify --model model.json --corner meas_corner/region_001.csv "
      "meas_corner/region_002.csv meas_corner/region_003.csv meas_corner/region_004.csv",
      "--out tower.opt.gcode optimize tower.gcode --model model2.json",
      "--out sim_opt simulate tower.opt.gcode --model truth.json",
  };
  for (const auto& s : steps) {
    if (run(fmt::format("{} {} > /dev/null 2>&1", x, s)) != 0) {
      info("pipeline step failed: " + s);
      return false;
    }
  }
  return true;
}

void determinism(const fs::path& root) {
  const fs::path a = root / "run_a", b = root / "run_b";
  if (!pipeline(a) || !pipeline(b)) {
    verdict(9, "determinism", false, "pipeline did not complete");
    return;
  }
  std::size_t files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++differing;
  }
  verdict(9, "determinism", files > 0 && differing == 0,
          fmt::format("{} artifacts compared, {} differ", files, differing));
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--strict") strict = true;
    if (arg == "--cli" && i + 1 < argc) cli_path = argv[++i];
  }
  const fs::path root = fs::temp_directory_path() / fmt::format("extruflow_acceptance_{}", ::getpid());
  fs::create_directories(root / "identify");
  try {
    identification(root / "identify");
    const CornerModel identified = corner_fit();
    tracking();
    corner_compensation(identified);
    qp_correctness();
    reference_construction(identified);
    vision();
    gcode_integrity();
    determinism(root);
  } catch (const std::exception& e) {
    std::cout << "acceptance run aborted: " << e.what() << std::endl;
    fs::remove_all(root);
    return 100;
  }
  fs::remove_all(root);
  std::cout << fmt::format("{} of 9 criteria pass", 9 - failures) << std::endl;
  return strict ? failures : 0;
}
