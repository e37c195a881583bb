#include "extruflow/system_id.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <array>
#include <numeric>

#include <boost/math/tools/minima.hpp>
#include <fmt/format.h>

#include "extruflow/errors.hpp"
#include "extruflow/lm.hpp"

namespace extruflow {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of nothing");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

double sample_pitch(const WidthProfile& p) {
  std::vector<double> d;
  for (std::size_t i = 1; i < p.size(); ++i) d.push_back(p[i].x - p[i - 1].x);
  return median(std::move(d));
}

}  // namespace

WidthStats estimate_constant_width(std::span<const double> samples) {
  if (samples.size() < 10) {
    throw DataError(fmt::format("constant-width estimate needs at least 10 samples, got {}", samples.size()));
  }
  const double n = static_cast<double>(samples.size());
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  return {mean, std::sqrt(ss / n)};
}

double estimate_alpha(double w_low, double w_high, double xi_low, double xi_high) {
  if (!(xi_low > 0.0) || !(xi_high > 0.0) || !(w_low > 0.0) || !(w_high > 0.0)) {
    throw ContractError("width and ratio values must be positive");
  }
  return 0.5 * (w_high / xi_high + w_low / xi_low);
}

StepFitResult fit_time_constant(const WidthProfile& profile, double w_minus, double w_plus, double transition_x) {
  if (w_minus == w_plus) throw ContractError("step levels must differ");
  std::vector<double> u;
  std::vector<double> w;
  for (const auto& s : profile.samples()) {
    if (s.x >= transition_x) {
      u.push_back(s.x - transition_x);
      w.push_back(s.w);
    }
  }
  if (u.size() < 3) throw DataError("fewer than 3 samples past the transition");
  const double ds = sample_pitch(profile);
  const double span = u.back();
  const double delta = w_plus - w_minus;
  auto sse = [&](double log_tau) {
    const double tau = std::exp(log_tau);
    double sum = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double e = w[i] - (w_minus + delta * (1.0 - std::exp(-u[i] / tau)));
      sum += e * e;
    }
    return sum;
  };
  const double lo = std::log(ds);
  const double hi = std::log(10.0 * span);
  if (!(lo < hi)) throw DataError("profile too short to fit a time constant");
  const auto [log_tau, best] = boost::math::tools::brent_find_minima(sse, lo, hi, 40);

  StepFitResult out;
  out.tau = std::exp(log_tau);
  out.w_minus = w_minus;
  out.w_plus = w_plus;
  out.residual_rmse = std::sqrt(best / static_cast<double>(u.size()));
  const double pinned = 1e-4 * (hi - lo);
  if (log_tau - lo < pinned || hi - log_tau < pinned) {
    throw DataError(fmt::format("time-constant fit pinned at {:.4f} mm (bounds {:.4f}..{:.4f}); residual rmse {:.5f} mm",
                                out.tau, std::exp(lo), std::exp(hi), out.residual_rmse));
  }
  if (span < 3.0 * out.tau) {
    out.warnings.push_back(fmt::format("profile covers {:.1f} mm past the step, less than 3 tau ({:.1f} mm)", span,
                                       3.0 * out.tau));
  }
  return out;
}

double recursion_time_constant(double tau_continuous, double ds) {
  if (!(tau_continuous > 0.0) || !(ds > 0.0)) throw ContractError("tau and ds must be positive");
  return ds / -std::expm1(-ds / tau_continuous);
}

double detect_step_transition(const WidthProfile& profile, double w_minus, double w_plus,
                              std::optional<double> sigma, std::optional<double> designed_x) {
  if (!sigma) {
    if (designed_x) return *designed_x;
    throw ContractError("step detection needs a noise level or a designed location");
  }
  const double dir = w_plus > w_minus ? 1.0 : -1.0;
  const double limit = 3.0 * *sigma;
  const auto departs = [&](std::size_t i) { return dir * (profile[i].w - w_minus) > limit; };
  for (std::size_t i = 0; i + 2 < profile.size(); ++i) {
    if (departs(i) && departs(i + 1) && departs(i + 2)) return profile[i].x;
  }
  throw DetectionError("no departure from the initial width level was found");
}

double corner_width_model(double v, double a, double w_nominal, double distance_to_apex) {
  const double d_tr = v * v / (2.0 * a);
  if (distance_to_apex >= d_tr) return w_nominal;
  // v / sqrt(v^2 - 2a(d_tr - s)) reduces to sqrt(d_tr / s).
  return w_nominal * std::sqrt(d_tr / distance_to_apex);
}

namespace {

struct NormalizedCorner {
  std::vector<double> s;  // distance to apex, > 0
  std::vector<double> w;  // rescaled width
  double level = 0.0;
};

NormalizedCorner normalize_corner(const CornerProfile& p, double w_nominal, std::size_t index) {
  NormalizedCorner out;
  // Within w/2 of the apex the outgoing leg's bead covers the line.
  const double covered = 0.5 * w_nominal;
  for (const auto& sample : p.width.samples()) {
    if (sample.x < p.apex_x - covered) {
      out.s.push_back(p.apex_x - sample.x);
      out.w.push_back(sample.w);
    }
  }
  if (out.s.size() < 8) throw DataError(fmt::format("corner {}: fewer than 8 samples before the apex", index));
  // Plateau: the second quarter from the far end. Legs of at least 4 d_tr keep it clear of
  // both the rise toward the apex and the leg's own start-from-rest transient.
  const std::size_t quarter = std::max<std::size_t>(2, out.w.size() / 4);
  const std::vector<double> plateau(out.w.begin() + static_cast<std::ptrdiff_t>(quarter),
                                    out.w.begin() + static_cast<std::ptrdiff_t>(2 * quarter));
  const double level = median(plateau);
  if (!(level > 0.0)) throw DataError(fmt::format("corner {}: plateau width is zero", index));
  const double scale = w_nominal / level;
  for (double& w : out.w) w *= scale;

  std::vector<double> dev;
  for (double w : plateau) dev.push_back(std::abs(w * scale - w_nominal));
  const double sigma = std::max(1.4826 * median(std::move(dev)), 1e-9 * w_nominal);

  // The rise is the raised run ending at the apex; scanning backwards stops at three
  // consecutive plateau samples, so a start-from-rest transient at the far end is ignored.
  const auto up = [&](std::size_t k) { return out.w[k] - w_nominal > 3.0 * sigma; };
  std::size_t onset = out.w.size();
  std::size_t quiet = 0;
  for (std::size_t i = out.w.size(); i-- > 0;) {
    if (up(i)) {
      onset = i;
      quiet = 0;
    } else if (++quiet == 3) {
      break;
    }
  }
  if (onset + 3 > out.w.size()) onset = out.w.size();
  if (onset == out.w.size()) throw DataError(fmt::format(
        "corner {}: no width rise before the apex (a rise that only starts at the apex is lagged by the "
        "extrusion dynamics, which the static corner width law does not describe)",
        index));
  const std::size_t rise = out.w.size() - onset;
  if (rise >= 8) {
    const std::size_t block = rise / 4;
    double prev = -1.0;
    for (std::size_t b = 0; b < 4; ++b) {
      double m = 0.0;
      for (std::size_t k = 0; k < block; ++k) m += out.w[onset + b * block + k];
      m /= static_cast<double>(block);
      if (m + 3.0 * sigma / std::sqrt(static_cast<double>(block)) < prev) {
        throw DataError(fmt::format("corner {}: width does not increase toward the apex", index));
      }
      prev = m;
    }
  }
  // Fit only the neighbourhood of the rise: the plateau out to twice the onset distance.
  const double reach = std::min(2.0 * out.s[onset], out.s[quarter]);
  NormalizedCorner fit;
  fit.level = level;
  for (std::size_t k = 0; k < out.s.size(); ++k) {
    if (out.s[k] <= reach) {
      fit.s.push_back(out.s[k]);
      fit.w.push_back(out.w[k]);
    }
  }
  return fit;
}

struct GridFit {
  double v = 0.0;
  double a = 0.0;
  double cost = 0.0;
  double condition = 0.0;
  std::size_t samples = 0;
};

GridFit multistart_fit(std::span<const NormalizedCorner> corners, double w_nominal) {
  std::size_t total = 0;
  for (const auto& c : corners) total += c.s.size();
  const ResidualFn residuals = [&](const Eigen::VectorXd& p) {
    const double v = std::exp(p[0]);
    const double a = std::exp(p[1]);
    Eigen::VectorXd r(static_cast<Eigen::Index>(total));
    Eigen::Index i = 0;
    for (const auto& c : corners) {
      for (std::size_t k = 0; k < c.s.size(); ++k) r[i++] = c.w[k] - corner_width_model(v, a, w_nominal, c.s[k]);
    }
    return r;
  };
  constexpr int kGrid = 5;
  GridFit best;
  best.cost = std::numeric_limits<double>::infinity();
  for (int iv = 0; iv < kGrid; ++iv) {
    for (int ia = 0; ia < kGrid; ++ia) {
      const double v0 = 10.0 * std::pow(200.0 / 10.0, iv / double(kGrid - 1));
      const double a0 = 50.0 * std::pow(5000.0 / 50.0, ia / double(kGrid - 1));
      Eigen::VectorXd p(2);
      p << std::log(v0), std::log(a0);
      const LmResult r = levenberg_marquardt(residuals, p);
      if (r.cost < best.cost) {
        best = {std::exp(r.params[0]), std::exp(r.params[1]), r.cost, r.condition, total};
      }
    }
  }
  return best;
}

}  // namespace

CornerFitResult fit_corner_params(std::span<const CornerProfile> profiles, double w_nominal) {
  if (!(w_nominal > 0.0)) throw ContractError("nominal width must be positive");
  if (profiles.empty()) throw ContractError("no corner profiles");
  std::vector<NormalizedCorner> corners;
  for (std::size_t i = 0; i < profiles.size(); ++i) corners.push_back(normalize_corner(profiles[i], w_nominal, i));

  CornerFitResult out;
  const GridFit joint = multistart_fit(corners, w_nominal);
  out.v_hat = joint.v;
  out.a_hat = joint.a;
  out.residual_rmse = std::sqrt(2.0 * joint.cost / static_cast<double>(joint.samples));
  out.condition = joint.condition;
  if (!(joint.condition < 1e10)) {
    out.warnings.push_back(fmt::format(
        "v and a are not separately determined by the profiles (condition {:.3g}); only v^2/(2a) = {:.4f} mm is",
        joint.condition, out.d_tr()));
  }
  for (const auto& c : corners) {
    out.plateau.push_back(c.level);
    out.window.emplace_back(*std::min_element(c.s.begin(), c.s.end()), *std::max_element(c.s.begin(), c.s.end()));
    const GridFit f = multistart_fit(std::span<const NormalizedCorner>(&c, 1), w_nominal);
    out.per_corner.push_back({f.v, f.a, std::sqrt(2.0 * f.cost / static_cast<double>(f.samples))});
  }
  return out;
}

ToolPath generate_extrusion_pattern(double xi_low, double xi_high, double speed_mm_min,
                                    const PatternGeometry& g) {
  if (!(xi_low > 0.0) || !(xi_high > xi_low)) throw ContractError("need 0 < xi_low < xi_high");
  if (!(speed_mm_min > 0.0)) throw ContractError("speed must be positive");
  if (!(g.line_length > 0.0) || !(g.spacing > 0.0)) throw ContractError("pattern lines need a positive length and spacing");
  if (!(2.0 * g.margin < g.line_length)) throw ContractError("measurement margins exceed the line length");

  GcodeWriter w(ExtrusionMode::relative);
  w.comment(kToolVersion);
  w.comment(fmt::format("pattern extrusion xi_low={} xi_high={} speed={}", format_number(xi_low),
                        format_number(xi_high), format_number(speed_mm_min)));
  w.preamble();
  const std::array<std::pair<double, double>, 4> programs{
      {{xi_low, xi_low}, {xi_low, xi_high}, {xi_high, xi_high}, {xi_high, xi_low}}};
  const double half = 0.5 * g.line_length;
  for (std::size_t i = 0; i < programs.size(); ++i) {
    const double y = g.origin_y + static_cast<double>(i) * g.spacing;
    const double x0 = g.origin_x;
    const auto [first, second] = programs[i];
    w.travel({x0, y, g.z}, speed_mm_min);
    w.comment(fmt::format("line {} xi {} -> {} step_at={}", i + 1, format_number(first), format_number(second),
                          format_number(half)));
    w.comment(fmt::format("measure line={} from={} to={}", i + 1, format_number(g.margin),
                          format_number(g.line_length - g.margin)));
    w.extrude({x0 + half, y, g.z}, first * half, speed_mm_min);
    w.extrude({x0 + g.line_length, y, g.z}, second * half, speed_mm_min);
  }
  return parse_gcode(w.str());
}

ToolPath generate_corner_pattern(double zeta, double speed_mm_min, const CornerPatternGeometry& g,
                                 const CornerModel& expected) {
  if (!(zeta > 0.0)) throw ContractError("corner pattern ratio must be positive");
  if (!(speed_mm_min > 0.0)) throw ContractError("speed must be positive");
  expected.validate();
  if (g.leg_length < 4.0 * expected.d_tr()) {
    throw ContractError(fmt::format("legs of {} mm are shorter than 4 transient distances ({:.2f} mm)",
                                    g.leg_length, 4.0 * expected.d_tr()));
  }
  GcodeWriter w(ExtrusionMode::relative);
  w.comment(kToolVersion);
  w.comment(fmt::format("pattern corner zeta={} speed={}", format_number(zeta), format_number(speed_mm_min)));
  w.preamble();
  for (int i = 0; i < 4; ++i) {
    const double x0 = g.origin_x + i * (g.leg_length + g.spacing);
    const double y0 = g.origin_y;
    w.travel({x0, y0, g.z}, speed_mm_min);
    w.comment(fmt::format("corner {} apex_at={}", i + 1, format_number(g.leg_length)));
    w.extrude({x0 + g.leg_length, y0, g.z}, zeta * g.leg_length, speed_mm_min);
    w.extrude({x0 + g.leg_length, y0 + g.leg_length, g.z}, zeta * g.leg_length, speed_mm_min);
  }
  return parse_gcode(w.str());
}

ExtrusionIdentification identify_extrusion(std::span<const WidthProfile> lines, const ExtrusionIdOptions& o) {
  if (lines.size() != 4) throw ContractError(fmt::format("extrusion pattern has 4 lines, got {}", lines.size()));
  const auto window = [&](const WidthProfile& p) {
    const double end = p[p.size() - 1].x;
    return p.slice(p[0].x + o.margin, end - o.margin);
  };
  ExtrusionIdentification out;
  out.low = estimate_constant_width(window(lines[0]).ws());
  out.high = estimate_constant_width(window(lines[2]).ws());
  out.alpha = estimate_alpha(out.low.mean, out.high.mean, o.xi_low, o.xi_high);
  const double w_low = out.alpha * o.xi_low;
  const double w_high = out.alpha * o.xi_high;
  const double sigma = 0.5 * (out.low.std + out.high.std);

  const auto fit = [&](const WidthProfile& line, double from, double to) {
    const WidthProfile part = line.slice(line[0].x, line[line.size() - 1].x - o.margin);
    double x_t = o.transition_x;
    if (o.detect_transition) x_t = detect_step_transition(part, from, to, sigma, o.transition_x);
    StepFitResult r = fit_time_constant(part, from, to, x_t);
    for (auto& wmsg : r.warnings) out.warnings.push_back(wmsg);
    return r;
  };
  out.expand_fit = fit(lines[1], w_low, w_high);
  out.shrink_fit = fit(lines[3], w_high, w_low);
  out.tau_expand = out.expand_fit.tau;
  out.tau_shrink = out.shrink_fit.tau;
  if (o.recursion_consistent) {
    out.tau_expand = recursion_time_constant(out.tau_expand, sample_pitch(lines[1]));
    out.tau_shrink = recursion_time_constant(out.tau_shrink, sample_pitch(lines[3]));
  }
  return out;
}

nlohmann::json to_json(const ModelFile& m) {
  nlohmann::json j;
  j["alpha"] = m.extrusion.alpha;
  j["tau_expand"] = m.extrusion.tau_expand;
  j["tau_shrink"] = m.extrusion.tau_shrink;
  j["xi_low"] = m.extrusion.xi_low;
  j["xi_high"] = m.extrusion.xi_high;
  j["v_const"] = m.corner ? nlohmann::json(m.corner->v_const) : nlohmann::json(nullptr);
  j["decel"] = m.corner ? nlohmann::json(m.corner->decel) : nlohmann::json(nullptr);
  j["provenance"] = m.provenance;
  return j;
}

ModelFile model_from_json(const nlohmann::json& j) {
  ModelFile m;
  try {
    m.extrusion.alpha = j.at("alpha").get<double>();
    m.extrusion.tau_expand = j.at("tau_expand").get<double>();
    m.extrusion.tau_shrink = j.at("tau_shrink").get<double>();
    m.extrusion.xi_low = j.at("xi_low").get<double>();
    m.extrusion.xi_high = j.at("xi_high").get<double>();
    const bool has_v = j.contains("v_const") && !j["v_const"].is_null();
    const bool has_a = j.contains("decel") && !j["decel"].is_null();
    if (has_v != has_a) throw DataError("model file has only one of v_const and decel");
    if (has_v) m.corner = CornerModel{j["v_const"].get<double>(), j["decel"].get<double>()};
    if (j.contains("provenance")) m.provenance = j["provenance"];
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("invalid model file: {}", e.what()));
  }
  m.extrusion.validate();
  if (m.corner) m.corner->validate();
  return m;
}

void save_model(const std::string& path, const ModelFile& model) {
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("cannot write {}", path));
  out << to_json(model).dump(2) << '\n';
}

ModelFile load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open model file {}", path));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: {}", path, e.what()));
  }
  return model_from_json(j);
}

}  // namespace extruflow
