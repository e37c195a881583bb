#include <cmath>
#include <random>

#include "doctest.h"
#include "extruflow/corner_model.hpp"
#include "extruflow/errors.hpp"
#include "extruflow/extrusion_dynamics.hpp"

using namespace extruflow;

namespace {

const ExtrusionModel kModel{16.98, 37.81, 8.80, 0.03, 0.05};

ControlSequence constant(double xi, std::size_t n, double step) {
  return ControlSequence{std::vector<double>(n, xi), step, {}};
}

// Closed-form first-order step response.
double exact_step(double w_minus, double w_plus, double tau, double x) {
  return w_minus + (w_plus - w_minus) * (1.0 - std::exp(-x / tau));
}

double max_step_error(double step) {
  const auto n = static_cast<std::size_t>(std::lround(40.0 / step));
  const WidthProfile w = simulate_plant(kModel, constant(0.05, n, step), kModel.alpha * 0.03);
  double worst = 0.0;
  for (const auto& s : w.samples()) {
    worst = std::max(worst, std::abs(s.w - exact_step(kModel.alpha * 0.03, kModel.alpha * 0.05, 37.81, s.x)));
  }
  return worst;
}

}  // namespace

TEST_CASE("steady width law") {
  CHECK(steady_width(kModel, 0.03) == doctest::Approx(0.5094));
  CHECK(steady_width(kModel, 0.0) == 0.0);
  ExtrusionModel m = kModel;
  m.alpha = 16.67;
  CHECK(steady_width(m, 0.05) == doctest::Approx(0.8335));
}

TEST_CASE("step matrices") {
  const StepMatrices ab = step_matrices(kModel, 0.1, Regime::expand);
  CHECK(ab.a == doctest::Approx(0.997355).epsilon(1e-6));
  CHECK(ab.b == doctest::Approx(0.044909).epsilon(1e-5));
  for (Regime r : {Regime::expand, Regime::shrink, Regime::mixed}) {
    for (double ds : {0.01, 0.1, 1.0, 5.0}) {
      const StepMatrices s = step_matrices(kModel, ds, r);
      CHECK(s.a + s.b / kModel.alpha == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  const StepMatrices near = step_matrices(kModel, 8.80 * (1 - 1e-12), Regime::shrink);
  CHECK(near.a == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(time_constant(kModel, Regime::mixed) == doctest::Approx((37.81 + 8.80) / 2));
  CHECK_THROWS_AS(step_matrices(kModel, 8.80, Regime::shrink), StabilityError);
  try {
    step_matrices(kModel, 10.0, Regime::shrink);
  } catch (const StabilityError& e) {
    CHECK(std::string(e.what()).find("8.8") != std::string::npos);
  }
}

TEST_CASE("plant fixed point is exact") {
  for (double c : {0.03, 0.041, 0.05, 0.0123456}) {
    const WidthProfile w = simulate_plant(kModel, constant(c, 1000, 0.1), kModel.alpha * c);
    for (const auto& s : w.samples()) CHECK(s.w == kModel.alpha * c);
  }
}

TEST_CASE("step response follows the exponential and converges at first order") {
  const double e1 = max_step_error(0.2);
  const double e2 = max_step_error(0.1);
  const double e3 = max_step_error(0.05);
  CHECK(e2 < 0.01);
  CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.1));
  CHECK(e2 / e3 == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("step responses are monotone and converge") {
  const WidthProfile up = simulate_plant(kModel, constant(0.05, 4000, 0.1), kModel.alpha * 0.03);
  for (std::size_t i = 1; i < up.size(); ++i) CHECK(up[i].w >= up[i - 1].w);
  CHECK(up[up.size() - 1].w == doctest::Approx(kModel.alpha * 0.05).epsilon(1e-4));
  const WidthProfile down = simulate_plant(kModel, constant(0.03, 1000, 0.1), kModel.alpha * 0.05);
  for (std::size_t i = 1; i < down.size(); ++i) CHECK(down[i].w <= down[i - 1].w);
  CHECK(down[down.size() - 1].w == doctest::Approx(kModel.alpha * 0.03).epsilon(1e-4));
}

TEST_CASE("plant is positively homogeneous within a regime") {
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(0.03, 0.05);
  ControlSequence c{{}, 0.1, {}};
  for (int k = 0; k < 300; ++k) c.xi.push_back(u(rng));
  const double beta = 1.7;
  ControlSequence scaled = c;
  for (double& v : scaled.xi) v *= beta;
  const WidthProfile a = simulate_plant(kModel, c, 0.6);
  const WidthProfile b = simulate_plant(kModel, scaled, 0.6 * beta);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i].w == doctest::Approx(beta * a[i].w).epsilon(1e-12));
}

TEST_CASE("retraction cannot produce negative width") {
  const WidthProfile w = simulate_plant(kModel, constant(-2.0, 200, 0.1), 0.5);
  for (const auto& s : w.samples()) CHECK(s.w >= 0.0);
  CHECK(w[w.size() - 1].w == 0.0);
}

TEST_CASE("corner plant") {
  const CornerModel corner{66.0, 406.0};
  CHECK(corner.d_tr() == doctest::Approx(66.0 * 66.0 / (2 * 406.0)));
  CHECK(corner.d_tr() == doctest::Approx(5.3645).epsilon(1e-4));

  const std::vector<Vec3> line{{0, 0, 0}, {400, 0, 0}};
  const DiscretizedPath path = discretize(line, 0.1);
  const double zeta = 0.68 / kModel.alpha;
  const WidthProfile w = simulate_corner_plant(kModel, corner, constant(zeta, path.segment_count(), 0.1), path,
                                               0.68);
  // The constant-speed middle relaxes back to alpha * zeta.
  CHECK(w.slice(190.0, 210.0).ws().front() == doctest::Approx(0.68).epsilon(1e-6));
  CHECK(w.slice(10.0, 20.0).ws().front() > 0.68);
  // Before filtering, the ratio amplification in the deceleration zone is the decel width law.
  const std::vector<double> speed = segment_speeds(corner, path);
  for (std::size_t k = 0; k < path.segment_count(); ++k) {
    const double mid = (static_cast<double>(k) + 0.5) * 0.1;
    const double into = mid - (400.0 - corner.d_tr());
    if (into > 0.0 && into < corner.d_tr() - 0.5) {
      CHECK(0.68 * corner.v_const / speed[k] == doctest::Approx(decel_width(corner, 0.68, into)).epsilon(1e-9));
    }
  }
  // Over-extrusion builds up toward the end corner.
  CHECK(w[w.size() - 1].w > 0.68);

  // Output coupling is the decel width law at every sample.
  const WidthProfile out = simulate_corner_plant(kModel, corner, constant(zeta, path.segment_count(), 0.1), path,
                                                 0.68, CornerCoupling::output);
  for (const auto& smp : out.samples()) {
    const double into = smp.x - (400.0 - corner.d_tr());
    if (into > 0.0 && into < corner.d_tr() - 0.05) {
      CHECK(smp.w == doctest::Approx(decel_width(corner, 0.68, into)).epsilon(1e-9));
    }
  }
}
