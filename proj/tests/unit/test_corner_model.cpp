#include <cmath>

#include "doctest.h"
#include "extruflow/corner_model.hpp"
#include "extruflow/errors.hpp"

using namespace extruflow;

namespace {
const CornerModel kCorner{66.0, 406.0};
const ExtrusionModel kExt{16.98, 37.81, 8.80, 0.03, 0.05};
}  // namespace

TEST_CASE("deceleration width") {
  CHECK(decel_width(kCorner, 0.68, 0.0) == doctest::Approx(0.68));
  // 0.68 * 66 / sqrt(66^2 - 2*406*4) = 0.68 * 66 / sqrt(1108)
  CHECK(decel_width(kCorner, 0.68, 4.0) == doctest::Approx(0.68 * 66.0 / std::sqrt(1108.0)));
  CHECK(decel_width(kCorner, 0.68, 4.0) == doctest::Approx(1.3483).epsilon(1e-4));
  double prev = 0.0;
  for (double x = 0.0; x < kCorner.d_tr(); x += 0.05) {
    const double w = decel_width(kCorner, 0.68, x);
    CHECK(w > prev);
    prev = w;
  }
  CHECK_THROWS_AS(decel_width(kCorner, 0.68, kCorner.d_tr()), DomainError);
  CHECK_THROWS_AS(decel_width(kCorner, 0.68, -0.1), DomainError);
}

TEST_CASE("acceleration width") {
  CHECK(accel_width(kCorner, 0.68, kCorner.d_tr()) == doctest::Approx(0.68));
  CHECK(accel_width(kCorner, 0.68, kCorner.d_tr() / 4) == doctest::Approx(2 * 0.68));
  CHECK(accel_width(kCorner, 0.68, 1.0) == doctest::Approx(0.68 * 66.0 / std::sqrt(812.0)));
  CHECK(accel_width(kCorner, 0.68, 1.0) == doctest::Approx(1.575).epsilon(1e-3));
  CHECK_THROWS_AS(accel_width(kCorner, 0.68, 0.0), DomainError);
}

TEST_CASE("continuous reference is mirror-symmetric") {
  for (double x = 0.3; x < 20.0; x += 0.173) {
    CHECK(reference_value(kCorner, 40.0, 0.5, x).value ==
          doctest::Approx(reference_value(kCorner, 40.0, 0.5, 40.0 - x).value).epsilon(1e-12));
  }
}

TEST_CASE("decel and accel predictions coincide at half the transient distance") {
  const double half = kCorner.d_tr() / 2;
  CHECK(decel_width(kCorner, 0.5, half) == doctest::Approx(accel_width(kCorner, 0.5, kCorner.d_tr() - half)));
}

TEST_CASE("five-stage reference on a 40 mm line") {
  const double len = 40.0;
  const double w = 0.5;
  const double d = kCorner.d_tr();
  CHECK(reference_value(kCorner, len, w, w / 2).value == 0.0);
  CHECK(reference_value(kCorner, len, w, d).value == doctest::Approx(w).epsilon(1e-12));
  CHECK(reference_value(kCorner, len, w, len - d).value == w);
  CHECK(reference_value(kCorner, len, w, len - w / 2).value ==
        doctest::Approx(std::sqrt(2 * 406.0 * (w / 2)) / 66.0 * w));
  CHECK(reference_value(kCorner, len, w, 1.0).stage == ReferenceStage::ramp_up);
  CHECK(reference_value(kCorner, len, w, 20.0).stage == ReferenceStage::constant);
  CHECK(reference_value(kCorner, len, w, 38.0).stage == ReferenceStage::ramp_down);
  CHECK(reference_value(kCorner, len, w, 39.9).stage == ReferenceStage::final_trim);

  // Stage II meets stage III continuously; the trim jump equals the ramp value at w/2.
  const double eps = 1e-9;
  CHECK(std::abs(reference_value(kCorner, len, w, d - eps).value - reference_value(kCorner, len, w, d).value) < 1e-6);
  CHECK(reference_value(kCorner, len, w, w / 2 + eps).value ==
        doctest::Approx(std::sqrt(2 * 406.0 * (w / 2)) / 66.0 * w).epsilon(1e-6));

  const std::vector<Vec3> line{{0, 0, 0}, {len, 0, 0}};
  const DiscretizedPath path = discretize(line, 0.1);
  const WidthReference ref = build_reference(kExt, kCorner, path, w);
  REQUIRE(ref.size() == 400);
  CHECK(ref.target.front() == 0.0);
  CHECK(ref.target.back() == 0.0);
  for (std::size_t k = 0; k < ref.size(); ++k) {
    CHECK(ref.target[k] >= 0.0);
    CHECK(ref.target[k] <= w);
    // Mirror symmetry holds away from the half-open trim boundaries.
    const bool edge = std::abs(ref.x[k] - w / 2) < 1e-6 || std::abs(ref.x[k] - (len - w / 2)) < 1e-6;
    if (!edge) CHECK(std::abs(ref.target[k] - ref.target[ref.size() - 1 - k]) < 1e-9);
    if (ref.stage[k] == ReferenceStage::constant) CHECK(ref.target[k] == w);
  }
}

TEST_CASE("reference limits and short lines") {
  const CornerModel stiff{66.0, 1e9};
  const std::vector<Vec3> line{{0, 0, 0}, {10, 0, 0}};
  const DiscretizedPath path = discretize(line, 0.1);
  const WidthReference ref = build_reference(kExt, stiff, path, 0.5);
  for (std::size_t k = 0; k < ref.size(); ++k) {
    if (std::abs(ref.x[k] - 9.75) < 1e-6) continue;
    const bool notch = ref.x[k] <= 0.25 || ref.x[k] > 9.75;
    CHECK(ref.target[k] == doctest::Approx(notch ? 0.0 : 0.5));
  }

  // Shorter than 2 d_tr: ramps cut where they meet, continuous at the middle.
  const double len = 6.0;
  const double mid_left = reference_value(kCorner, len, 0.5, 3.0 - 1e-9).value;
  const double mid_right = reference_value(kCorner, len, 0.5, 3.0 + 1e-9).value;
  CHECK(mid_left == doctest::Approx(mid_right).epsilon(1e-6));
  CHECK(mid_left < 0.5);
  CHECK(reference_value(kCorner, 0.4, 0.5, 0.2).value == 0.0);
}

TEST_CASE("multi-line reference concatenates per line") {
  const std::vector<Vec3> l{{0, 0, 0}, {30, 0, 0}, {30, 30, 0}};
  const DiscretizedPath path = discretize(l, 0.1);
  const WidthReference ref = build_reference(kExt, kCorner, path, 0.68);
  REQUIRE(ref.size() == 600);
  CHECK(ref.target[299] == 0.0);
  CHECK(ref.target[300] == 0.0);
  CHECK(ref.target[150] == 0.68);
  CHECK(ref.x[300] == doctest::Approx(30.05));
}
