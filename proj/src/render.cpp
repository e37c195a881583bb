#include "extruflow/render.hpp"

#include <cmath>
#include <random>

#include "extruflow/errors.hpp"

namespace extruflow {

double Scene::intensity(double x, double y) const {
  for (const auto& l : lines) {
    if (x >= l.x0 && x <= l.x0 + l.length && std::abs(y - l.y) <= 0.5 * l.width) return bead;
  }
  const double sq = board.square_mm;
  const double bx = x / sq;
  const double by = y / sq;
  if (bx >= -1.0 && bx < board.cols && by >= -1.0 && by < board.rows) {
    const auto i = static_cast<long>(std::floor(bx));
    const auto j = static_cast<long>(std::floor(by));
    return ((i + j) % 2 == 0) ? dark_square : light_square;
  }
  if (bx >= -2.0 && bx < board.cols + 1.0 && by >= -2.0 && by < board.rows + 1.0) return light_square;
  return bed;
}

Camera tilted_camera(const Scene& scene, double tilt_deg, double px_per_mm, double rotate_deg) {
  if (!(px_per_mm > 0.0)) throw ContractError("resolution must be positive");
  const double t = tilt_deg * M_PI / 180.0;
  const double r = rotate_deg * M_PI / 180.0;
  const double cx = 0.5 * (scene.min_x + scene.max_x);
  const double cy = 0.5 * (scene.min_y + scene.max_y);
  const double depth = 400.0;  // mm, camera to scene centre
  const double f = px_per_mm * depth;
  Eigen::Matrix3d shift;
  shift << 1, 0, -cx, 0, 1, -cy, 0, 0, 1;
  Eigen::Matrix3d rot;
  rot << std::cos(r), -std::sin(r), 0, std::sin(r), std::cos(r), 0, 0, 0, 1;
  Eigen::Matrix3d tilt;
  tilt << 1, 0, 0, 0, std::cos(t), 0, 0, std::sin(t), depth;
  Eigen::Matrix3d k;
  k << f, 0, 0, 0, f, 0, 0, 0, 1;
  Eigen::Matrix3d h = k * tilt * rot * shift;

  double umin = INFINITY, vmin = INFINITY, umax = -INFINITY, vmax = -INFINITY;
  for (double x : {scene.min_x, scene.max_x}) {
    for (double y : {scene.min_y, scene.max_y}) {
      const Point2 p = apply_homography(h, {x, y});
      umin = std::min(umin, p.x);
      umax = std::max(umax, p.x);
      vmin = std::min(vmin, p.y);
      vmax = std::max(vmax, p.y);
    }
  }
  Eigen::Matrix3d frame;
  frame << 1, 0, -umin, 0, 1, -vmin, 0, 0, 1;
  Camera cam;
  cam.board_to_image = frame * h;
  cam.board_to_image /= cam.board_to_image(2, 2);
  cam.width = static_cast<int>(std::ceil(umax - umin)) + 1;
  cam.height = static_cast<int>(std::ceil(vmax - vmin)) + 1;
  return cam;
}

GrayImage render_scene(const Scene& scene, const Camera& camera, const RenderOptions& options) {
  if (options.supersample < 1) throw ContractError("supersample must be >= 1");
  GrayImage img(camera.width, camera.height);
  const Eigen::Matrix3d inv = camera.board_to_image.inverse();
  const int ss = options.supersample;
  const double inv_n = 1.0 / (ss * ss);
  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      double acc = 0.0;
      for (int j = 0; j < ss; ++j) {
        for (int i = 0; i < ss; ++i) {
          const Point2 p = apply_homography(inv, {u - 0.5 + (i + 0.5) / ss, v - 0.5 + (j + 0.5) / ss});
          acc += scene.intensity(p.x, p.y);
        }
      }
      img.at(u, v) = static_cast<float>(acc * inv_n);
    }
  }
  if (options.blur_sigma_px > 0.0) img = gaussian_blur(img, options.blur_sigma_px);
  if (options.noise_sigma > 0.0) {
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> nd(0.0, options.noise_sigma);
    for (float& p : img.pixels) p = static_cast<float>(p + nd(rng));
  }
  for (float& p : img.pixels) {
    p = std::clamp(p, 0.0f, 1.0f);
    if (options.quantize) p = std::round(p * 255.0f) / 255.0f;
  }
  return img;
}

}  // namespace extruflow
