#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "extruflow/profile.hpp"

namespace extruflow {

/// Row-major luminance in [0, 1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.0f);

  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool contains(double x, double y) const { return x >= 0 && y >= 0 && x <= width - 1 && y <= height - 1; }
  /// Bilinear sample at pixel-center coordinates; 0 outside the image.
  float sample(double x, double y) const;
  void validate() const;
};

double luminance(double r, double g, double b);

/// 8-bit grayscale or RGB PNG, or binary PGM (P5) / PPM (P6).
GrayImage load_image(const std::string& path);
void save_png(const std::string& path, const GrayImage& image);
void save_pgm(const std::string& path, const GrayImage& image);

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

Point2 apply_homography(const Eigen::Matrix3d& h, Point2 p);

struct Homography {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();  // h(2,2) == 1
  double pixel_scale = 1.0;                         // mm per rectified pixel
  double rms_error = 0.0;                           // px, forward reprojection
  std::vector<std::string> warnings;

  Point2 apply(Point2 p) const { return apply_homography(h, p); }
};

/// Maps `from` onto `to`: normalized DLT, then Gauss-Newton on the symmetric
/// transfer error. Throws DataError on degenerate configurations.
Homography estimate_homography(std::span<const Point2> from, std::span<const Point2> to);

/// Output frame of a rectification, in board millimetres.
struct RectifiedFrame {
  double origin_x_mm = -5.0;  // board coordinate at output pixel (0, 0)
  double origin_y_mm = -5.0;
  double px_per_mm = 20.0;
  int width = 0;
  int height = 0;

  Point2 to_pixel(Point2 mm) const { return {(mm.x - origin_x_mm) * px_per_mm, (mm.y - origin_y_mm) * px_per_mm}; }
};

struct BoardSpec {
  int rows = 6;  // inner corners
  int cols = 8;
  double square_mm = 4.0;
};

/// Homography from image pixels to the rectified frame for a row-major list of
/// detected inner corners; pixel_scale = square size / mean rectified pitch.
Homography board_homography(std::span<const Point2> corners, const BoardSpec& board, const RectifiedFrame& frame);

/// Inverse-mapped bilinear resampling into frame.width x frame.height.
GrayImage rectify(const GrayImage& image, const Eigen::Matrix3d& image_to_frame, int width, int height);

/// Saddle-point corner detection with subpixel refinement, ordered row-major
/// starting at the corner nearest the image's top-left.
std::vector<Point2> detect_checkerboard(const GrayImage& image, int rows, int cols);

/// Corner list from a CSV of "x_px,y_px" rows (header optional).
std::vector<Point2> load_corners_csv(const std::string& path);

struct Cluster {
  double mean = 0.0;
  double std = 0.0;
  double weight = 0.0;  // fraction of samples (K-means) or mixing weight (GMM)
  std::size_t count = 0;
};

/// Clusters sorted by ascending mean: dark background, noise/blur, light line.
struct ClusterSummary {
  std::vector<Cluster> clusters;
  int iterations = 0;

  const Cluster& background() const { return clusters.front(); }
  const Cluster& noise() const { return clusters[clusters.size() / 2]; }
  const Cluster& line() const { return clusters.back(); }
};

/// 1-D Lloyd iterations from the 10/50/90 % quantiles (evenly spaced quantiles for other k).
ClusterSummary cluster_kmeans(std::span<const float> pixels, int k = 3);

/// mu_noise + n * sigma_noise; pixels above it are line.
double threshold_kmeans(const ClusterSummary& summary, double n = 2.0);

struct GmmResult {
  ClusterSummary summary;
  std::vector<double> log_likelihood;  // mean per-sample value after each iteration
};

/// EM for a 1-D Gaussian mixture started from the K-means solution.
GmmResult cluster_gmm(std::span<const float> pixels, int k = 3);

/// True where the highest-mean component has the largest responsibility.
bool gmm_is_line(const ClusterSummary& summary, double value);

/// Binary mask stored as a GrayImage with values 0 and 1.
GrayImage threshold_mask(const GrayImage& image, double threshold);
GrayImage gmm_mask(const GrayImage& image, const ClusterSummary& summary);

struct WidthMeasurement {
  WidthProfile profile;
  Eigen::Vector2d axis = Eigen::Vector2d::UnitX();
  std::vector<std::string> warnings;
};

/// Largest 8-connected component; PCA axis; per-slice extent across a 1-px band every
/// `sample_pitch_mm`. Throws DetectionError on an empty mask.
WidthMeasurement measure_widths(const GrayImage& mask, double pixel_scale, double sample_pitch_mm);

/// Rectangular crop; out-of-range parts are clamped to the image.
GrayImage crop(const GrayImage& image, int x0, int y0, int width, int height);

GrayImage gaussian_blur(const GrayImage& image, double sigma);

enum class Segmentation { kmeans, gmm };

/// Segments an ROI with the chosen method and measures it.
struct RoiResult {
  WidthMeasurement measurement;
  ClusterSummary clusters;
  Segmentation method = Segmentation::kmeans;
};
RoiResult measure_roi(const GrayImage& roi, double pixel_scale, double sample_pitch_mm, Segmentation method,
                      double threshold_n = 2.0);

/// Noise-cluster weight above this marks a region as blurry.
inline constexpr double kBlurryNoiseWeight = 0.25;

}  // namespace extruflow
