#include "extruflow/vision.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <png.h>

#include "extruflow/errors.hpp"
#include "extruflow/lm.hpp"

namespace extruflow {

GrayImage::GrayImage(int w, int h, float fill) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw ContractError(fmt::format("image size {}x{} must be positive", w, h));
  pixels.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill);
}

float GrayImage::sample(double x, double y) const {
  if (!contains(x, y)) return 0.0f;
  const int x0 = std::min(static_cast<int>(x), width - 2 < 0 ? 0 : width - 2);
  const int y0 = std::min(static_cast<int>(y), height - 2 < 0 ? 0 : height - 2);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1 - fx) * at(x0, y0) + fx * at(x1, y0);
  const double bottom = (1 - fx) * at(x0, y1) + fx * at(x1, y1);
  return static_cast<float>((1 - fy) * top + fy * bottom);
}

void GrayImage::validate() const {
  if (width <= 0 || height <= 0) throw ContractError("image has no pixels");
  if (pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw ContractError("image buffer does not match its size");
  }
  for (float p : pixels) {
    if (!std::isfinite(p)) throw ContractError("image contains a non-finite sample");
  }
}

double luminance(double r, double g, double b) { return 0.2126 * r + 0.7152 * g + 0.0722 * b; }

namespace {

std::string read_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

GrayImage load_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open image {}", path));
  const std::string magic = read_token(in);
  if (magic != "P5" && magic != "P6") throw DataError(fmt::format("{}: only binary PGM/PPM are supported", path));
  int w = 0;
  int h = 0;
  int maxval = 0;
  try {
    w = std::stoi(read_token(in));
    h = std::stoi(read_token(in));
    maxval = std::stoi(read_token(in));
  } catch (const std::exception&) {
    throw DataError(fmt::format("{}: malformed header", path));
  }
  if (maxval <= 0 || maxval > 255) throw DataError(fmt::format("{}: only 8-bit images are supported", path));
  const int channels = magic == "P5" ? 1 : 3;
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw DataError(fmt::format("{}: truncated", path));
  GrayImage img(w, h);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    if (channels == 1) {
      img.pixels[i] = static_cast<float>(raw[i] / double(maxval));
    } else {
      img.pixels[i] = static_cast<float>(
          luminance(raw[3 * i] / double(maxval), raw[3 * i + 1] / double(maxval), raw[3 * i + 2] / double(maxval)));
    }
  }
  return img;
}

GrayImage load_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError(fmt::format("{}: {}", path, image.message));
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> raw(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raw.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError(fmt::format("{}: {}", path, image.message));
  }
  GrayImage img(static_cast<int>(image.width), static_cast<int>(image.height));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<float>(luminance(raw[3 * i] / 255.0, raw[3 * i + 1] / 255.0, raw[3 * i + 2] / 255.0));
  }
  return img;
}

std::vector<unsigned char> to_bytes(const GrayImage& image) {
  std::vector<unsigned char> out(image.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255.0f));
  }
  return out;
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(),
                    [](char a, char b) { return std::tolower(static_cast<unsigned char>(a)) == b; });
}

}  // namespace

GrayImage load_image(const std::string& path) {
  if (has_suffix(path, ".png")) return load_png(path);
  if (has_suffix(path, ".pgm") || has_suffix(path, ".ppm") || has_suffix(path, ".pnm")) return load_pnm(path);
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw DataError(fmt::format("cannot open image {}", path));
  char head[2] = {};
  probe.read(head, 2);
  if (head[0] == 'P') return load_pnm(path);
  return load_png(path);
}

void save_png(const std::string& path, const GrayImage& image) {
  image.validate();
  const std::vector<unsigned char> bytes = to_bytes(image);
  png_image out{};
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(image.width);
  out.height = static_cast<png_uint_32>(image.height);
  out.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&out, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw DataError(fmt::format("{}: {}", path, out.message));
  }
}

void save_pgm(const std::string& path, const GrayImage& image) {
  image.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path));
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  const std::vector<unsigned char> bytes = to_bytes(image);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Point2 apply_homography(const Eigen::Matrix3d& h, Point2 p) {
  const Eigen::Vector3d q = h * Eigen::Vector3d(p.x, p.y, 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

namespace {

Eigen::Matrix3d normalizer(std::span<const Point2> pts) {
  double cx = 0.0;
  double cy = 0.0;
  for (const auto& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(pts.size());
  cy /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += std::hypot(p.x - cx, p.y - cy);
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
  return t;
}

double triangle_area(Point2 a, Point2 b, Point2 c) {
  return 0.5 * std::abs((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

void check_minimal_configuration(std::span<const Point2> pts) {
  double extent = 0.0;
  for (const auto& p : pts) extent = std::max({extent, std::abs(p.x - pts[0].x), std::abs(p.y - pts[0].y)});
  const double eps = 1e-9 * std::max(1.0, extent * extent);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = i + 1; j < 4; ++j) {
      for (std::size_t k = j + 1; k < 4; ++k) {
        if (triangle_area(pts[i], pts[j], pts[k]) <= eps) {
          throw DataError("degenerate correspondences: three of four points are collinear");
        }
      }
    }
  }
}

Eigen::Matrix3d params_to_matrix(const Eigen::VectorXd& p) {
  Eigen::Matrix3d h;
  h << p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], 1.0;
  return h;
}

}  // namespace

Homography estimate_homography(std::span<const Point2> from, std::span<const Point2> to) {
  if (from.size() != to.size()) throw ContractError("correspondence lists differ in length");
  if (from.size() < 4) throw DataError(fmt::format("homography needs 4 correspondences, got {}", from.size()));
  if (from.size() == 4) {
    check_minimal_configuration(from);
    check_minimal_configuration(to);
  }
  const Eigen::Matrix3d tf = normalizer(from);
  const Eigen::Matrix3d tt = normalizer(to);
  const auto n = static_cast<Eigen::Index>(from.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(std::max<Eigen::Index>(2 * n, 9), 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Point2 p = apply_homography(tf, from[static_cast<std::size_t>(i)]);
    const Point2 q = apply_homography(tt, to[static_cast<std::size_t>(i)]);
    a.row(2 * i) << -p.x, -p.y, -1, 0, 0, 0, q.x * p.x, q.x * p.y, q.x;
    a.row(2 * i + 1) << 0, 0, 0, -p.x, -p.y, -1, q.y * p.x, q.y * p.y, q.y;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd sv = svd.singularValues();
  if (sv[7] <= 1e-10 * sv[0]) throw DataError("degenerate correspondences: homography is not determined");
  const Eigen::VectorXd v = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  Eigen::Matrix3d h = tt.inverse() * hn * tf;
  if (std::abs(h(2, 2)) < 1e-14) throw DataError("homography maps the origin to infinity");
  h /= h(2, 2);

  if (from.size() > 4) {
    Eigen::VectorXd p(8);
    p << h(0, 0), h(0, 1), h(0, 2), h(1, 0), h(1, 1), h(1, 2), h(2, 0), h(2, 1);
    const ResidualFn residuals = [&](const Eigen::VectorXd& q) {
      const Eigen::Matrix3d m = params_to_matrix(q);
      const Eigen::Matrix3d mi = m.inverse();
      Eigen::VectorXd r(4 * n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const Point2 f = apply_homography(m, from[k]);
        const Point2 b = apply_homography(mi, to[k]);
        r[4 * i] = f.x - to[k].x;
        r[4 * i + 1] = f.y - to[k].y;
        r[4 * i + 2] = b.x - from[k].x;
        r[4 * i + 3] = b.y - from[k].y;
      }
      return r;
    };
    LmOptions opt;
    opt.max_iterations = 50;
    const LmResult fit = levenberg_marquardt(residuals, p, opt);
    h = params_to_matrix(fit.params);
  }
  if (!(std::abs(h.determinant()) > 1e-12)) throw DataError("estimated homography is singular");

  Homography out;
  out.h = h;
  double ss = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const Point2 f = apply_homography(h, from[i]);
    ss += (f.x - to[i].x) * (f.x - to[i].x) + (f.y - to[i].y) * (f.y - to[i].y);
  }
  out.rms_error = std::sqrt(ss / static_cast<double>(from.size()));
  if (out.rms_error > 2.0) {
    out.warnings.push_back(fmt::format("reprojection RMS {:.2f} px exceeds 2 px", out.rms_error));
  }
  return out;
}

Homography board_homography(std::span<const Point2> corners, const BoardSpec& board, const RectifiedFrame& frame) {
  const auto expected = static_cast<std::size_t>(board.rows) * static_cast<std::size_t>(board.cols);
  if (corners.size() != expected) {
    throw DataError(fmt::format("{} corners for a {}x{} board", corners.size(), board.rows, board.cols));
  }
  if (!(board.square_mm > 0.0) || !(frame.px_per_mm > 0.0)) throw ContractError("board and frame scales must be positive");
  std::vector<Point2> target;
  for (int r = 0; r < board.rows; ++r) {
    for (int c = 0; c < board.cols; ++c) target.push_back(frame.to_pixel({c * board.square_mm, r * board.square_mm}));
  }
  Homography h = estimate_homography(corners, target);
  double pitch = 0.0;
  int pairs = 0;
  const auto idx = [&](int r, int c) { return static_cast<std::size_t>(r * board.cols + c); };
  for (int r = 0; r < board.rows; ++r) {
    for (int c = 0; c < board.cols; ++c) {
      const Point2 p = h.apply(corners[idx(r, c)]);
      if (c + 1 < board.cols) {
        const Point2 q = h.apply(corners[idx(r, c + 1)]);
        pitch += std::hypot(q.x - p.x, q.y - p.y);
        ++pairs;
      }
      if (r + 1 < board.rows) {
        const Point2 q = h.apply(corners[idx(r + 1, c)]);
        pitch += std::hypot(q.x - p.x, q.y - p.y);
        ++pairs;
      }
    }
  }
  h.pixel_scale = board.square_mm / (pitch / pairs);
  return h;
}

GrayImage rectify(const GrayImage& image, const Eigen::Matrix3d& image_to_frame, int width, int height) {
  image.validate();
  GrayImage out(width, height);
  const Eigen::Matrix3d inv = image_to_frame.inverse();
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Point2 s = apply_homography(inv, {double(x), double(y)});
      out.at(x, y) = image.sample(s.x, s.y);
    }
  }
  return out;
}

GrayImage gaussian_blur(const GrayImage& image, double sigma) {
  if (!(sigma > 0.0)) return image;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (double& k : kernel) k /= sum;
  GrayImage tmp(image.width, image.height);
  GrayImage out(image.width, image.height);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] * image.at(std::clamp(x + i, 0, image.width - 1), y);
      }
      tmp.at(x, y) = static_cast<float>(acc);
    }
  }
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(x, std::clamp(y + i, 0, image.height - 1));
      }
      out.at(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

namespace {

struct Candidate {
  double x = 0.0;
  double y = 0.0;
  double response = 0.0;
};

// Saddle of a quadratic fitted to the 5x5 neighbourhood of (cx, cy).
bool refine_saddle(const GrayImage& s, int cx, int cy, Point2& out) {
  Eigen::Matrix<double, 25, 6> a;
  Eigen::Matrix<double, 25, 1> b;
  int row = 0;
  for (int dy = -2; dy <= 2; ++dy) {
    for (int dx = -2; dx <= 2; ++dx) {
      a.row(row) << 1.0, dx, dy, dx * dx, dx * dy, dy * dy;
      b[row] = s.at(cx + dx, cy + dy);
      ++row;
    }
  }
  const Eigen::Matrix<double, 6, 1> c = a.colPivHouseholderQr().solve(b);
  Eigen::Matrix2d h;
  h << 2 * c[3], c[4], c[4], 2 * c[5];
  if (!(h.determinant() < 0.0)) return false;
  // Both curvatures must be substantial; a blurred ridge has one near zero.
  const Eigen::Vector2d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(h).eigenvalues().cwiseAbs();
  if (ev.minCoeff() < 0.15 * ev.maxCoeff()) return false;
  const Eigen::Vector2d off = h.inverse() * -Eigen::Vector2d(c[1], c[2]);
  if (off.cwiseAbs().maxCoeff() > 1.5) return false;
  out = {cx + off.x(), cy + off.y()};
  return true;
}

// Around an X junction the ring alternates dark/light four times, with opposite sides equal.
bool ring_is_saddle(const GrayImage& s, double x, double y, double radius, double min_contrast) {
  constexpr int kSamples = 48;
  std::array<double, kSamples> v{};
  for (int i = 0; i < kSamples; ++i) {
    const double t = 2.0 * M_PI * i / kSamples;
    const double px = x + radius * std::cos(t);
    const double py = y + radius * std::sin(t);
    if (!s.contains(px, py)) return false;
    v[static_cast<std::size_t>(i)] = s.sample(px, py);
  }
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  if (*hi - *lo < min_contrast) return false;
  const double mid = 0.5 * (*hi + *lo);
  int changes = 0;
  int opposite_agree = 0;
  for (int i = 0; i < kSamples; ++i) {
    const bool a = v[static_cast<std::size_t>(i)] > mid;
    const bool b = v[static_cast<std::size_t>((i + 1) % kSamples)] > mid;
    const bool o = v[static_cast<std::size_t>((i + kSamples / 2) % kSamples)] > mid;
    if (a != b) ++changes;
    if (a == o) ++opposite_agree;
  }
  return changes == 4 && opposite_agree >= kSamples * 3 / 4;
}

std::size_t count_near_line(std::span<const Point2> pts, Point2 a, Point2 b, double tol) {
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  std::size_t n = 0;
  for (const auto& p : pts) {
    const double d = std::abs((b.x - a.x) * (a.y - p.y) - (a.x - p.x) * (b.y - a.y)) / len;
    if (d < tol) ++n;
  }
  return n;
}

}  // namespace

std::vector<Point2> detect_checkerboard(const GrayImage& image, int rows, int cols) {
  image.validate();
  if (rows < 2 || cols < 2) throw ContractError("board needs at least 2x2 inner corners");
  const GrayImage s = gaussian_blur(image, 1.5);
  const int w = s.width;
  const int h = s.height;
  std::vector<float> resp(s.pixels.size(), 0.0f);
  float max_resp = 0.0f;
  for (int y = 2; y < h - 2; ++y) {
    for (int x = 2; x < w - 2; ++x) {
      const double ixx = s.at(x + 1, y) - 2.0 * s.at(x, y) + s.at(x - 1, y);
      const double iyy = s.at(x, y + 1) - 2.0 * s.at(x, y) + s.at(x, y - 1);
      const double ixy = 0.25 * (s.at(x + 1, y + 1) - s.at(x + 1, y - 1) - s.at(x - 1, y + 1) + s.at(x - 1, y - 1));
      const double r = ixy * ixy - ixx * iyy;
      const float v = r > 0.0 ? static_cast<float>(r) : 0.0f;
      resp[static_cast<std::size_t>(y) * w + x] = v;
      max_resp = std::max(max_resp, v);
    }
  }
  const std::string hint = "; pass the corner positions with --corners FILE to bypass detection";
  if (!(max_resp > 0.0f)) throw DetectionError("no checkerboard corners found" + hint);

  const auto [lo_it, hi_it] = std::minmax_element(s.pixels.begin(), s.pixels.end());
  const double contrast = 0.3 * (*hi_it - *lo_it);
  constexpr int kNms = 4;
  std::vector<Candidate> cands;
  for (int y = kNms + 2; y < h - kNms - 2; ++y) {
    for (int x = kNms + 2; x < w - kNms - 2; ++x) {
      const float v = resp[static_cast<std::size_t>(y) * w + x];
      if (v < 0.05f * max_resp) continue;
      bool is_max = true;
      for (int dy = -kNms; dy <= kNms && is_max; ++dy) {
        for (int dx = -kNms; dx <= kNms; ++dx) {
          const float o = resp[static_cast<std::size_t>(y + dy) * w + (x + dx)];
          if (o > v || (o == v && (dy < 0 || (dy == 0 && dx < 0)))) {
            is_max = false;
            break;
          }
        }
      }
      if (!is_max) continue;
      Point2 p;
      if (!refine_saddle(s, x, y, p)) continue;
      bool ok = true;
      for (double radius : {5.0, 9.0}) ok = ok && ring_is_saddle(s, p.x, p.y, radius, contrast);
      if (ok) cands.push_back({p.x, p.y, v});
    }
  }
  std::vector<Point2> pts;
  for (const auto& c : cands) {
    const bool dup = std::any_of(pts.begin(), pts.end(), [&](const Point2& q) { return std::hypot(q.x - c.x, q.y - c.y) < 3.0; });
    if (!dup) pts.push_back({c.x, c.y});
  }
  const auto expected = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  if (pts.size() != expected) {
    throw DetectionError(fmt::format("found {} checkerboard corners, expected {}x{} = {}{}", pts.size(), rows, cols,
                                     expected, hint));
  }

  const auto extreme = [&](auto key) {
    return *std::min_element(pts.begin(), pts.end(), [&](const Point2& a, const Point2& b) { return key(a) < key(b); });
  };
  const Point2 tl = extreme([](const Point2& p) { return p.x + p.y; });
  const Point2 br = extreme([](const Point2& p) { return -(p.x + p.y); });
  const Point2 tr = extreme([](const Point2& p) { return p.y - p.x; });
  const Point2 bl = extreme([](const Point2& p) { return p.x - p.y; });
  double spacing = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) spacing = std::min(spacing, std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y));
  }
  const std::size_t top = count_near_line(pts, tl, tr, 0.25 * spacing);
  Point2 along_cols = tr;
  Point2 along_rows = bl;
  if (top == static_cast<std::size_t>(cols)) {
  } else if (top == static_cast<std::size_t>(rows)) {
    std::swap(along_cols, along_rows);
  } else {
    throw DetectionError(fmt::format("could not order the corner grid ({} corners on the top edge){}", top, hint));
  }
  const std::vector<Point2> src{tl, along_cols, br, along_rows};
  const std::vector<Point2> dst{{0, 0}, {double(cols - 1), 0}, {double(cols - 1), double(rows - 1)}, {0, double(rows - 1)}};
  const Homography g = estimate_homography(src, dst);
  std::vector<Point2> ordered(expected);
  std::vector<bool> filled(expected, false);
  for (const auto& p : pts) {
    const Point2 q = g.apply(p);
    const long c = std::lround(q.x);
    const long r = std::lround(q.y);
    if (c < 0 || r < 0 || c >= cols || r >= rows || std::hypot(q.x - c, q.y - r) > 0.3) {
      throw DetectionError("corners do not form a regular grid" + hint);
    }
    const auto k = static_cast<std::size_t>(r * cols + c);
    if (filled[k]) throw DetectionError("two corners map to the same grid cell" + hint);
    filled[k] = true;
    ordered[k] = p;
  }
  return ordered;
}

std::vector<Point2> load_corners_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open corner file {}", path));
  std::vector<Point2> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    Point2 p;
    if (!(ss >> p.x >> p.y)) {
      if (out.empty() && lineno == 1) continue;  // header
      throw ParseError(lineno, "expected x_px,y_px");
    }
    out.push_back(p);
  }
  return out;
}

namespace {

struct SortedSamples {
  std::vector<double> v;
  std::vector<double> sum;  // prefix sums, size n + 1
  std::vector<double> sq;

  explicit SortedSamples(std::span<const float> pixels) : v(pixels.begin(), pixels.end()) {
    std::sort(v.begin(), v.end());
    sum.assign(v.size() + 1, 0.0);
    sq.assign(v.size() + 1, 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      sum[i + 1] = sum[i] + v[i];
      sq[i + 1] = sq[i] + v[i] * v[i];
    }
  }
  double quantile(double q) const {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    const double f = pos - static_cast<double>(i);
    return i + 1 < v.size() ? (1 - f) * v[i] + f * v[i + 1] : v[i];
  }
};

}  // namespace

ClusterSummary cluster_kmeans(std::span<const float> pixels, int k) {
  if (k < 1) throw ContractError("k must be positive");
  for (float p : pixels) {
    if (!std::isfinite(p)) throw ContractError("non-finite pixel value");
  }
  const SortedSamples s(pixels);
  std::size_t distinct = s.v.empty() ? 0 : 1;
  for (std::size_t i = 1; i < s.v.size(); ++i) distinct += s.v[i] != s.v[i - 1];
  if (distinct < static_cast<std::size_t>(k)) {
    throw DataError(fmt::format("K-means needs {} distinct values, found {}", k, distinct));
  }
  const auto kk = static_cast<std::size_t>(k);
  std::vector<double> centroid(kk);
  for (std::size_t j = 0; j < kk; ++j) {
    const double q = kk == 1 ? 0.5 : 0.1 + 0.8 * static_cast<double>(j) / static_cast<double>(kk - 1);
    centroid[j] = s.quantile(q);
  }
  std::vector<std::size_t> begin(kk + 1);
  ClusterSummary out;
  for (out.iterations = 1; out.iterations <= 100; ++out.iterations) {
    std::sort(centroid.begin(), centroid.end());
    begin[0] = 0;
    begin[kk] = s.v.size();
    for (std::size_t j = 1; j < kk; ++j) {
      const double cut = 0.5 * (centroid[j - 1] + centroid[j]);
      begin[j] = static_cast<std::size_t>(std::upper_bound(s.v.begin(), s.v.end(), cut) - s.v.begin());
    }
    // Empty cluster: move its centroid to the sample farthest from its own centroid.
    bool reseeded = false;
    for (std::size_t j = 0; j < kk; ++j) {
      if (begin[j] != begin[j + 1]) continue;
      double far = -1.0;
      double where = centroid[j];
      for (std::size_t c = 0; c < kk; ++c) {
        if (begin[c] == begin[c + 1]) continue;
        for (double cand : {s.v[begin[c]], s.v[begin[c + 1] - 1]}) {
          const double d = std::abs(cand - centroid[c]);
          if (d > far) {
            far = d;
            where = cand;
          }
        }
      }
      centroid[j] = where;
      reseeded = true;
      break;
    }
    if (reseeded) continue;
    double motion = 0.0;
    for (std::size_t j = 0; j < kk; ++j) {
      const double n = static_cast<double>(begin[j + 1] - begin[j]);
      const double m = (s.sum[begin[j + 1]] - s.sum[begin[j]]) / n;
      motion = std::max(motion, std::abs(m - centroid[j]));
      centroid[j] = m;
    }
    if (motion < 1e-6) break;
  }
  out.iterations = std::min(out.iterations, 100);
  for (std::size_t j = 0; j < kk; ++j) {
    const std::size_t n = begin[j + 1] - begin[j];
    Cluster c;
    c.count = n;
    c.weight = static_cast<double>(n) / static_cast<double>(s.v.size());
    if (n > 0) {
      c.mean = (s.sum[begin[j + 1]] - s.sum[begin[j]]) / static_cast<double>(n);
      const double ex2 = (s.sq[begin[j + 1]] - s.sq[begin[j]]) / static_cast<double>(n);
      c.std = std::sqrt(std::max(0.0, ex2 - c.mean * c.mean));
    } else {
      c.mean = centroid[j];
    }
    out.clusters.push_back(c);
  }
  return out;
}

double threshold_kmeans(const ClusterSummary& summary, double n) {
  if (summary.clusters.size() < 3) throw ContractError("threshold needs a noise cluster");
  return summary.noise().mean + n * summary.noise().std;
}

GmmResult cluster_gmm(std::span<const float> pixels, int k) {
  if (pixels.size() < static_cast<std::size_t>(3 * k)) {
    throw DataError(fmt::format("GMM needs at least {} samples, got {}", 3 * k, pixels.size()));
  }
  const ClusterSummary init = cluster_kmeans(pixels, k);
  constexpr double kVarFloor = 1e-6;
  const auto kk = static_cast<std::size_t>(k);
  std::vector<double> mu(kk);
  std::vector<double> var(kk);
  std::vector<double> pi(kk);
  for (std::size_t j = 0; j < kk; ++j) {
    mu[j] = init.clusters[j].mean;
    var[j] = std::max(kVarFloor, init.clusters[j].std * init.clusters[j].std);
    pi[j] = std::max(init.clusters[j].weight, 1e-6);
  }
  const double total = std::accumulate(pi.begin(), pi.end(), 0.0);
  for (double& p : pi) p /= total;

  // Identical pixel values share responsibilities; work on the distinct values with counts.
  std::vector<float> sorted(pixels.begin(), pixels.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> value;
  std::vector<double> count;
  for (float p : sorted) {
    if (value.empty() || value.back() != p) {
      value.push_back(p);
      count.push_back(1.0);
    } else {
      count.back() += 1.0;
    }
  }
  const double n = static_cast<double>(pixels.size());

  GmmResult out;
  std::vector<double> resp(kk);
  std::vector<double> nk(kk);
  std::vector<double> sx(kk);
  std::vector<double> sxx(kk);
  double prev = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < 200; ++it) {
    std::fill(nk.begin(), nk.end(), 0.0);
    std::fill(sx.begin(), sx.end(), 0.0);
    std::fill(sxx.begin(), sxx.end(), 0.0);
    double ll = 0.0;
    for (std::size_t i = 0; i < value.size(); ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < kk; ++j) {
        const double d = value[i] - mu[j];
        resp[j] = std::log(pi[j]) - 0.5 * std::log(2.0 * M_PI * var[j]) - 0.5 * d * d / var[j];
        best = std::max(best, resp[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < kk; ++j) {
        resp[j] = std::exp(resp[j] - best);
        z += resp[j];
      }
      ll += count[i] * (best + std::log(z));
      for (std::size_t j = 0; j < kk; ++j) {
        const double r = count[i] * resp[j] / z;
        nk[j] += r;
        sx[j] += r * value[i];
        sxx[j] += r * value[i] * value[i];
      }
    }
    ll /= n;
    if (!std::isfinite(ll)) {
      std::string trace;
      for (double v : out.log_likelihood) trace += fmt::format(" {:.6g}", v);
      throw NumericalError(fmt::format("GMM log-likelihood became non-finite at iteration {};{}", it, trace));
    }
    out.log_likelihood.push_back(ll);
    for (std::size_t j = 0; j < kk; ++j) {
      if (nk[j] <= 0.0) continue;
      mu[j] = sx[j] / nk[j];
      var[j] = std::max(kVarFloor, sxx[j] / nk[j] - mu[j] * mu[j]);
      pi[j] = std::max(nk[j] / n, 1e-12);
    }
    out.summary.iterations = it + 1;
    if (ll - prev < 1e-8) break;
    prev = ll;
  }
  std::vector<std::size_t> order(kk);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mu[a] < mu[b]; });
  for (std::size_t j : order) {
    Cluster c;
    c.mean = mu[j];
    c.std = std::sqrt(var[j]);
    c.weight = pi[j];
    c.count = static_cast<std::size_t>(std::lround(nk[j]));
    out.summary.clusters.push_back(c);
  }
  return out;
}

bool gmm_is_line(const ClusterSummary& summary, double value) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < summary.clusters.size(); ++j) {
    const Cluster& c = summary.clusters[j];
    const double var = std::max(c.std * c.std, 1e-6);
    const double d = value - c.mean;
    const double score = std::log(std::max(c.weight, 1e-300)) - 0.5 * std::log(var) - 0.5 * d * d / var;
    if (score > best_score) {
      best_score = score;
      best = j;
    }
  }
  return best + 1 == summary.clusters.size();
}

GrayImage threshold_mask(const GrayImage& image, double threshold) {
  GrayImage out(image.width, image.height);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) out.pixels[i] = image.pixels[i] > threshold ? 1.0f : 0.0f;
  return out;
}

GrayImage gmm_mask(const GrayImage& image, const ClusterSummary& summary) {
  GrayImage out(image.width, image.height);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) out.pixels[i] = gmm_is_line(summary, image.pixels[i]) ? 1.0f : 0.0f;
  return out;
}

WidthMeasurement measure_widths(const GrayImage& mask, double pixel_scale, double sample_pitch_mm) {
  mask.validate();
  if (!(pixel_scale > 0.0) || !(sample_pitch_mm > 0.0)) throw ContractError("scale and pitch must be positive");
  const int w = mask.width;
  const int h = mask.height;
  std::vector<int> label(mask.pixels.size(), -1);
  std::vector<std::vector<int>> components;
  for (int start = 0; start < w * h; ++start) {
    if (mask.pixels[static_cast<std::size_t>(start)] < 0.5f || label[static_cast<std::size_t>(start)] >= 0) continue;
    const int id = static_cast<int>(components.size());
    std::vector<int> members{start};
    label[static_cast<std::size_t>(start)] = id;
    for (std::size_t head = 0; head < members.size(); ++head) {
      const int px = members[head] % w;
      const int py = members[head] / w;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = px + dx;
          const int ny = py + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const auto k = static_cast<std::size_t>(ny * w + nx);
          if (mask.pixels[k] >= 0.5f && label[k] < 0) {
            label[k] = id;
            members.push_back(static_cast<int>(k));
          }
        }
      }
    }
    components.push_back(std::move(members));
  }
  if (components.empty()) throw DetectionError("segmentation mask contains no bead");

  WidthMeasurement out;
  const auto largest = std::max_element(components.begin(), components.end(),
                                        [](const auto& a, const auto& b) { return a.size() < b.size(); });
  if (components.size() > 1) {
    out.warnings.push_back(fmt::format("discarded {} smaller mask components", components.size() - 1));
  }
  const std::vector<int>& bead = *largest;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (int k : bead) mean += Eigen::Vector2d(k % w, k / w);
  mean /= static_cast<double>(bead.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (int k : bead) {
    const Eigen::Vector2d d = Eigen::Vector2d(k % w, k / w) - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(bead.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  Eigen::Vector2d axis = eig.eigenvectors().col(1);
  if (axis.x() < -1e-12 || (std::abs(axis.x()) <= 1e-12 && axis.y() < 0)) axis = -axis;
  const Eigen::Vector2d normal(-axis.y(), axis.x());
  out.axis = axis;
  const double minor = std::max(eig.eigenvalues()[0], 1e-12);
  if (std::sqrt(eig.eigenvalues()[1] / minor) < 3.0) {
    out.warnings.push_back("bead aspect ratio below 3; orientation is unreliable");
  }

  double tmin = std::numeric_limits<double>::infinity();
  double tmax = -tmin;
  for (int k : bead) {
    const double t = (Eigen::Vector2d(k % w, k / w) - mean).dot(axis);
    tmin = std::min(tmin, t);
    tmax = std::max(tmax, t);
  }
  const double pitch_px = sample_pitch_mm / pixel_scale;
  const auto slices = static_cast<std::size_t>(std::floor((tmax - tmin) / pitch_px)) + 1;
  std::vector<double> lo(slices, std::numeric_limits<double>::infinity());
  std::vector<double> hi(slices, -std::numeric_limits<double>::infinity());
  for (int k : bead) {
    const Eigen::Vector2d d = Eigen::Vector2d(k % w, k / w) - mean;
    const double t = d.dot(axis) - tmin;
    const auto j = static_cast<std::size_t>(std::lround(t / pitch_px));
    if (j >= slices || std::abs(t - static_cast<double>(j) * pitch_px) > 0.5) continue;
    const double n = d.dot(normal);
    lo[j] = std::min(lo[j], n);
    hi[j] = std::max(hi[j], n);
  }
  for (std::size_t j = 0; j < slices; ++j) {
    if (hi[j] < lo[j]) continue;
    out.profile.push_back({static_cast<double>(j) * sample_pitch_mm, (hi[j] - lo[j] + 1.0) * pixel_scale});
  }
  return out;
}

GrayImage crop(const GrayImage& image, int x0, int y0, int width, int height) {
  const int xa = std::clamp(x0, 0, image.width);
  const int ya = std::clamp(y0, 0, image.height);
  const int xb = std::clamp(x0 + width, 0, image.width);
  const int yb = std::clamp(y0 + height, 0, image.height);
  if (xb <= xa || yb <= ya) throw ContractError("crop lies outside the image");
  GrayImage out(xb - xa, yb - ya);
  for (int y = ya; y < yb; ++y) {
    for (int x = xa; x < xb; ++x) out.at(x - xa, y - ya) = image.at(x, y);
  }
  return out;
}

RoiResult measure_roi(const GrayImage& roi, double pixel_scale, double sample_pitch_mm, Segmentation method,
                      double threshold_n) {
  RoiResult out;
  out.method = method;
  GrayImage mask;
  if (method == Segmentation::kmeans) {
    out.clusters = cluster_kmeans(roi.pixels);
    mask = threshold_mask(roi, threshold_kmeans(out.clusters, threshold_n));
  } else {
    out.clusters = cluster_gmm(roi.pixels).summary;
    mask = gmm_mask(roi, out.clusters);
  }
  out.measurement = measure_widths(mask, pixel_scale, sample_pitch_mm);
  if (threshold_n < 1.0 || threshold_n > 2.5) {
    out.measurement.warnings.push_back(fmt::format("threshold multiplier {} is outside [1, 2.5]", threshold_n));
  }
  return out;
}

}  // namespace extruflow
