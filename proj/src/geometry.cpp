#include "silk/geometry.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <string>

#include "silk/error.hpp"

namespace silk {

// ---------------------------------------------------------------------------
// Homography

namespace {

Mat3 normalized(const Mat3& m) {
  if (std::abs(m(2, 2)) < 1e-12) return m;
  return m / m(2, 2);
}

}  // namespace

Homography::Homography() : m_(Mat3::Identity()), inv_(Mat3::Identity()) {}

Homography::Homography(const Mat3& m) {
  if (!m.allFinite()) throw ConfigError("homography has non-finite entries");
  if (std::abs(m(2, 2)) < 1e-12) throw ConfigError("homography cannot be normalised: m(2,2) is zero");
  m_ = m / m(2, 2);
  const double det = m_.determinant();
  if (!(std::abs(det) > 1e-9)) {
    throw ConfigError("homography is singular (|det| = " + std::to_string(std::abs(det)) + ")");
  }
  inv_ = normalized(m_.inverse());
}

Homography Homography::translation(double dx, double dy) {
  Mat3 m = Mat3::Identity();
  m(0, 2) = dx;
  m(1, 2) = dy;
  return Homography(m);
}

Homography Homography::inverse() const { return Homography(inv_, m_); }

Homography Homography::operator*(const Homography& rhs) const { return Homography(m_ * rhs.m_); }

std::optional<Vec2> Homography::apply(const Vec2& p) const {
  const Eigen::Vector3d q = m_ * Eigen::Vector3d(p.x(), p.y(), 1.0);
  if (std::abs(q.z()) < 1e-12) return std::nullopt;
  return Vec2(q.x() / q.z(), q.y() / q.z());
}

std::vector<std::optional<Vec2>> apply_homography(const Homography& h, std::span<const Vec2> points) {
  std::vector<std::optional<Vec2>> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(h.apply(p));
  return out;
}

// ---------------------------------------------------------------------------
// Images

ImageGray::ImageGray(int h, int w, float fill) : height(h), width(w) {
  if (h <= 0 || w <= 0) {
    throw ShapeError("image extents must be positive, got " + std::to_string(h) + "x" + std::to_string(w));
  }
  pixels.assign(static_cast<std::size_t>(h) * w, fill);
}

ImageGray::ImageGray(int h, int w, std::vector<float> data) : height(h), width(w), pixels(std::move(data)) {
  if (h <= 0 || w <= 0) {
    throw ShapeError("image extents must be positive, got " + std::to_string(h) + "x" + std::to_string(w));
  }
  if (pixels.size() != static_cast<std::size_t>(h) * w) throw ShapeError("image data length does not match extents");
}

float sample_bilinear(const ImageGray& img, double x, double y) {
  const double u = x - 0.5;
  const double v = y - 0.5;
  const double fu = std::floor(u);
  const double fv = std::floor(v);
  // Far outside: avoid overflowing the integer conversion.
  if (fu < -2.0 || fv < -2.0 || fu > img.width + 1.0 || fv > img.height + 1.0) return 0.0f;
  const int x0 = static_cast<int>(fu);
  const int y0 = static_cast<int>(fv);
  const double ax = u - fu;
  const double ay = v - fv;
  auto px = [&](int yy, int xx) -> double {
    if (xx < 0 || yy < 0 || xx >= img.width || yy >= img.height) return 0.0;
    return img.at(yy, xx);
  };
  double acc = 0.0;
  if (ay < 1.0) {
    if (ax < 1.0) acc += (1.0 - ax) * (1.0 - ay) * px(y0, x0);
    if (ax > 0.0) acc += ax * (1.0 - ay) * px(y0, x0 + 1);
  }
  if (ay > 0.0) {
    if (ax < 1.0) acc += (1.0 - ax) * ay * px(y0 + 1, x0);
    if (ax > 0.0) acc += ax * ay * px(y0 + 1, x0 + 1);
  }
  return static_cast<float>(acc);
}

ImageGray warp_image(const ImageGray& img, const Homography& h) {
  const Homography inv = h.inverse();
  ImageGray out(img.height, img.width, 0.0f);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const auto src = inv.apply(Vec2(x + 0.5, y + 0.5));
      if (!src) continue;
      out.at(y, x) = std::clamp(sample_bilinear(img, src->x(), src->y()), 0.0f, 1.0f);
    }
  }
  return out;
}

ImageGray resize_bilinear(const ImageGray& img, int height, int width) {
  ImageGray out(height, width, 0.0f);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int y = 0; y < height; ++y) {
    const double v = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(v);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double ay = v - y0;
    for (int x = 0; x < width; ++x) {
      const double u = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(u);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double ax = u - x0;
      const double top = (1.0 - ax) * img.at(y0, x0) + ax * img.at(y0, x1);
      const double bottom = (1.0 - ax) * img.at(y1, x0) + ax * img.at(y1, x1);
      out.at(y, x) = static_cast<float>((1.0 - ay) * top + ay * bottom);
    }
  }
  return out;
}

ImageGray crop(const ImageGray& img, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || top + height > img.height || left + width > img.width) {
    throw ShapeError("crop window out of image bounds");
  }
  ImageGray out(height, width);
  for (int y = 0; y < height; ++y) {
    std::copy_n(&img.pixels[static_cast<std::size_t>(top + y) * img.width + left], width,
                &out.pixels[static_cast<std::size_t>(y) * width]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Homography sampling

void HomographySamplerConfig::validate() const {
  if (!(scale_min > 0.0) || scale_min > scale_max) {
    throw ConfigError("homography sampler: scale range must satisfy 0 < min <= max");
  }
  if (max_perspective < 0.0 || max_rotation < 0.0 || max_translation < 0.0) {
    throw ConfigError("homography sampler: ranges must be non-negative");
  }
}

Homography homography_from_components(const HomographyComponents& c, ImageShape shape) {
  const double cx = shape.width / 2.0;
  const double cy = shape.height / 2.0;
  const double half = std::max(shape.width, shape.height) / 2.0;

  Mat3 to_norm;
  to_norm << 1.0 / half, 0.0, -cx / half, 0.0, 1.0 / half, -cy / half, 0.0, 0.0, 1.0;
  Mat3 from_norm;
  from_norm << half, 0.0, cx, 0.0, half, cy, 0.0, 0.0, 1.0;

  Mat3 persp = Mat3::Identity();
  persp(2, 0) = c.perspective_x;
  persp(2, 1) = c.perspective_y;
  Mat3 scale = Mat3::Identity();
  scale(0, 0) = c.scale;
  scale(1, 1) = c.scale;
  Mat3 rot = Mat3::Identity();
  rot << std::cos(c.angle), -std::sin(c.angle), 0.0, std::sin(c.angle), std::cos(c.angle), 0.0, 0.0, 0.0, 1.0;
  Mat3 trans = Mat3::Identity();
  trans(0, 2) = c.translation_x * shape.width / half;
  trans(1, 2) = c.translation_y * shape.height / half;

  return Homography(from_norm * trans * rot * scale * persp * to_norm);
}

namespace {

using Polygon = std::vector<Vec2>;

double polygon_area(const Polygon& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return std::abs(a) / 2.0;
}

// Sutherland-Hodgman against the half plane sign * (coord - bound) <= 0.
Polygon clip(const Polygon& poly, int axis, double bound, double sign) {
  Polygon out;
  auto inside = [&](const Vec2& p) { return sign * (p[axis] - bound) <= 0.0; };
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& cur = poly[i];
    const Vec2& prev = poly[(i + poly.size() - 1) % poly.size()];
    const bool in_cur = inside(cur);
    const bool in_prev = inside(prev);
    if (in_cur != in_prev) {
      const double t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
      out.push_back(prev + t * (cur - prev));
    }
    if (in_cur) out.push_back(cur);
  }
  return out;
}

}  // namespace

double warped_coverage(const Homography& h, ImageShape shape) {
  const double w = shape.width;
  const double ht = shape.height;
  const Vec2 corners[4] = {{0.0, 0.0}, {w, 0.0}, {w, ht}, {0.0, ht}};
  Polygon quad;
  for (const auto& c : corners) {
    const Eigen::Vector3d q = h.matrix() * Eigen::Vector3d(c.x(), c.y(), 1.0);
    if (q.z() <= 1e-12) return 0.0;
    quad.emplace_back(q.x() / q.z(), q.y() / q.z());
  }
  double sign = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Vec2 e1 = quad[(i + 1) % 4] - quad[i];
    const Vec2 e2 = quad[(i + 2) % 4] - quad[(i + 1) % 4];
    const double cross = e1.x() * e2.y() - e1.y() * e2.x();
    if (cross == 0.0 || (sign != 0.0 && (cross > 0.0) != (sign > 0.0))) return 0.0;
    sign = cross;
  }
  Polygon poly = quad;
  poly = clip(poly, 0, 0.0, -1.0);
  if (!poly.empty()) poly = clip(poly, 0, w, 1.0);
  if (!poly.empty()) poly = clip(poly, 1, 0.0, -1.0);
  if (!poly.empty()) poly = clip(poly, 1, ht, 1.0);
  if (poly.size() < 3) return 0.0;
  return polygon_area(poly) / (w * ht);
}

Homography sample_homography(const HomographySamplerConfig& cfg, ImageShape shape, std::mt19937_64& rng) {
  cfg.validate();
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  for (int attempt = 0; attempt < 100; ++attempt) {
    HomographyComponents c;
    c.perspective_x = uniform(-cfg.max_perspective, cfg.max_perspective);
    c.perspective_y = uniform(-cfg.max_perspective, cfg.max_perspective);
    c.angle = uniform(-cfg.max_rotation, cfg.max_rotation);
    c.scale = uniform(cfg.scale_min, cfg.scale_max);
    c.translation_x = uniform(-cfg.max_translation, cfg.max_translation);
    c.translation_y = uniform(-cfg.max_translation, cfg.max_translation);
    try {
      Homography h = homography_from_components(c, shape);
      if (warped_coverage(h, shape) >= 0.25) return h;
    } catch (const ConfigError&) {
      // singular draw, resample
    }
  }
  throw ConfigError("homography sampler rejected 100 consecutive draws; configuration is degenerate");
}

Homography sample_homography(const HomographySamplerConfig& cfg, ImageShape shape) {
  std::mt19937_64 rng(cfg.seed);
  return sample_homography(cfg, shape, rng);
}

// ---------------------------------------------------------------------------
// Correspondences

Vec2 grid_to_image(const CoordinateMapping& m, const Vec2& grid_xy) {
  return grid_xy * m.stride + Vec2::Constant(m.offset);
}

Vec2 image_to_grid(const CoordinateMapping& m, const Vec2& image_xy) {
  return (image_xy - Vec2::Constant(m.offset)) / m.stride;
}

std::optional<int> discretize(const Vec2& grid_xy, GridShape grid) {
  const double fx = std::floor(grid_xy.x());
  const double fy = std::floor(grid_xy.y());
  if (!(fx >= 0.0 && fy >= 0.0 && fx < grid.width && fy < grid.height)) return std::nullopt;
  return static_cast<int>(fy) * grid.width + static_cast<int>(fx);
}

namespace {

std::vector<int> directional_map(const Homography& h, GridShape from, GridShape to, const CoordinateMapping& map_from,
                                 const CoordinateMapping& map_to) {
  std::vector<int> target(static_cast<std::size_t>(from.cells()), -1);
  for (int r = 0; r < from.height; ++r) {
    for (int c = 0; c < from.width; ++c) {
      const auto warped = h.apply(grid_to_image(map_from, Vec2(c + 0.5, r + 0.5)));
      if (!warped) continue;
      if (auto cell = discretize(image_to_grid(map_to, *warped), to)) target[r * from.width + c] = *cell;
    }
  }
  return target;
}

}  // namespace

CorrespondenceSet generate_correspondences(const Homography& h, GridShape grid_a, GridShape grid_b,
                                           const CoordinateMapping& mapping_a, const CoordinateMapping& mapping_b) {
  const auto forward = directional_map(h, grid_a, grid_b, mapping_a, mapping_b);
  const auto backward = directional_map(h.inverse(), grid_b, grid_a, mapping_b, mapping_a);
  CorrespondenceSet out;
  out.grid_a = grid_a;
  out.grid_b = grid_b;
  for (int a = 0; a < grid_a.cells(); ++a) {
    const int b = forward[a];
    if (b >= 0 && backward[b] == a) out.pairs.push_back({a, b});
  }
  return out;
}

}  // namespace silk
