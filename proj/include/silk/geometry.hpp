#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace silk {

using Vec2 = Eigen::Vector2d;
using Mat3 = Eigen::Matrix3d;

// Continuous image coordinates put the centre of the top-left pixel at
// (0.5, 0.5); pixel (row r, col c) covers [c, c+1) x [r, r+1).

// Invertible projective map, stored normalised (m(2,2) == 1) together with
// its inverse so that inverse().inverse() is exactly the original.
class Homography {
 public:
  Homography();
  explicit Homography(const Mat3& m);

  static Homography translation(double dx, double dy);

  const Mat3& matrix() const noexcept { return m_; }
  Homography inverse() const;
  // (a * b) applies b first.
  Homography operator*(const Homography& rhs) const;

  // nullopt when the point maps to infinity (|w| < 1e-12).
  std::optional<Vec2> apply(const Vec2& p) const;

 private:
  Homography(const Mat3& m, const Mat3& inv) : m_(m), inv_(inv) {}
  Mat3 m_;
  Mat3 inv_;
};

std::vector<std::optional<Vec2>> apply_homography(const Homography& h, std::span<const Vec2> points);

struct ImageShape {
  int height = 0;
  int width = 0;
};

// Single-channel image with intensities in [0,1].
struct ImageGray {
  ImageGray() = default;
  ImageGray(int h, int w, float fill = 0.0f);
  ImageGray(int h, int w, std::vector<float> data);

  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  ImageShape shape() const noexcept { return {height, width}; }
  float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// Bilinear sample at a continuous position, zero outside the image.
float sample_bilinear(const ImageGray& img, double x, double y);

// Output pixel p takes the bilinear sample of `img` at h^-1(p).
ImageGray warp_image(const ImageGray& img, const Homography& h);

// Bilinear resize with edge clamping.
ImageGray resize_bilinear(const ImageGray& img, int height, int width);

ImageGray crop(const ImageGray& img, int top, int left, int height, int width);

struct HomographySamplerConfig {
  double max_perspective = 0.2;
  double max_rotation = 0.5235987755982988;  // pi / 6
  double scale_min = 0.7;
  double scale_max = 1.4;
  double max_translation = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
};

// Parameters of one sampled warp, all expressed relative to the image
// centre and half-extent.
struct HomographyComponents {
  double perspective_x = 0.0;
  double perspective_y = 0.0;
  double angle = 0.0;
  double scale = 1.0;
  double translation_x = 0.0;  // fraction of image width
  double translation_y = 0.0;  // fraction of image height
};

Homography homography_from_components(const HomographyComponents& c, ImageShape shape);

// Fraction of the image area that stays inside the image after warping;
// 0 when the warp folds the frame or sends a corner to infinity.
double warped_coverage(const Homography& h, ImageShape shape);

Homography sample_homography(const HomographySamplerConfig& cfg, ImageShape shape, std::mt19937_64& rng);
Homography sample_homography(const HomographySamplerConfig& cfg, ImageShape shape);

struct GridShape {
  int height = 0;
  int width = 0;
  int cells() const noexcept { return height * width; }
  bool operator==(const GridShape&) const = default;
};

// Affine map between descriptor-grid and image coordinates:
// image = grid * stride + offset.
struct CoordinateMapping {
  double offset = 0.0;
  double stride = 1.0;
};

Vec2 grid_to_image(const CoordinateMapping& m, const Vec2& grid_xy);
Vec2 image_to_grid(const CoordinateMapping& m, const Vec2& image_xy);

struct CorrespondencePair {
  std::int32_t a = 0;
  std::int32_t b = 0;
  bool operator==(const CorrespondencePair&) const = default;
};

// Bijective pairs of linear cell indices between two grids.
struct CorrespondenceSet {
  std::vector<CorrespondencePair> pairs;
  GridShape grid_a;
  GridShape grid_b;

  std::size_t size() const noexcept { return pairs.size(); }
  bool empty() const noexcept { return pairs.empty(); }
};

// Cell containing a grid-space point (floor of the continuous coordinate),
// or nullopt when outside.
std::optional<int> discretize(const Vec2& grid_xy, GridShape grid);

// Dense pixel correspondences: grid-A centres mapped through h land in a
// grid-B cell, grid-B centres mapped through h^-1 land in a grid-A cell, and
// only pairs where both directions agree and stay in bounds survive.
CorrespondenceSet generate_correspondences(const Homography& h, GridShape grid_a, GridShape grid_b,
                                           const CoordinateMapping& mapping_a, const CoordinateMapping& mapping_b);

}  // namespace silk
