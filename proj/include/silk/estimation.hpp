#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "silk/geometry.hpp"

namespace silk {

struct PointPair {
  Vec2 a;
  Vec2 b;
};

// Normalised DLT: both point sets are moved to their centroid and scaled to
// mean distance sqrt(2) before the singular-vector solve. Throws
// NumericError for fewer than 4 pairs or a rank-deficient system.
Homography dlt_homography(std::span<const PointPair> pairs);

struct RansacOptions {
  double threshold = 3.0;
  int max_iterations = 10000;
  double confidence = 0.999;
  std::uint64_t seed = 0;

  void validate() const;
};

// A missing homography means estimation failed; it is a result, not an
// error.
struct RansacResult {
  std::optional<Homography> h;
  std::vector<std::uint8_t> inliers;
  std::size_t inlier_count = 0;
  int iterations = 0;

  bool success() const noexcept { return h.has_value(); }
};

RansacResult ransac_homography(std::span<const PointPair> pairs, const RansacOptions& opts);

// Mean distance between the four image corners mapped by each homography.
// Infinite when a corner maps to infinity.
double corner_error(const Homography& estimate, const Homography& truth, ImageShape shape);

bool homography_accuracy(const std::optional<Homography>& estimate, const Homography& truth, ImageShape shape,
                         double eps);

// Area under the fraction-below-threshold curve on [0, max_eps], divided by
// max_eps, with exact trapezoids between sorted errors. Failed estimates
// enter as +inf. Empty input gives nullopt.
std::optional<double> homography_auc(std::span<const double> errors, double max_eps);

}  // namespace silk
