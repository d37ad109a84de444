#pragma once

#include <optional>
#include <span>

#include "silk/geometry.hpp"
#include "silk/matching.hpp"

namespace silk {

// Symmetric repeatability over the shared region: keypoints of A are kept
// when h maps them inside B, keypoints of B when h^-1 maps them inside A. A
// kept point of A counts as repeated when its image under h lies within eps
// of a kept point of B, measured in B's frame, and likewise for B in A's
// frame. Returns (repeated_a + repeated_b) / (kept_a + kept_b), nullopt when
// nothing is kept.
std::optional<double> repeatability(std::span<const Keypoint> kps_a, std::span<const Keypoint> kps_b,
                                    const Homography& h, ImageShape shape_a, ImageShape shape_b, double eps);

// |h(p_a) - p_b| for every match.
std::vector<double> match_errors(const MatchSet& matches, std::span<const Keypoint> kps_a,
                                 std::span<const Keypoint> kps_b, const Homography& h);

// Fraction of matches with reprojection error <= eps; nullopt for no matches.
std::optional<double> mma(const MatchSet& matches, std::span<const Keypoint> kps_a, std::span<const Keypoint> kps_b,
                          const Homography& h, double eps);

}  // namespace silk
