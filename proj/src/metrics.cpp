#include "silk/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "silk/error.hpp"

namespace silk {

namespace {

bool inside(const Vec2& p, ImageShape s) {
  return p.x() >= 0.0 && p.y() >= 0.0 && p.x() < s.width && p.y() < s.height;
}

Vec2 position(const Keypoint& k) { return {k.x, k.y}; }

void check_eps(double eps) {
  if (!(eps > 0.0)) throw ConfigError("epsilon must be positive");
}

}  // namespace

std::optional<double> repeatability(std::span<const Keypoint> kps_a, std::span<const Keypoint> kps_b,
                                    const Homography& h, ImageShape shape_a, ImageShape shape_b, double eps) {
  check_eps(eps);
  const Homography h_inv = h.inverse();
  // Kept points in their own frame and mapped into the other one.
  std::vector<Vec2> a_own, a_in_b, b_own, b_in_a;
  for (const auto& k : kps_a) {
    const auto p = h.apply(position(k));
    if (p && inside(*p, shape_b)) {
      a_own.push_back(position(k));
      a_in_b.push_back(*p);
    }
  }
  for (const auto& k : kps_b) {
    const auto p = h_inv.apply(position(k));
    if (p && inside(*p, shape_a)) {
      b_own.push_back(position(k));
      b_in_a.push_back(*p);
    }
  }
  const std::size_t total = a_own.size() + b_own.size();
  if (total == 0) return std::nullopt;

  // Each direction is measured in the frame of the image it lands in.
  const auto repeated = [eps](const std::vector<Vec2>& mapped, const std::vector<Vec2>& targets) {
    std::size_t count = 0;
    for (const Vec2& p : mapped) {
      for (const Vec2& q : targets) {
        if ((p - q).norm() <= eps) {
          ++count;
          break;
        }
      }
    }
    return count;
  };
  const std::size_t count = repeated(a_in_b, b_own) + repeated(b_in_a, a_own);
  return static_cast<double>(count) / static_cast<double>(total);
}

std::vector<double> match_errors(const MatchSet& matches, std::span<const Keypoint> kps_a,
                                 std::span<const Keypoint> kps_b, const Homography& h) {
  std::vector<double> out;
  out.reserve(matches.size());
  for (const auto& m : matches.pairs) {
    if (m.a < 0 || static_cast<std::size_t>(m.a) >= kps_a.size() || m.b < 0 ||
        static_cast<std::size_t>(m.b) >= kps_b.size()) {
      throw ShapeError("match index outside keypoint set");
    }
    const auto p = h.apply(position(kps_a[m.a]));
    out.push_back(p ? (*p - position(kps_b[m.b])).norm() : std::numeric_limits<double>::infinity());
  }
  return out;
}

std::optional<double> mma(const MatchSet& matches, std::span<const Keypoint> kps_a, std::span<const Keypoint> kps_b,
                          const Homography& h, double eps) {
  check_eps(eps);
  if (matches.pairs.empty()) return std::nullopt;
  std::size_t good = 0;
  for (double e : match_errors(matches, kps_a, kps_b, h)) good += e <= eps;
  return static_cast<double>(good) / static_cast<double>(matches.size());
}

}  // namespace silk
