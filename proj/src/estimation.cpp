#include "silk/estimation.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

#include "silk/error.hpp"

namespace silk {

namespace {

// Similarity transform taking the points to centroid 0, mean norm sqrt(2).
Mat3 normaliser(std::span<const PointPair> pairs, bool side_a) {
  Vec2 c = Vec2::Zero();
  for (const auto& p : pairs) c += side_a ? p.a : p.b;
  c /= static_cast<double>(pairs.size());
  double mean = 0.0;
  for (const auto& p : pairs) mean += ((side_a ? p.a : p.b) - c).norm();
  mean /= static_cast<double>(pairs.size());
  if (!(mean > 1e-12)) throw NumericError("degenerate point configuration: all points coincide");
  const double s = std::sqrt(2.0) / mean;
  Mat3 t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

bool collinear(const Vec2& p, const Vec2& q, const Vec2& r) {
  const Vec2 u = q - p;
  const Vec2 v = r - p;
  const double cross = u.x() * v.y() - u.y() * v.x();
  return std::abs(cross) <= 1e-9 * std::max(1.0, u.norm() * v.norm());
}

bool degenerate_sample(std::span<const PointPair> s) {
  for (int side = 0; side < 2; ++side) {
    for (int i = 0; i < 4; ++i) {
      const auto pt = [&](int k) { return side == 0 ? s[k].a : s[k].b; };
      const int j = (i + 1) % 4;
      const int k = (i + 2) % 4;
      if (collinear(pt(i), pt(j), pt(k))) return true;
    }
  }
  return false;
}

double reprojection_error(const Homography& h, const PointPair& p) {
  const auto q = h.apply(p.a);
  return q ? (*q - p.b).norm() : std::numeric_limits<double>::infinity();
}

std::size_t count_inliers(const Homography& h, std::span<const PointPair> pairs, double threshold,
                          std::vector<std::uint8_t>& mask) {
  mask.assign(pairs.size(), 0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (reprojection_error(h, pairs[i]) <= threshold) {
      mask[i] = 1;
      ++n;
    }
  }
  return n;
}

}  // namespace

Homography dlt_homography(std::span<const PointPair> pairs) {
  if (pairs.size() < 4) throw NumericError("DLT needs at least 4 correspondences");
  const Mat3 ta = normaliser(pairs, true);
  const Mat3 tb = normaliser(pairs, false);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(2 * pairs.size()), 9);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Eigen::Vector3d p = ta * pairs[i].a.homogeneous();
    const Eigen::Vector3d q = tb * pairs[i].b.homogeneous();
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << 0, 0, 0, -q.z() * p.transpose(), q.y() * p.transpose();
    a.row(r + 1) << q.z() * p.transpose(), 0, 0, 0, -q.x() * p.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // Eight independent constraints are needed; a near-zero eighth singular
  // value means the solution is not unique.
  if (sv.size() < 8 || !(sv(7) > 1e-9 * sv(0))) {
    throw NumericError("degenerate point configuration: DLT system is rank deficient");
  }
  const Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
  Mat3 hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Mat3 m = tb.inverse() * hn * ta;
  try {
    return Homography(m);
  } catch (const ConfigError& e) {
    throw NumericError(std::string("degenerate DLT solution: ") + e.what());
  }
}

void RansacOptions::validate() const {
  if (!(threshold > 0.0)) throw ConfigError("RANSAC threshold must be positive");
  if (max_iterations < 1) throw ConfigError("RANSAC max_iterations must be >= 1");
  if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("RANSAC confidence must be in (0, 1)");
}

RansacResult ransac_homography(std::span<const PointPair> pairs, const RansacOptions& opts) {
  opts.validate();
  RansacResult best;
  best.inliers.assign(pairs.size(), 0);
  if (pairs.size() < 4) return best;

  std::mt19937_64 rng(opts.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  std::vector<std::uint8_t> mask;
  double needed = static_cast<double>(opts.max_iterations);
  std::array<PointPair, 4> sample;
  int it = 0;
  for (; it < opts.max_iterations && it < needed; ++it) {
    std::array<std::size_t, 4> idx{};
    for (int k = 0; k < 4; ++k) {
      std::size_t c;
      do {
        c = pick(rng);
      } while (std::find(idx.begin(), idx.begin() + k, c) != idx.begin() + k);
      idx[k] = c;
      sample[k] = pairs[c];
    }
    if (degenerate_sample(sample)) continue;
    std::optional<Homography> h;
    try {
      h = dlt_homography(sample);
    } catch (const NumericError&) {
      continue;
    }
    const std::size_t n = count_inliers(*h, pairs, opts.threshold, mask);
    if (n >= 4 && n > best.inlier_count) {
      best.h = h;
      best.inlier_count = n;
      best.inliers = mask;
      const double w = static_cast<double>(n) / static_cast<double>(pairs.size());
      const double miss = 1.0 - std::pow(w, 4.0);
      if (miss <= 0.0) {
        needed = 0.0;
      } else {
        needed = std::min(needed, std::log(1.0 - opts.confidence) / std::log(miss));
      }
    }
  }
  best.iterations = it;
  if (!best.h) return best;

  std::vector<PointPair> inlier_pairs;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (best.inliers[i]) inlier_pairs.push_back(pairs[i]);
  }
  try {
    const Homography refit = dlt_homography(inlier_pairs);
    const std::size_t n = count_inliers(refit, pairs, opts.threshold, mask);
    if (n >= best.inlier_count) {
      best.h = refit;
      best.inlier_count = n;
      best.inliers = mask;
    }
  } catch (const NumericError&) {
  }
  return best;
}

double corner_error(const Homography& estimate, const Homography& truth, ImageShape shape) {
  const double w = shape.width;
  const double h = shape.height;
  const std::array<Vec2, 4> corners{Vec2(0, 0), Vec2(w, 0), Vec2(0, h), Vec2(w, h)};
  double acc = 0.0;
  for (const auto& c : corners) {
    const auto p = estimate.apply(c);
    const auto q = truth.apply(c);
    if (!p || !q) return std::numeric_limits<double>::infinity();
    acc += (*p - *q).norm();
  }
  return acc / 4.0;
}

bool homography_accuracy(const std::optional<Homography>& estimate, const Homography& truth, ImageShape shape,
                         double eps) {
  if (!(eps > 0.0)) throw ConfigError("epsilon must be positive");
  return estimate && corner_error(*estimate, truth, shape) <= eps;
}

std::optional<double> homography_auc(std::span<const double> errors, double max_eps) {
  if (!(max_eps > 0.0)) throw ConfigError("AUC threshold must be positive");
  if (errors.empty()) return std::nullopt;
  std::vector<double> e(errors.begin(), errors.end());
  for (auto& v : e) {
    if (std::isnan(v)) v = std::numeric_limits<double>::infinity();
  }
  std::sort(e.begin(), e.end());
  const double n = static_cast<double>(e.size());
  // Curve points (error, recall), starting at (0, 0).
  std::vector<double> xs{0.0};
  std::vector<double> ys{0.0};
  for (std::size_t i = 0; i < e.size() && e[i] < max_eps; ++i) {
    xs.push_back(e[i]);
    ys.push_back(static_cast<double>(i + 1) / n);
  }
  xs.push_back(max_eps);
  ys.push_back(ys.back());
  double area = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i) area += (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]) / 2.0;
  return area / max_eps;
}

}  // namespace silk
