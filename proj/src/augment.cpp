#include "silk/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <utility>
#include <vector>

#include "silk/error.hpp"

namespace silk {

namespace {

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must be in [0, 1]");
}

void check_range(double lo, double hi, const char* name) {
  if (!(lo >= 0.0) || !(hi >= lo) || !std::isfinite(hi)) {
    throw ConfigError(std::string(name) + " range must satisfy 0 <= min <= max");
  }
}

bool fires(double p, std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

double uniform(double lo, double hi, std::mt19937_64& rng) {
  return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

void AugmentConfig::validate() const {
  if (!(brightness_delta >= 0.0) || !std::isfinite(brightness_delta)) {
    throw ConfigError("brightness_delta must be non-negative");
  }
  check_range(contrast_min, contrast_max, "contrast");
  check_range(gaussian_sigma_min, gaussian_sigma_max, "gaussian sigma");
  check_range(speckle_sigma_min, speckle_sigma_max, "speckle sigma");
  if (motion_blur_kernel_max < 3 || motion_blur_kernel_max % 2 == 0) {
    throw ConfigError("motion_blur_kernel_max must be odd and >= 3");
  }
  check_probability(p_brightness, "p_brightness");
  check_probability(p_contrast, "p_contrast");
  check_probability(p_gaussian, "p_gaussian");
  check_probability(p_speckle, "p_speckle");
  check_probability(p_motion_blur, "p_motion_blur");
}

AugmentConfig AugmentConfig::disabled() {
  AugmentConfig c;
  c.p_brightness = c.p_contrast = c.p_gaussian = c.p_speckle = c.p_motion_blur = 0.0;
  return c;
}

ImageGray motion_blur(const ImageGray& img, int size, double angle) {
  if (size < 1 || size % 2 == 0) throw ConfigError("motion blur kernel size must be odd");
  const int r = size / 2;
  std::vector<std::pair<int, int>> taps;
  for (int t = -r; t <= r; ++t) {
    taps.emplace_back(static_cast<int>(std::lround(t * std::cos(angle))),
                      static_cast<int>(std::lround(t * std::sin(angle))));
  }
  const float w = 1.0f / static_cast<float>(taps.size());
  ImageGray out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      float acc = 0.0f;
      for (const auto& [dx, dy] : taps) {
        acc += img.at(std::clamp(y + dy, 0, img.height - 1), std::clamp(x + dx, 0, img.width - 1));
      }
      out.at(y, x) = acc * w;
    }
  }
  return out;
}

ImageGray augment(const ImageGray& img, const AugmentConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  ImageGray out = img;
  auto& px = out.pixels;

  if (fires(cfg.p_brightness, rng)) {
    const auto delta = static_cast<float>(uniform(-cfg.brightness_delta, cfg.brightness_delta, rng));
    for (auto& v : px) v += delta;
  }
  if (fires(cfg.p_contrast, rng)) {
    const auto c = static_cast<float>(uniform(cfg.contrast_min, cfg.contrast_max, rng));
    const double mean = px.empty() ? 0.0 : std::accumulate(px.begin(), px.end(), 0.0) / static_cast<double>(px.size());
    const auto m = static_cast<float>(mean);
    for (auto& v : px) v = (v - m) * c + m;
  }
  if (fires(cfg.p_gaussian, rng)) {
    const double sigma = uniform(cfg.gaussian_sigma_min, cfg.gaussian_sigma_max, rng);
    if (sigma > 0.0) {
      std::normal_distribution<double> noise(0.0, sigma);
      for (auto& v : px) v += static_cast<float>(noise(rng));
    }
  }
  if (fires(cfg.p_speckle, rng)) {
    const double sigma = uniform(cfg.speckle_sigma_min, cfg.speckle_sigma_max, rng);
    if (sigma > 0.0) {
      std::normal_distribution<double> noise(0.0, sigma);
      for (auto& v : px) v *= static_cast<float>(1.0 + noise(rng));
    }
  }
  for (auto& v : px) v = std::clamp(v, 0.0f, 1.0f);
  if (fires(cfg.p_motion_blur, rng)) {
    const int sizes = (cfg.motion_blur_kernel_max - 1) / 2;
    const int size = 2 * std::uniform_int_distribution<int>(1, sizes)(rng) + 1;
    const double angle = uniform(0.0, std::numbers::pi, rng);
    out = motion_blur(out, size, angle);
    for (auto& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
  }
  return out;
}

}  // namespace silk
