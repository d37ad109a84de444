#pragma once

#include <cstdint>
#include <random>

#include "silk/geometry.hpp"

namespace silk {

// Photometric augmentation settings. Each augmentation fires independently
// with its probability, always in the order brightness, contrast, gaussian
// noise, speckle noise, motion blur.
struct AugmentConfig {
  double brightness_delta = 0.2;
  double contrast_min = 0.7;
  double contrast_max = 1.3;
  double gaussian_sigma_min = 0.0;
  double gaussian_sigma_max = 0.05;
  double speckle_sigma_min = 0.0;
  double speckle_sigma_max = 0.05;
  int motion_blur_kernel_max = 7;

  double p_brightness = 0.5;
  double p_contrast = 0.5;
  double p_gaussian = 0.5;
  double p_speckle = 0.5;
  double p_motion_blur = 0.5;

  std::uint64_t seed = 0;

  void validate() const;
  // Config with every probability set to zero.
  static AugmentConfig disabled();
};

ImageGray augment(const ImageGray& img, const AugmentConfig& cfg, std::mt19937_64& rng);

// Linear blur kernel of odd `size` along `angle` (radians), replicate border.
ImageGray motion_blur(const ImageGray& img, int size, double angle);

}  // namespace silk
