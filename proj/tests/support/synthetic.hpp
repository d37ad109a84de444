#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "silk/geometry.hpp"
#include "silk/tensor.hpp"

namespace silk::testing {

// Checkerboard of random cell size and phase with a few soft blobs and
// rectangles on top. Intensities stay in [0.02,1] so no patch is exactly black.
ImageGray synthetic_image(int height, int width, std::uint64_t seed);
std::vector<ImageGray> synthetic_corpus(int count, int height, int width, std::uint64_t seed);

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

ImageGray random_image(int height, int width, std::mt19937_64& rng);

// Random bijective pairs between an m_a and an m_b cell grid (1-row grids).
CorrespondenceSet random_bijection(int m_a, int m_b, int n, std::mt19937_64& rng);

// Homography with moderate random perspective around the frame centre.
Homography random_homography(std::mt19937_64& rng, double size, double strength = 0.1);

}  // namespace silk::testing
