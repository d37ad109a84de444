#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "silk/geometry.hpp"

namespace silk {

// Two views of a scene with the ground-truth map from A to B pixels.
struct ScenePair {
  std::shared_ptr<const ImageGray> image_a;
  std::shared_ptr<const ImageGray> image_b;
  Homography h_gt;
  std::string scene;
  int pair = 0;  // index k of the second image
};

inline constexpr int kHPatchesResizeShort = 480;

// Scene folders (sorted) below an HPatches-layout directory. Throws Error
// when there are none.
std::vector<std::filesystem::path> list_hpatches_scenes(const std::filesystem::path& dir);

// Pairs (1,k), k = 2..6, of one scene folder holding 1.ppm..6.ppm and
// H_1_2..H_1_6. With resize_short > 0 each image is rescaled so its shorter
// edge has that length and h_gt is conjugated accordingly. The homography
// files use integer pixel centres and are converted to the half-pixel
// convention.
std::vector<ScenePair> load_hpatches_scene(const std::filesystem::path& scene_dir,
                                           int resize_short = kHPatchesResizeShort);

std::vector<ScenePair> load_hpatches(const std::filesystem::path& dir, int resize_short = kHPatchesResizeShort);

// Nine whitespace-separated reals, row-major. Throws FormatError otherwise.
Homography read_homography_file(const std::filesystem::path& path);
void write_homography_file(const std::filesystem::path& path, const Homography& h);

// Bilinear resize so the shorter edge equals `short_edge`.
ImageGray resize_short_edge(const ImageGray& img, int short_edge);

}  // namespace silk
