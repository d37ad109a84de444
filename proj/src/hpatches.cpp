#include "silk/hpatches.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "silk/error.hpp"
#include "silk/image_io.hpp"

namespace silk {

namespace {

std::filesystem::path find_image(const std::filesystem::path& dir, int k) {
  for (const char* ext : {".ppm", ".pgm", ".png"}) {
    const auto p = dir / (std::to_string(k) + ext);
    if (std::filesystem::is_regular_file(p)) return p;
  }
  throw Error("scene " + dir.filename().string() + ": missing image " + std::to_string(k) + ".ppm");
}

Mat3 scaling(double sx, double sy) {
  Mat3 m;
  m << sx, 0, 0, 0, sy, 0, 0, 0, 1;
  return m;
}

}  // namespace

Homography read_homography_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open homography file " + path.string());
  std::vector<double> v;
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw FormatError("non-numeric token '" + tok + "' in " + path.string());
    v.push_back(x);
  }
  if (v.size() != 9) {
    throw FormatError("homography file " + path.string() + " holds " + std::to_string(v.size()) +
                      " numbers, expected 9");
  }
  Mat3 m;
  m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  try {
    return Homography(m);
  } catch (const ConfigError& e) {
    throw FormatError("invalid homography in " + path.string() + ": " + e.what());
  }
}

void write_homography_file(const std::filesystem::path& path, const Homography& h) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << std::setprecision(17);
  const Mat3& m = h.matrix();
  for (int r = 0; r < 3; ++r) out << m(r, 0) << ' ' << m(r, 1) << ' ' << m(r, 2) << '\n';
}

ImageGray resize_short_edge(const ImageGray& img, int short_edge) {
  const int s = std::min(img.height, img.width);
  if (s == short_edge) return img;
  const double f = static_cast<double>(short_edge) / s;
  const int h = img.height == s ? short_edge : static_cast<int>(std::lround(img.height * f));
  const int w = img.width == s ? short_edge : static_cast<int>(std::lround(img.width * f));
  return resize_bilinear(img, h, w);
}

std::vector<std::filesystem::path> list_hpatches_scenes(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw Error("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> scenes;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory()) scenes.push_back(e.path());
  }
  std::sort(scenes.begin(), scenes.end());
  if (scenes.empty()) throw Error("no scenes in dataset " + dir.string());
  return scenes;
}

std::vector<ScenePair> load_hpatches_scene(const std::filesystem::path& scene_dir, int resize_short) {
  const std::string name = scene_dir.filename().string();
  const auto load = [&](int k) {
    ImageGray img = read_image(find_image(scene_dir, k));
    const ImageShape original = img.shape();
    if (resize_short > 0) img = resize_short_edge(img, resize_short);
    return std::pair{std::make_shared<const ImageGray>(std::move(img)), original};
  };
  // Integer-centre pixel coordinates to half-pixel centres.
  const Homography shift = Homography::translation(0.5, 0.5);
  const auto [img1, shape1] = load(1);
  const Mat3 s1 = scaling(static_cast<double>(img1->width) / shape1.width,
                          static_cast<double>(img1->height) / shape1.height);
  std::vector<ScenePair> pairs;
  for (int k = 2; k <= 6; ++k) {
    const auto h_path = scene_dir / ("H_1_" + std::to_string(k));
    if (!std::filesystem::is_regular_file(h_path)) {
      throw Error("scene " + name + ": missing homography file H_1_" + std::to_string(k));
    }
    const Homography h_file = read_homography_file(h_path);
    const auto [imgk, shapek] = load(k);
    const Mat3 sk = scaling(static_cast<double>(imgk->width) / shapek.width,
                            static_cast<double>(imgk->height) / shapek.height);
    const Homography h = shift * h_file * shift.inverse();
    const Homography h_gt = Homography(sk) * h * Homography(s1).inverse();
    pairs.push_back({img1, imgk, h_gt, name, k});
  }
  return pairs;
}

std::vector<ScenePair> load_hpatches(const std::filesystem::path& dir, int resize_short) {
  std::vector<ScenePair> out;
  for (const auto& scene : list_hpatches_scenes(dir)) {
    auto pairs = load_hpatches_scene(scene, resize_short);
    out.insert(out.end(), pairs.begin(), pairs.end());
  }
  return out;
}

}  // namespace silk
