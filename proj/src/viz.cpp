#include "silk/viz.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "silk/error.hpp"
#include "silk/image_io.hpp"

namespace silk {

std::vector<MatchRow> match_rows(const MatchSet& matches, const KeypointSet& a, const KeypointSet& b) {
  std::vector<MatchRow> rows;
  rows.reserve(matches.size());
  for (const auto& m : matches.pairs) {
    const Keypoint& ka = a.keypoints.at(static_cast<std::size_t>(m.a));
    const Keypoint& kb = b.keypoints.at(static_cast<std::size_t>(m.b));
    rows.push_back({m.a, m.b, ka.x, ka.y, kb.x, kb.y, m.similarity, m.probability});
  }
  return rows;
}

void write_match_tsv(std::ostream& os, std::span<const MatchRow> rows) {
  os << std::setprecision(9);
  for (const auto& r : rows) {
    os << r.ia << '\t' << r.ib << '\t' << r.xa << '\t' << r.ya << '\t' << r.xb << '\t' << r.yb << '\t'
       << r.similarity << '\t' << r.probability << '\n';
  }
}

void write_match_tsv(const std::filesystem::path& path, std::span<const MatchRow> rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_match_tsv(out, rows);
}

std::vector<MatchRow> read_match_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open match file " + path.string());
  std::vector<MatchRow> rows;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream s(line);
    std::vector<std::string> cols;
    std::string col;
    while (std::getline(s, col, '\t')) cols.push_back(col);
    if (cols.size() != 8) {
      throw FormatError(path.string() + ":" + std::to_string(n) + ": expected 8 columns, found " +
                        std::to_string(cols.size()));
    }
    try {
      rows.push_back({std::stoi(cols[0]), std::stoi(cols[1]), std::stod(cols[2]), std::stod(cols[3]),
                      std::stod(cols[4]), std::stod(cols[5]), std::stod(cols[6]), std::stod(cols[7])});
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(n) + ": malformed number");
    }
  }
  return rows;
}

std::array<std::uint8_t, 3> RgbImage::pixel(int y, int x) const {
  const std::size_t i = 3 * (static_cast<std::size_t>(y) * width + x);
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

namespace {

void put(RgbImage& img, int x, int y, const std::array<std::uint8_t, 3>& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  const std::size_t i = 3 * (static_cast<std::size_t>(y) * img.width + x);
  img.rgb[i] = c[0];
  img.rgb[i + 1] = c[1];
  img.rgb[i + 2] = c[2];
}

void line(RgbImage& img, int x0, int y0, int x1, int y1, const std::array<std::uint8_t, 3>& c) {
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    put(img, x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void blit(RgbImage& dst, const ImageGray& src, int left) {
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      const auto v = static_cast<std::uint8_t>(std::lround(std::clamp(src.at(y, x), 0.0f, 1.0f) * 255.0f));
      put(dst, left + x, y, {v, v, v});
    }
  }
}

int pixel_index(double coord) { return static_cast<int>(std::floor(coord)); }

}  // namespace

RgbImage render_matches(const ImageGray& a, const ImageGray& b, std::span<const MatchRow> rows,
                        const std::optional<Homography>& h_gt, double threshold) {
  RgbImage out;
  out.height = std::max(a.height, b.height);
  out.width = a.width + b.width;
  out.rgb.assign(static_cast<std::size_t>(out.height) * out.width * 3, 0);
  blit(out, a, 0);
  blit(out, b, a.width);
  for (const auto& r : rows) {
    auto color = kNeutralColor;
    if (h_gt) {
      const auto p = h_gt->apply(Vec2(r.xa, r.ya));
      const bool ok = p && (*p - Vec2(r.xb, r.yb)).norm() <= threshold;
      color = ok ? kCorrectColor : kWrongColor;
    }
    line(out, pixel_index(r.xa), pixel_index(r.ya), pixel_index(r.xb) + a.width, pixel_index(r.yb), color);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  write_png_rgb(path, img.height, img.width, img.rgb);
}

}  // namespace silk
