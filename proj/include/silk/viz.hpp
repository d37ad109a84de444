#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "silk/geometry.hpp"
#include "silk/matching.hpp"

namespace silk {

// One line of a match file: `ia ib xa ya xb yb sim prob`.
struct MatchRow {
  std::int32_t ia = 0;
  std::int32_t ib = 0;
  double xa = 0.0;
  double ya = 0.0;
  double xb = 0.0;
  double yb = 0.0;
  double similarity = 0.0;
  double probability = 0.0;
};

std::vector<MatchRow> match_rows(const MatchSet& matches, const KeypointSet& a, const KeypointSet& b);
void write_match_tsv(std::ostream& os, std::span<const MatchRow> rows);
void write_match_tsv(const std::filesystem::path& path, std::span<const MatchRow> rows);
// Throws FormatError when a line does not have exactly eight columns.
std::vector<MatchRow> read_match_tsv(const std::filesystem::path& path);

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  std::array<std::uint8_t, 3> pixel(int y, int x) const;
};

inline constexpr std::array<std::uint8_t, 3> kCorrectColor{0, 255, 0};
inline constexpr std::array<std::uint8_t, 3> kWrongColor{255, 0, 0};
inline constexpr std::array<std::uint8_t, 3> kNeutralColor{255, 200, 0};

// Image A on the left, B on the right, one line per match. With a ground
// truth, lines within `threshold` reprojection error are green, others red.
RgbImage render_matches(const ImageGray& a, const ImageGray& b, std::span<const MatchRow> rows,
                        const std::optional<Homography>& h_gt, double threshold = 3.0);

void write_png(const std::filesystem::path& path, const RgbImage& img);

}  // namespace silk
