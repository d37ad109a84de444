#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "silk/model.hpp"
#include "silk/similarity.hpp"

namespace silk {

// Image-space position (pixel-centre convention) and sigmoid score.
struct Keypoint {
  float x = 0.0f;
  float y = 0.0f;
  float score = 0.0f;
  bool operator==(const Keypoint&) const = default;
};

// Keypoints with one descriptor row each (unnormalised, as produced by the
// model).
struct KeypointSet {
  std::vector<Keypoint> keypoints;
  RowMatrix<float> descriptors;

  std::size_t size() const noexcept { return keypoints.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(descriptors.cols()); }
};

// The k cells with the highest keypoint probability, best first; ties go to
// the lower linear cell index. No non-maximum suppression.
KeypointSet select_topk(const DenseOutput<float>& out, std::size_t k);
// Linear cell indices chosen by select_topk, in the same order.
std::vector<std::size_t> topk_cells(std::span<const float> logits, std::size_t k);

struct Match {
  std::int32_t a = 0;
  std::int32_t b = 0;
  double similarity = 0.0;
  double probability = 0.0;  // P_fwd * P_bwd at the pair
  bool operator==(const Match&) const = default;
};

enum class FilterKind { kNone, kRatio, kDoubleSoftmax };

struct MatchFilter {
  FilterKind kind = FilterKind::kNone;
  double threshold = 1.0;

  // "none", "ratio:T" or "dsoftmax:T". Throws ConfigError.
  static MatchFilter parse(std::string_view text);
  std::string to_string() const;
  void validate() const;
  bool operator==(const MatchFilter&) const = default;
};

struct MatchSet {
  std::vector<Match> pairs;
  MatchFilter filter;

  std::size_t size() const noexcept { return pairs.size(); }
};

inline constexpr double kDefaultTemperature = 1.0 / 20.0;

// Cosine similarities in double precision.
SimilarityMatrix<double> similarity_of(const RowMatrix<float>& a, const RowMatrix<float>& b);

// Mutual nearest neighbours under s, ordered by a.
MatchSet match_mnn(const SimilarityMatrix<double>& s, double temperature = kDefaultTemperature,
                   std::int64_t block_size = 4096);

// Keeps (i,j) when (1 - s_ij) / (1 - s_ik) <= t, where k is the best column
// of row i other than j. A row with a single column gives ratio 0.
MatchSet filter_ratio(const MatchSet& matches, const SimilarityMatrix<double>& s, double t);

// Keeps (i,j) when P_fwd(i,j) * P_bwd(i,j) >= t.
MatchSet filter_dsoftmax(const MatchSet& matches, const SimilarityMatrix<double>& s, double temperature, double t,
                         std::int64_t block_size = 4096);

// MNN followed by the optional filter.
MatchSet match_descriptors(const RowMatrix<float>& a, const RowMatrix<float>& b, const MatchFilter& filter,
                           double temperature = kDefaultTemperature);

// "SILKDSC1" | u32 version=1 | u32 count | u32 dim | count x (x, y, score)
// float32 | count x dim float32, little-endian.
inline constexpr char kDescriptorMagic[8] = {'S', 'I', 'L', 'K', 'D', 'S', 'C', '1'};
inline constexpr std::uint32_t kDescriptorVersion = 1;

void dump_descriptors(const std::filesystem::path& path, const KeypointSet& set);
// Throws FileError (kBadMagic, kVersionMismatch, kTruncated, kIo).
KeypointSet load_descriptors(const std::filesystem::path& path);

}  // namespace silk
