#include "silk/matching.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <cstring>
#include <numeric>

#include "binary_io.hpp"
#include "silk/autodiff.hpp"
#include "silk/error.hpp"

namespace silk {

std::vector<std::size_t> topk_cells(std::span<const float> logits, std::size_t k) {
  std::vector<std::size_t> idx(logits.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  const auto better = [&](std::size_t a, std::size_t b) {
    return logits[a] != logits[b] ? logits[a] > logits[b] : a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  idx.resize(k);
  return idx;
}

KeypointSet select_topk(const DenseOutput<float>& out, std::size_t k) {
  if (k == 0) throw ConfigError("top-k must be >= 1");
  const GridShape grid = out.grid();
  const auto cells = topk_cells(out.logits.data(), k);
  const std::size_t dim = out.descriptors.dim(0);
  const std::size_t m = static_cast<std::size_t>(grid.cells());
  KeypointSet set;
  set.keypoints.reserve(cells.size());
  set.descriptors.resize(static_cast<Eigen::Index>(cells.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < cells.size(); ++r) {
    const std::size_t c = cells[r];
    const Vec2 g{static_cast<double>(c % grid.width) + 0.5, static_cast<double>(c / grid.width) + 0.5};
    const Vec2 p = grid_to_image(out.mapping, g);
    set.keypoints.push_back(
        {static_cast<float>(p.x()), static_cast<float>(p.y()), sigmoid_value(out.logits[c])});
    for (std::size_t d = 0; d < dim; ++d) set.descriptors(r, d) = out.descriptors[d * m + c];
  }
  return set;
}

MatchFilter MatchFilter::parse(std::string_view text) {
  if (text == "none") return {};
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw ConfigError("invalid filter '" + std::string(text) + "'");
  const std::string_view name = text.substr(0, colon);
  const std::string value(text.substr(colon + 1));
  MatchFilter f;
  if (name == "ratio") {
    f.kind = FilterKind::kRatio;
  } else if (name == "dsoftmax") {
    f.kind = FilterKind::kDoubleSoftmax;
  } else {
    throw ConfigError("unknown filter '" + std::string(name) + "'");
  }
  std::size_t used = 0;
  try {
    f.threshold = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw ConfigError("invalid filter threshold '" + value + "'");
  f.validate();
  return f;
}

std::string MatchFilter::to_string() const {
  switch (kind) {
    case FilterKind::kNone:
      return "none";
    case FilterKind::kRatio:
      return "ratio:" + std::to_string(threshold);
    case FilterKind::kDoubleSoftmax:
      return "dsoftmax:" + std::to_string(threshold);
  }
  return "none";
}

void MatchFilter::validate() const {
  if (kind == FilterKind::kRatio && !(threshold > 0.0 && threshold <= 1.0)) {
    throw ConfigError("ratio threshold must be in (0, 1]");
  }
  if (kind == FilterKind::kDoubleSoftmax && !(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("double-softmax threshold must be in [0, 1]");
  }
}

SimilarityMatrix<double> similarity_of(const RowMatrix<float>& a, const RowMatrix<float>& b) {
  return SimilarityMatrix<double>::from_descriptors(a.cast<double>(), b.cast<double>());
}

MatchSet match_mnn(const SimilarityMatrix<double>& s, double temperature, std::int64_t block_size) {
  MatchSet out;
  if (s.rows() == 0 || s.cols() == 0) return out;
  const auto scan = scan_similarity(s, ScanOptions{block_size, true, temperature});
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const auto j = scan.row_argmax[i];
    if (scan.col_argmax[j] != i) continue;
    const double sim = scan.row_max[i];
    const double prob = std::exp(2.0 * sim / temperature - scan.row_lse[i] - scan.col_lse[j]);
    out.pairs.push_back({static_cast<std::int32_t>(i), static_cast<std::int32_t>(j), sim, prob});
  }
  return out;
}

MatchSet filter_ratio(const MatchSet& matches, const SimilarityMatrix<double>& s, double t) {
  MatchFilter f{FilterKind::kRatio, t};
  f.validate();
  MatchSet out;
  out.filter = f;
  for (const auto& m : matches.pairs) {
    double ratio = 0.0;
    if (s.cols() > 1) {
      const RowMatrix<double> row = s.tile(m.a, 0, 1, s.cols());
      double second = -std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < s.cols(); ++k) {
        if (k != m.b) second = std::max(second, row(0, k));
      }
      const double d1 = 1.0 - row(0, m.b);
      const double d2 = 1.0 - second;
      ratio = d2 > 0.0 ? d1 / d2 : 1.0;
    }
    if (ratio <= t) out.pairs.push_back(m);
  }
  return out;
}

MatchSet filter_dsoftmax(const MatchSet& matches, const SimilarityMatrix<double>& s, double temperature, double t,
                         std::int64_t block_size) {
  MatchFilter f{FilterKind::kDoubleSoftmax, t};
  f.validate();
  MatchSet out;
  out.filter = f;
  if (matches.pairs.empty()) return out;
  const auto scan = scan_similarity(s, ScanOptions{block_size, true, temperature});
  for (const auto& m : matches.pairs) {
    const double p = std::exp(2.0 * s.at(m.a, m.b) / temperature - scan.row_lse[m.a] - scan.col_lse[m.b]);
    if (p >= t) out.pairs.push_back(m);
  }
  return out;
}

MatchSet match_descriptors(const RowMatrix<float>& a, const RowMatrix<float>& b, const MatchFilter& filter,
                           double temperature) {
  if (a.rows() == 0 || b.rows() == 0) return MatchSet{{}, filter};
  if (a.cols() != b.cols()) {
    throw ShapeError("descriptor dimensions differ: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
  }
  const auto s = similarity_of(a, b);
  MatchSet m = match_mnn(s, temperature);
  switch (filter.kind) {
    case FilterKind::kNone:
      return m;
    case FilterKind::kRatio:
      return filter_ratio(m, s, filter.threshold);
    case FilterKind::kDoubleSoftmax:
      return filter_dsoftmax(m, s, temperature, filter.threshold);
  }
  return m;
}

void dump_descriptors(const std::filesystem::path& path, const KeypointSet& set) {
  if (static_cast<std::size_t>(set.descriptors.rows()) != set.keypoints.size()) {
    throw ShapeError("descriptor rows do not match keypoint count");
  }
  detail::Writer w;
  w.bytes(kDescriptorMagic, sizeof(kDescriptorMagic));
  w.uint<std::uint32_t>(kDescriptorVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(set.size()));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(set.dim()));
  for (const auto& k : set.keypoints) {
    w.f32(k.x);
    w.f32(k.y);
    w.f32(k.score);
  }
  for (Eigen::Index i = 0; i < set.descriptors.rows(); ++i) {
    for (Eigen::Index d = 0; d < set.descriptors.cols(); ++d) w.f32(set.descriptors(i, d));
  }
  detail::write_file_bytes(path, w.data());
}

KeypointSet load_descriptors(const std::filesystem::path& path) {
  detail::Reader r(detail::read_file_bytes(path), path.string());
  if (r.remaining() < sizeof(kDescriptorMagic) ||
      std::memcmp(r.take(sizeof(kDescriptorMagic)), kDescriptorMagic, sizeof(kDescriptorMagic)) != 0) {
    throw FileError(FileErrorKind::kBadMagic, "bad magic in descriptor file " + path.string());
  }
  const auto version = r.uint<std::uint32_t>();
  if (version != kDescriptorVersion) {
    throw FileError(FileErrorKind::kVersionMismatch,
                    "descriptor file version " + std::to_string(version) + " unsupported: " + path.string());
  }
  const auto count = r.uint<std::uint32_t>();
  const auto dim = r.uint<std::uint32_t>();
  r.need((static_cast<std::size_t>(count) * 3 + static_cast<std::size_t>(count) * dim) * 4);
  KeypointSet set;
  set.keypoints.resize(count);
  for (auto& k : set.keypoints) {
    k.x = r.f32();
    k.y = r.f32();
    k.score = r.f32();
  }
  set.descriptors.resize(count, dim);
  for (Eigen::Index i = 0; i < set.descriptors.rows(); ++i) {
    for (Eigen::Index d = 0; d < set.descriptors.cols(); ++d) set.descriptors(i, d) = r.f32();
  }
  return set;
}

}  // namespace silk
