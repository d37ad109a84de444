#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "silk/error.hpp"
#include "silk/matching.hpp"
#include "support/synthetic.hpp"

using namespace silk;
namespace fs = std::filesystem;

namespace {

RowMatrix<float> random_desc(int m, int d, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  RowMatrix<float> r(m, d);
  for (auto& v : r.reshaped()) v = n(rng);
  return r;
}

std::set<std::pair<int, int>> pair_set(const MatchSet& m) {
  std::set<std::pair<int, int>> s;
  for (const auto& p : m.pairs) s.emplace(p.a, p.b);
  return s;
}

std::set<std::pair<int, int>> mnn_oracle(const RowMatrix<double>& s) {
  std::set<std::pair<int, int>> out;
  for (int i = 0; i < s.rows(); ++i) {
    int j = 0;
    for (int c = 1; c < s.cols(); ++c)
      if (s(i, c) > s(i, j)) j = c;
    int back = 0;
    for (int r = 1; r < s.rows(); ++r)
      if (s(r, j) > s(back, j)) back = r;
    if (back == i) out.emplace(i, j);
  }
  return out;
}

DenseOutput<float> output_with_logits(int h, int w, const std::vector<float>& logits, double offset = 0.0) {
  DenseOutput<float> out;
  out.logits = Tensor<float>(Shape{1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)}, logits);
  out.descriptors = Tensor<float>(Shape{2, static_cast<std::size_t>(h), static_cast<std::size_t>(w)}, 1.0f);
  for (int i = 0; i < h * w; ++i) out.descriptors[i] = static_cast<float>(i);
  out.mapping = {offset, 1.0};
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "silk_matching_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("top-k returns every cell when k exceeds the grid") {
  const auto out = output_with_logits(3, 4, std::vector<float>(12, 0.0f));
  const KeypointSet all = select_topk(out, 100);
  CHECK(all.size() == 12);
  CHECK(all.dim() == 2);
  // Equal scores keep ascending cell order.
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(all.keypoints[i].x == static_cast<float>(i % 4) + 0.5f);
    CHECK(all.keypoints[i].y == static_cast<float>(i / 4) + 0.5f);
    CHECK(all.keypoints[i].score == 0.5f);
  }
}

TEST_CASE("top-k picks a single spike and maps it to the image") {
  std::vector<float> logits(30, 0.0f);
  logits[17] = 10.0f;
  const auto out = output_with_logits(5, 6, logits, 3.0);
  const KeypointSet one = select_topk(out, 1);
  REQUIRE(one.size() == 1);
  CHECK(one.keypoints[0].x == 5.0f + 0.5f + 3.0f);
  CHECK(one.keypoints[0].y == 2.0f + 0.5f + 3.0f);
  CHECK(one.keypoints[0].score == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))));
  CHECK(one.descriptors(0, 0) == 17.0f);
}

TEST_CASE("top-k agrees with a full sort, nests and ignores scaling") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-5, 5);
  std::vector<float> logits(400);
  for (auto& v : logits) v = u(rng);
  std::vector<std::size_t> order(400);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return logits[a] > logits[b]; });
  const auto top = topk_cells(logits, 50);
  CHECK(std::vector<std::size_t>(order.begin(), order.begin() + 50) == top);

  for (std::size_t k = 1; k < 60; ++k) {
    const auto a = topk_cells(logits, k), b = topk_cells(logits, k + 1);
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
  std::vector<float> scaled = logits;
  for (auto& v : scaled) v *= 3.5f;
  CHECK(topk_cells(scaled, 50) == top);
}

TEST_CASE("mutual nearest neighbours") {
  std::mt19937_64 rng(2);
  const RowMatrix<float> a = random_desc(20, 8, rng);
  const MatchSet self = match_mnn(similarity_of(a, a));
  REQUIRE(self.size() == 20);
  for (int i = 0; i < 20; ++i) CHECK(self.pairs[i].a == self.pairs[i].b);

  const RowMatrix<float> single = random_desc(1, 8, rng);
  CHECK(match_mnn(similarity_of(a, single)).size() <= 1);
  CHECK(match_mnn(similarity_of(a, single)).size() == 1);

  for (int t = 0; t < 10; ++t) {
    const RowMatrix<float> x = random_desc(40, 6, rng), y = random_desc(40, 6, rng);
    const auto s = similarity_of(x, y);
    const MatchSet m = match_mnn(s, kDefaultTemperature, 7);
    CHECK(pair_set(m) == mnn_oracle(s.dense()));
    std::set<int> as, bs;
    for (const auto& p : m.pairs) {
      CHECK(as.insert(p.a).second);
      CHECK(bs.insert(p.b).second);
      CHECK(std::abs(p.similarity - s.dense()(p.a, p.b)) <= 1e-14);
    }
    std::set<std::pair<int, int>> swapped;
    for (const auto& p : match_mnn(similarity_of(y, x)).pairs) swapped.emplace(p.b, p.a);
    CHECK(swapped == pair_set(m));
  }
}

TEST_CASE("match probabilities are the double-softmax product") {
  std::mt19937_64 rng(3);
  const auto s = similarity_of(random_desc(15, 4, rng), random_desc(12, 4, rng));
  const RowMatrix<double> d = s.dense();
  const double tau = 0.1;
  for (const auto& p : match_mnn(s, tau, 4).pairs) {
    double row = 0, col = 0;
    for (int j = 0; j < d.cols(); ++j) row += std::exp(d(p.a, j) / tau);
    for (int i = 0; i < d.rows(); ++i) col += std::exp(d(i, p.b) / tau);
    const double e = std::exp(d(p.a, p.b) / tau);
    CHECK(std::abs(p.probability - (e / row) * (e / col)) <= 1e-12);
  }
}

TEST_CASE("ratio filter") {
  std::mt19937_64 rng(4);
  const auto s = similarity_of(random_desc(30, 5, rng), random_desc(35, 5, rng));
  const RowMatrix<double> d = s.dense();
  const MatchSet all = match_mnn(s);
  CHECK(pair_set(filter_ratio(all, s, 1.0)) == pair_set(all));

  std::set<std::pair<int, int>> expect;
  for (const auto& p : all.pairs) {
    double second = 3.0;
    for (int j = 0; j < d.cols(); ++j)
      if (j != p.b) second = std::min(second, 1.0 - d(p.a, j));
    if ((1.0 - d(p.a, p.b)) / second <= 0.8) expect.emplace(p.a, p.b);
  }
  const MatchSet kept = filter_ratio(all, s, 0.8);
  CHECK(pair_set(kept) == expect);
  CHECK(kept.filter == MatchFilter{FilterKind::kRatio, 0.8});

  std::set<std::pair<int, int>> prev = pair_set(all);
  for (double t : {0.95, 0.9, 0.8, 0.6, 0.4, 0.2}) {
    const auto cur = pair_set(filter_ratio(all, s, t));
    CHECK(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
    prev = cur;
  }

  const auto one_col = similarity_of(random_desc(5, 5, rng), random_desc(1, 5, rng));
  const MatchSet m1 = match_mnn(one_col);
  CHECK(filter_ratio(m1, one_col, 0.01).size() == m1.size());
}

TEST_CASE("double-softmax filter") {
  std::mt19937_64 rng(5);
  const auto s = similarity_of(random_desc(25, 4, rng), random_desc(25, 4, rng));
  const MatchSet all = match_mnn(s);
  CHECK(pair_set(filter_dsoftmax(all, s, kDefaultTemperature, 0.0)) == pair_set(all));
  std::set<std::pair<int, int>> expect;
  for (const auto& p : all.pairs)
    if (p.probability >= 0.5) expect.emplace(p.a, p.b);
  CHECK(pair_set(filter_dsoftmax(all, s, kDefaultTemperature, 0.5)) == expect);

  std::set<std::pair<int, int>> prev = pair_set(all);
  for (double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const auto cur = pair_set(filter_dsoftmax(all, s, kDefaultTemperature, t));
    CHECK(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
    prev = cur;
  }

  const auto tiny = similarity_of(random_desc(1, 4, rng), random_desc(1, 4, rng));
  CHECK(filter_dsoftmax(match_mnn(tiny), tiny, kDefaultTemperature, 1.0).size() == 1);
}

TEST_CASE("match_descriptors applies the filter after matching") {
  std::mt19937_64 rng(6);
  const RowMatrix<float> a = random_desc(20, 4, rng), b = random_desc(22, 4, rng);
  const auto s = similarity_of(a, b);
  CHECK(pair_set(match_descriptors(a, b, MatchFilter::parse("ratio:0.7"))) ==
        pair_set(filter_ratio(match_mnn(s), s, 0.7)));
  CHECK(match_descriptors(RowMatrix<float>(0, 4), b, {}).size() == 0);
  CHECK_THROWS_AS(match_descriptors(a, RowMatrix<float>::Ones(3, 5), {}), ShapeError);
}

TEST_CASE("filter specification parsing") {
  CHECK(MatchFilter::parse("none") == MatchFilter{});
  CHECK(MatchFilter::parse("ratio:0.9") == MatchFilter{FilterKind::kRatio, 0.9});
  CHECK(MatchFilter::parse("dsoftmax:0.25") == MatchFilter{FilterKind::kDoubleSoftmax, 0.25});
  CHECK(MatchFilter::parse(MatchFilter{FilterKind::kRatio, 0.75}.to_string()) == MatchFilter{FilterKind::kRatio, 0.75});
  for (const char* bad : {"ratio", "ratio:0", "ratio:1.5", "dsoftmax:-0.1", "dsoftmax:x", "lowe:0.8", ""})
    CHECK_THROWS_AS(MatchFilter::parse(bad), ConfigError);
}

TEST_CASE("descriptor dump round trip") {
  std::mt19937_64 rng(7);
  KeypointSet set;
  set.descriptors = random_desc(100, 16, rng);
  std::uniform_real_distribution<float> u(0, 100);
  for (int i = 0; i < 100; ++i) set.keypoints.push_back({u(rng), u(rng), u(rng) / 100.0f});
  const fs::path p = scratch("kp.bin");
  dump_descriptors(p, set);
  const KeypointSet back = load_descriptors(p);
  CHECK(back.keypoints == set.keypoints);
  CHECK(back.descriptors == set.descriptors);
  CHECK(fs::file_size(p) == 8 + 12 + 100 * 3 * 4 + 100 * 16 * 4);

  KeypointSet empty;
  empty.descriptors = RowMatrix<float>(0, 16);
  dump_descriptors(scratch("empty.bin"), empty);
  const KeypointSet e = load_descriptors(scratch("empty.bin"));
  CHECK(e.size() == 0);
  CHECK(e.dim() == 16);
}

TEST_CASE("corrupt descriptor dumps") {
  KeypointSet set;
  set.keypoints = {{1, 2, 0.5f}};
  set.descriptors = RowMatrix<float>::Ones(1, 4);
  const fs::path p = scratch("c.bin");
  dump_descriptors(p, set);
  std::string bytes;
  {
    std::ifstream in(p, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto kind_of = [&](const std::string& content) {
    std::ofstream(p, std::ios::binary | std::ios::trunc) << content;
    try {
      (void)load_descriptors(p);
    } catch (const FileError& e) {
      return e.kind();
    }
    return FileErrorKind::kIo;
  };
  std::string magic = bytes;
  magic[3] = 'x';
  CHECK(kind_of(magic) == FileErrorKind::kBadMagic);
  std::string version = bytes;
  version[8] = 9;
  CHECK(kind_of(version) == FileErrorKind::kVersionMismatch);
  CHECK(kind_of(bytes.substr(0, bytes.size() - 1)) == FileErrorKind::kTruncated);
}
