#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "silk/error.hpp"
#include "silk/loss.hpp"
#include "support/gradcheck.hpp"
#include "support/synthetic.hpp"

using namespace silk;
using silk::testing::random_bijection;
using silk::testing::random_tensor;

namespace {

RowMatrix<double> random_rows(int m, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  RowMatrix<double> r(m, d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) r(i, j) = n(rng);
  return r;
}

// [D,1,M] map whose column j is row j of `rows`.
Tensor<double> as_map(const RowMatrix<double>& rows) {
  Tensor<double> t(Shape{static_cast<std::size_t>(rows.cols()), 1, static_cast<std::size_t>(rows.rows())});
  for (int j = 0; j < rows.rows(); ++j)
    for (int c = 0; c < rows.cols(); ++c) t.at(c, 0, j) = rows(j, c);
  return t;
}

double cosine(const RowMatrix<double>& a, int i, const RowMatrix<double>& b, int j) {
  double dot = 0, na = 0, nb = 0;
  for (int k = 0; k < a.cols(); ++k) {
    dot += a(i, k) * b(j, k);
    na += a(i, k) * a(i, k);
    nb += b(j, k) * b(j, k);
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Per-correspondence loop over the full matrix: -(1/N) sum log(Pf * Pb).
double loss_oracle(const RowMatrix<double>& s, const CorrespondenceSet& corr, double tau) {
  double total = 0.0;
  for (const auto& p : corr.pairs) {
    double row = 0.0, col = 0.0;
    for (int j = 0; j < s.cols(); ++j) row += std::exp(s(p.a, j) / tau);
    for (int i = 0; i < s.rows(); ++i) col += std::exp(s(i, p.b) / tau);
    const double e = std::exp(s(p.a, p.b) / tau);
    total -= std::log(e / row) + std::log(e / col);
  }
  return total / static_cast<double>(corr.size());
}

std::vector<std::uint8_t> labels_oracle(const RowMatrix<double>& s, const CorrespondenceSet& corr) {
  std::vector<std::uint8_t> y;
  for (const auto& p : corr.pairs) {
    const double v = s(p.a, p.b);
    bool ok = true;
    for (int j = 0; j < s.cols(); ++j) ok = ok && v >= s(p.a, j);
    for (int i = 0; i < s.rows(); ++i) ok = ok && v >= s(i, p.b);
    y.push_back(ok ? 1 : 0);
  }
  return y;
}

double bce_oracle(double q, int y) {
  const double sig = 1.0 / (1.0 + std::exp(-q));
  return -(y * std::log(sig) + (1 - y) * std::log(1.0 - sig));
}

struct DescGrad {
  double value;
  Tensor<double> grad_a;
  Tensor<double> grad_b;
};

DescGrad descriptor_gradients(const Tensor<double>& a, const Tensor<double>& b, const CorrespondenceSet& corr,
                              const LossConfig& cfg, LossMode mode) {
  Parameter<double> pa("a", a), pb("b", b);
  Tape<double> tape;
  const Var loss = descriptor_loss(tape, tape.parameter(pa), tape.parameter(pb), corr, cfg, mode);
  tape.backward(loss);
  return {tape.value(loss).item(), pa.grad, pb.grad};
}

}  // namespace

TEST_CASE("cosine similarity trivial cases") {
  RowMatrix<double> a(2, 2), b(2, 2);
  a << 1, 0, 0, 3;
  b << 2, 0, 0, -1;
  const auto s = SimilarityMatrix<double>::from_descriptors(a, b);
  CHECK(s.at(0, 0) == 1.0);
  CHECK(s.at(0, 1) == 0.0);
  CHECK(s.at(1, 1) == -1.0);
}

TEST_CASE("cosine similarity matches the per-pair loop") {
  std::mt19937_64 rng(1);
  const RowMatrix<double> a = random_rows(50, 8, rng), b = random_rows(60, 8, rng);
  const auto s = SimilarityMatrix<double>::from_descriptors(a, b);
  const RowMatrix<double> d = s.dense();
  double worst = 0.0;
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 60; ++j) {
      worst = std::max(worst, std::abs(d(i, j) - cosine(a, i, b, j)));
      CHECK(std::abs(s.at(i, j) - d(i, j)) <= 1e-15);
    }
  CHECK(worst <= 1e-12);
  for (Eigen::Index blk : {1, 7, 64}) {
    s.for_each_tile(blk, [&](Eigen::Index r0, Eigen::Index c0, const RowMatrix<double>& t) {
      CHECK((t - d.block(r0, c0, t.rows(), t.cols())).cwiseAbs().maxCoeff() <= 1e-12);
    });
  }
}

TEST_CASE("32-bit similarities stay bounded and views agree") {
  std::mt19937_64 rng(2);
  const RowMatrix<float> a = random_rows(40, 16, rng).cast<float>();
  RowMatrix<float> b = a;
  b.row(3) *= 7.0f;
  const auto s = SimilarityMatrix<float>::from_descriptors(a, b);
  const RowMatrix<float> d = s.dense();
  CHECK(d.maxCoeff() <= 1.0f + 1e-6f);
  CHECK(d.minCoeff() >= -1.0f - 1e-6f);
  s.for_each_tile(9, [&](Eigen::Index r0, Eigen::Index c0, const RowMatrix<float>& t) {
    CHECK((t - d.block(r0, c0, t.rows(), t.cols())).cwiseAbs().maxCoeff() <= 1e-6f);
  });
}

TEST_CASE("zero-norm descriptor is reported by index") {
  RowMatrix<double> a = RowMatrix<double>::Ones(4, 3), b = RowMatrix<double>::Ones(5, 3);
  b.row(2).setZero();
  try {
    (void)SimilarityMatrix<double>::from_descriptors(a, b);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("b[2]") != std::string::npos);
  }
  a.row(1).setZero();
  CHECK_THROWS_WITH_AS(SimilarityMatrix<double>::from_descriptors(a, b), doctest::Contains("a[1]"), Error);
}

TEST_CASE("descriptor scale does not change similarities") {
  std::mt19937_64 rng(3);
  const RowMatrix<double> a = random_rows(10, 5, rng), b = random_rows(12, 5, rng);
  RowMatrix<double> a2 = a;
  a2.row(4) *= 123.0;
  a2.row(7) *= 0.001;
  const RowMatrix<double> d1 = SimilarityMatrix<double>::from_descriptors(a, b).dense();
  const RowMatrix<double> d2 = SimilarityMatrix<double>::from_descriptors(a2, b).dense();
  CHECK((d1 - d2).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("match probabilities") {
  {
    RowMatrix<double> one(1, 1);
    one << 0.3;
    const auto p = match_probabilities(SimilarityMatrix<double>::from_dense(one), 0.05);
    CHECK(p.forward(0, 0) == 1.0);
    CHECK(p.backward(0, 0) == 1.0);
  }
  {
    const auto p = match_probabilities(SimilarityMatrix<double>::from_dense(RowMatrix<double>::Constant(4, 6, 0.2)), 0.05);
    CHECK((p.forward.array() - 1.0 / 6.0).abs().maxCoeff() <= 1e-15);
    CHECK((p.backward.array() - 1.0 / 4.0).abs().maxCoeff() <= 1e-15);
  }
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  RowMatrix<double> s(7, 9);
  for (auto& v : s.reshaped()) v = u(rng);
  for (double tau : {0.05, 0.5, 3.0}) {
    const auto p = match_probabilities(SimilarityMatrix<double>::from_dense(s), tau);
    for (int i = 0; i < 7; ++i) {
      double row = 0;
      for (int j = 0; j < 9; ++j) row += std::exp(s(i, j) / tau);
      for (int j = 0; j < 9; ++j) CHECK(std::abs(p.forward(i, j) - std::exp(s(i, j) / tau) / row) <= 1e-12);
      CHECK(std::abs(p.forward.row(i).sum() - 1.0) <= 1e-6);
    }
    for (int j = 0; j < 9; ++j) {
      double col = 0;
      for (int i = 0; i < 7; ++i) col += std::exp(s(i, j) / tau);
      for (int i = 0; i < 7; ++i) CHECK(std::abs(p.backward(i, j) - std::exp(s(i, j) / tau) / col) <= 1e-12);
      CHECK(std::abs(p.backward.col(j).sum() - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("float probabilities normalise on large matrices") {
  std::mt19937_64 rng(5);
  const RowMatrix<float> a = random_rows(200, 8, rng).cast<float>(), b = random_rows(150, 8, rng).cast<float>();
  const auto p = match_probabilities(SimilarityMatrix<float>::from_descriptors(a, b), 1.0 / 20.0);
  CHECK((p.forward.rowwise().sum().array() - 1.0f).abs().maxCoeff() <= 1e-6f);
  CHECK((p.backward.colwise().sum().array() - 1.0f).abs().maxCoeff() <= 1e-6f);
}

TEST_CASE("descriptor loss trivial cases") {
  const LossConfig cfg;
  CorrespondenceSet one;
  one.grid_a = one.grid_b = {1, 1};
  one.pairs = {{0, 0}};
  RowMatrix<double> s1(1, 1);
  s1 << 0.4;
  for (LossMode mode : {LossMode::kBlock, LossMode::kDense})
    CHECK(descriptor_loss_value(SimilarityMatrix<double>::from_dense(s1), one, cfg, mode) == 0.0);

  std::mt19937_64 rng(6);
  const int m = 8;
  const CorrespondenceSet corr = random_bijection(m, m, 5, rng);
  const auto flat = SimilarityMatrix<double>::from_dense(RowMatrix<double>::Constant(m, m, 0.3));
  for (LossMode mode : {LossMode::kBlock, LossMode::kDense})
    CHECK(std::abs(descriptor_loss_value(flat, corr, cfg, mode) - 2.0 * std::log(m)) <= 1e-12);

  CorrespondenceSet empty;
  CHECK_THROWS_AS(descriptor_loss_value(flat, empty, cfg), Error);
  CorrespondenceSet out_of_range = corr;
  out_of_range.pairs.push_back({m, 0});
  CHECK_THROWS_AS(descriptor_loss_value(flat, out_of_range, cfg), Error);
}

TEST_CASE("descriptor loss matches the loop oracle and is non-negative") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 10; ++t) {
    const RowMatrix<double> a = random_rows(15, 6, rng), b = random_rows(13, 6, rng);
    const auto s = SimilarityMatrix<double>::from_descriptors(a, b);
    const CorrespondenceSet corr = random_bijection(15, 13, 9, rng);
    for (double tau : {1.0 / 20.0, 0.7}) {
      LossConfig cfg;
      cfg.temperature = tau;
      const double expect = loss_oracle(s.dense(), corr, tau);
      for (std::int64_t blk : {1, 3, 4096}) {
        cfg.block_size = blk;
        const double got = descriptor_loss_value(s, corr, cfg, LossMode::kBlock);
        CHECK(std::abs(got - expect) <= 1e-10 * std::max(1.0, expect));
        CHECK(got >= 0.0);
      }
      CHECK(std::abs(descriptor_loss_value(s, corr, cfg, LossMode::kDense) - expect) <= 1e-10 * std::max(1.0, expect));
    }
  }
}

TEST_CASE("block mode equals dense mode in value and gradient") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 5; ++t) {
    const Tensor<double> a = as_map(random_rows(11, 5, rng)), b = as_map(random_rows(10, 5, rng));
    const CorrespondenceSet corr = random_bijection(11, 10, 7, rng);
    LossConfig cfg;
    cfg.block_size = 3;
    const DescGrad blk = descriptor_gradients(a, b, corr, cfg, LossMode::kBlock);
    const DescGrad dense = descriptor_gradients(a, b, corr, cfg, LossMode::kDense);
    CHECK(std::abs(blk.value - dense.value) <= 1e-10);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(blk.grad_a[i] - dense.grad_a[i]) <= 1e-8);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(std::abs(blk.grad_b[i] - dense.grad_b[i]) <= 1e-8);
  }
}

TEST_CASE("descriptor loss gradient matches finite differences") {
  std::mt19937_64 rng(9);
  const Tensor<double> a = as_map(random_rows(9, 4, rng)), b = as_map(random_rows(8, 4, rng));
  const CorrespondenceSet corr = random_bijection(9, 8, 6, rng);
  LossConfig cfg;
  cfg.temperature = 0.5;
  cfg.block_size = 4;
  const DescGrad g = descriptor_gradients(a, b, corr, cfg, LossMode::kBlock);
  const auto value_at = [&](const Tensor<double>& x, const Tensor<double>& y) {
    return descriptor_loss_value(
        SimilarityMatrix<double>::from_descriptors(descriptor_rows(x), descriptor_rows(y)), corr, cfg);
  };
  for (int k = 0; k < 5; ++k) {
    const Tensor<double> dir = random_tensor<double>(a.shape(), rng);
    const double fd = silk::testing::directional_fd([&](const Tensor<double>& x) { return value_at(x, b); }, a, dir);
    CHECK(silk::testing::relative_error(silk::testing::dot(g.grad_a, dir), fd) <= 1e-6);
    const Tensor<double> dir_b = random_tensor<double>(b.shape(), rng);
    const double fd_b = silk::testing::directional_fd([&](const Tensor<double>& y) { return value_at(a, y); }, b, dir_b);
    CHECK(silk::testing::relative_error(silk::testing::dot(g.grad_b, dir_b), fd_b) <= 1e-6);
  }
}

TEST_CASE("descriptor loss reports labels from the same pass") {
  std::mt19937_64 rng(10);
  const RowMatrix<double> ra = random_rows(12, 3, rng), rb = random_rows(12, 3, rng);
  const CorrespondenceSet corr = random_bijection(12, 12, 12, rng);
  Parameter<double> pa("a", as_map(ra)), pb("b", as_map(rb));
  Tape<double> tape;
  MatchSuccessLabels labels;
  (void)descriptor_loss(tape, tape.parameter(pa), tape.parameter(pb), corr, LossConfig{}, LossMode::kBlock, &labels);
  CHECK(labels.y == labels_oracle(SimilarityMatrix<double>::from_descriptors(ra, rb).dense(), corr));
}

TEST_CASE("matching success labels") {
  CorrespondenceSet diag;
  diag.grid_a = diag.grid_b = {1, 4};
  for (int i = 0; i < 4; ++i) diag.pairs.push_back({i, i});
  const auto id = SimilarityMatrix<double>::from_dense(RowMatrix<double>::Identity(4, 4));
  CHECK(matching_success(id, diag).y == std::vector<std::uint8_t>{1, 1, 1, 1});
  CHECK(matching_success(id, diag).rate() == 1.0);

  RowMatrix<double> s = RowMatrix<double>::Identity(4, 4);
  s(2, 0) = 1.5;
  CHECK(matching_success(SimilarityMatrix<double>::from_dense(s), diag).y == std::vector<std::uint8_t>{0, 1, 0, 1});
  s(2, 0) = 1.0;
  CHECK(matching_success(SimilarityMatrix<double>::from_dense(s), diag).y == std::vector<std::uint8_t>{1, 1, 1, 1});

  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> level(-3, 3);
  for (int t = 0; t < 100; ++t) {
    RowMatrix<double> r(30, 30);
    // Coarse levels make ties common.
    for (auto& v : r.reshaped()) v = level(rng) / 3.0;
    const CorrespondenceSet corr = random_bijection(30, 30, 20, rng);
    const auto sim = SimilarityMatrix<double>::from_dense(r);
    const auto expect = labels_oracle(r, corr);
    for (std::int64_t blk : {1, 7, 4096}) CHECK(matching_success(sim, corr, blk).y == expect);
  }
}

TEST_CASE("matching success labels do not depend on temperature") {
  std::mt19937_64 rng(12);
  const RowMatrix<double> a = random_rows(25, 4, rng), b = random_rows(25, 4, rng);
  const CorrespondenceSet corr = random_bijection(25, 25, 25, rng);
  std::vector<std::vector<std::uint8_t>> seen;
  for (double tau : {0.01, 1.0, 100.0}) {
    Parameter<double> pa("a", as_map(a)), pb("b", as_map(b));
    Tape<double> tape;
    LossConfig cfg;
    cfg.temperature = tau;
    MatchSuccessLabels labels;
    (void)descriptor_loss(tape, tape.parameter(pa), tape.parameter(pb), corr, cfg, LossMode::kBlock, &labels);
    seen.push_back(labels.y);
  }
  CHECK(seen[0] == seen[1]);
  CHECK(seen[1] == seen[2]);
}

TEST_CASE("keypoint loss values") {
  std::mt19937_64 rng(13);
  const CorrespondenceSet corr = random_bijection(10, 12, 8, rng);
  MatchSuccessLabels labels;
  labels.y = {1, 0, 1, 1, 0, 0, 1, 0};
  const std::vector<double> zeros_a(10, 0.0), zeros_b(12, 0.0);
  CHECK(std::abs(keypoint_loss_value<double>(zeros_a, zeros_b, corr, labels) - 2.0 * std::log(2.0)) <= 1e-15);

  std::vector<double> sat_a(10, 0.0), sat_b(12, 0.0);
  for (std::size_t i = 0; i < corr.size(); ++i) {
    sat_a[corr.pairs[i].a] = labels.y[i] ? 50.0 : -50.0;
    sat_b[corr.pairs[i].b] = labels.y[i] ? 50.0 : -50.0;
  }
  CHECK(keypoint_loss_value<double>(sat_a, sat_b, corr, labels) < 1e-10);

  std::uniform_real_distribution<double> u(-8, 8);
  std::vector<double> qa(10), qb(12);
  for (auto& v : qa) v = u(rng);
  for (auto& v : qb) v = u(rng);
  double expect = 0.0;
  for (std::size_t i = 0; i < corr.size(); ++i)
    expect += bce_oracle(qa[corr.pairs[i].a], labels.y[i]) + bce_oracle(qb[corr.pairs[i].b], labels.y[i]);
  expect /= static_cast<double>(corr.size());
  CHECK(std::abs(keypoint_loss_value<double>(qa, qb, corr, labels) - expect) <= 1e-12);

  MatchSuccessLabels short_labels;
  short_labels.y = {1, 0};
  CHECK_THROWS_AS(keypoint_loss_value<double>(qa, qb, corr, short_labels), ShapeError);
}

TEST_CASE("keypoint loss gradient") {
  std::mt19937_64 rng(14);
  const CorrespondenceSet corr = random_bijection(6, 6, 4, rng);
  MatchSuccessLabels labels;
  labels.y = {1, 0, 0, 1};
  Parameter<double> qa("qa", random_tensor<double>(Shape{1, 1, 6}, rng, -3, 3));
  Parameter<double> qb("qb", random_tensor<double>(Shape{1, 1, 6}, rng, -3, 3));
  Tape<double> tape;
  const Var loss = keypoint_loss(tape, tape.parameter(qa), tape.parameter(qb), corr, labels);
  tape.backward(loss);
  std::vector<double> expect_a(6, 0.0);
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const double q = qa.value[corr.pairs[i].a];
    expect_a[corr.pairs[i].a] = (1.0 / (1.0 + std::exp(-q)) - labels.y[i]) / 4.0;
  }
  for (int i = 0; i < 6; ++i) CHECK(std::abs(qa.grad[i] - expect_a[i]) <= 1e-15);
}

TEST_CASE("total loss composition") {
  std::mt19937_64 rng(15);
  const int m = 6;
  Parameter<double> da("da", as_map(random_rows(m, 4, rng))), db("db", as_map(random_rows(m, 4, rng)));
  Parameter<double> qa("qa", random_tensor<double>(Shape{1, 1, m}, rng)), qb("qb", random_tensor<double>(Shape{1, 1, m}, rng));
  const CorrespondenceSet corr = random_bijection(m, m, 5, rng);

  const auto run = [&](double weight, const MatchSuccessLabels* fixed) {
    Tape<double> tape;
    LossConfig cfg;
    cfg.keypoint_weight = weight;
    const DenseVars a{tape.parameter(qa), tape.parameter(da), {}, {1, m}};
    const DenseVars b{tape.parameter(qb), tape.parameter(db), {}, {1, m}};
    const LossTerms<double> terms = total_loss(tape, a, b, corr, cfg, LossMode::kBlock, fixed);
    return std::pair{tape.value(terms.total).item(), terms};
  };
  const auto [zero_total, zero_terms] = run(0.0, nullptr);
  const auto s = SimilarityMatrix<double>::from_descriptors(descriptor_rows(da.value), descriptor_rows(db.value));
  CHECK(zero_total == descriptor_loss_value(s, corr, LossConfig{}));
  const auto [total, terms] = run(1.0, nullptr);
  CHECK(std::abs(total - (terms.descriptor + terms.keypoint)) <= 1e-14);
  CHECK(terms.labels.y == matching_success(s, corr).y);

  MatchSuccessLabels fixed;
  fixed.y.assign(corr.size(), 1);
  const auto [fixed_total, fixed_terms] = run(1.0, &fixed);
  CHECK(fixed_terms.labels.y == fixed.y);
  CHECK(std::abs(fixed_terms.keypoint -
                 keypoint_loss_value<double>(qa.value.data(), qb.value.data(), corr, fixed)) <= 1e-14);
}

TEST_CASE("perfect descriptors and logits give almost zero loss") {
  const int m = 4;
  Parameter<double> da("da", as_map(RowMatrix<double>::Identity(m, m))),
      db("db", as_map(RowMatrix<double>::Identity(m, m)));
  Parameter<double> qa("qa", Tensor<double>(Shape{1, 1, m}, 50.0)), qb("qb", Tensor<double>(Shape{1, 1, m}, 50.0));
  CorrespondenceSet corr;
  corr.grid_a = corr.grid_b = {1, m};
  for (int i = 0; i < m; ++i) corr.pairs.push_back({i, i});
  Tape<double> tape;
  const DenseVars a{tape.parameter(qa), tape.parameter(da), {}, {1, m}};
  const DenseVars b{tape.parameter(qb), tape.parameter(db), {}, {1, m}};
  const LossTerms<double> terms = total_loss(tape, a, b, corr, LossConfig{});
  CHECK(tape.value(terms.total).item() < 1e-6);
  CHECK(terms.labels.rate() == 1.0);
}

TEST_CASE("loss configuration validation") {
  LossConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.block_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
