#include "silk/loss.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "silk/error.hpp"

namespace silk {

void LossConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
  if (block_size < 1) throw ConfigError("block_size must be >= 1");
  if (!(keypoint_weight >= 0.0) || !std::isfinite(keypoint_weight)) {
    throw ConfigError("keypoint_weight must be finite and non-negative");
  }
}

double MatchSuccessLabels::rate() const noexcept {
  if (y.empty()) return 0.0;
  return static_cast<double>(std::accumulate(y.begin(), y.end(), std::size_t{0})) / static_cast<double>(y.size());
}

template <typename T>
MatchProbabilities<T> match_probabilities(const SimilarityMatrix<T>& s, double temperature) {
  const RowMatrix<T> z = s.dense() / static_cast<T>(temperature);
  MatchProbabilities<T> p;
  const ColVector<T> row_max = z.rowwise().maxCoeff();
  p.forward = (z.colwise() - row_max).array().exp();
  p.forward.array().colwise() /= p.forward.rowwise().sum().array();
  const Eigen::Matrix<T, 1, Eigen::Dynamic> col_max = z.colwise().maxCoeff();
  p.backward = (z.rowwise() - col_max).array().exp();
  p.backward.array().rowwise() /= p.backward.colwise().sum().array();
  return p;
}

namespace {

void check_indices(const CorrespondenceSet& corr, Eigen::Index m_a, Eigen::Index m_b) {
  if (corr.empty()) throw Error("descriptor loss needs at least one correspondence");
  for (const auto& p : corr.pairs) {
    if (p.a < 0 || p.a >= m_a || p.b < 0 || p.b >= m_b) {
      throw ShapeError("correspondence (" + std::to_string(p.a) + ", " + std::to_string(p.b) +
                       ") outside similarity matrix " + std::to_string(m_a) + "x" + std::to_string(m_b));
    }
  }
}

template <typename T>
MatchSuccessLabels labels_from_scan(const SimilarityScan<T>& scan, const CorrespondenceSet& corr) {
  MatchSuccessLabels out;
  out.y.resize(corr.size());
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const T v = scan.target[i];
    out.y[i] = v >= scan.row_max[corr.pairs[i].a] && v >= scan.col_max[corr.pairs[i].b];
  }
  return out;
}

template <typename T>
struct DenseResult {
  T loss;
  MatchProbabilities<T> p;
  MatchSuccessLabels labels;
};

template <typename T>
DenseResult<T> dense_forward(const SimilarityMatrix<T>& s, const CorrespondenceSet& corr, double temperature) {
  DenseResult<T> r{T(0), match_probabilities(s, temperature), {}};
  const RowMatrix<T> d = s.dense();
  const ColVector<T> row_max = d.rowwise().maxCoeff();
  const Eigen::Matrix<T, 1, Eigen::Dynamic> col_max = d.colwise().maxCoeff();
  r.labels.y.resize(corr.size());
  T acc = 0;
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const auto [a, b] = corr.pairs[i];
    acc += std::max(T(0), -std::log(r.p.forward(a, b))) + std::max(T(0), -std::log(r.p.backward(a, b)));
    r.labels.y[i] = d(a, b) >= row_max(a) && d(a, b) >= col_max(b);
  }
  r.loss = acc / static_cast<T>(corr.size());
  return r;
}

template <typename T>
struct BlockResult {
  T loss;
  SimilarityScan<T> scan;
};

template <typename T>
BlockResult<T> block_forward(const SimilarityMatrix<T>& s, const CorrespondenceSet& corr, const LossConfig& cfg) {
  ScanOptions opts{cfg.block_size, true, cfg.temperature};
  BlockResult<T> r{T(0), scan_similarity(s, opts, &corr)};
  const T inv_tau = T(1) / static_cast<T>(cfg.temperature);
  T acc = 0;
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const auto [a, b] = corr.pairs[i];
    // Each directional term is -log P, non-negative up to rounding.
    const T z = r.scan.target[i] * inv_tau;
    acc += std::max(T(0), r.scan.row_lse[a] - z) + std::max(T(0), r.scan.col_lse[b] - z);
  }
  r.loss = acc / static_cast<T>(corr.size());
  return r;
}

// dL/dU for both unit-descriptor matrices, with dL/ds = G.
template <typename T>
void block_backward(const SimilarityMatrix<T>& s, const SimilarityScan<T>& scan, const CorrespondenceSet& corr,
                    const LossConfig& cfg, T seed, RowMatrix<T>& du_a, RowMatrix<T>& du_b) {
  using Index = Eigen::Index;
  const T inv_tau = T(1) / static_cast<T>(cfg.temperature);
  const T factor = seed * inv_tau / static_cast<T>(corr.size());
  ColVector<T> row_mask = ColVector<T>::Zero(s.rows());
  ColVector<T> col_mask = ColVector<T>::Zero(s.cols());
  for (const auto& p : corr.pairs) {
    row_mask(p.a) = 1;
    col_mask(p.b) = 1;
  }
  const Eigen::Map<const ColVector<T>> row_lse(scan.row_lse.data(), s.rows());
  const Eigen::Map<const ColVector<T>> col_lse(scan.col_lse.data(), s.cols());
  std::vector<std::int64_t> partner(s.rows(), -1);
  for (const auto& p : corr.pairs) partner[p.a] = p.b;

  s.for_each_tile(cfg.block_size, [&](Index r0, Index c0, const RowMatrix<T>& tile) {
    const Index nr = tile.rows();
    const Index nc = tile.cols();
    const RowMatrix<T> z = tile * inv_tau;
    RowMatrix<T> g = ((z.colwise() - row_lse.segment(r0, nr)).array().exp().colwise() *
                      row_mask.segment(r0, nr).array())
                         .matrix();
    g.array() += (z.rowwise() - col_lse.segment(c0, nc).transpose()).array().exp().rowwise() *
                 col_mask.segment(c0, nc).transpose().array();
    for (Index i = 0; i < nr; ++i) {
      const auto b = partner[r0 + i];
      if (b >= c0 && b < c0 + nc) g(i, b - c0) -= T(2);
    }
    g *= factor;
    du_a.middleRows(r0, nr).noalias() += g * s.unit_b().middleRows(c0, nc);
    du_b.middleRows(c0, nc).noalias() += g.transpose() * s.unit_a().middleRows(r0, nr);
  });
}

// Pushes dL/dU through u = x / |x| and scatters it into a [D,H,W] gradient.
template <typename T>
void accumulate_descriptor_grad(const RowMatrix<T>& du, const RowMatrix<T>& unit, const ColVector<T>& norms,
                                Tensor<T>& grad) {
  const ColVector<T> radial = unit.cwiseProduct(du).rowwise().sum();
  RowMatrix<T> dx = du - unit.cwiseProduct(radial.replicate(1, unit.cols()));
  dx.array().colwise() /= norms.array();
  Eigen::Map<RowMatrix<T>>(grad.ptr(), dx.cols(), dx.rows()) += dx.transpose();
}

}  // namespace

template <typename T>
MatchSuccessLabels matching_success(const SimilarityMatrix<T>& s, const CorrespondenceSet& corr,
                                    std::int64_t block_size) {
  for (const auto& p : corr.pairs) {
    if (p.a < 0 || p.a >= s.rows() || p.b < 0 || p.b >= s.cols()) {
      throw ShapeError("correspondence outside similarity matrix");
    }
  }
  const auto scan = scan_similarity(s, ScanOptions{block_size, false, 1.0}, &corr);
  return labels_from_scan(scan, corr);
}

template <typename T>
T descriptor_loss_value(const SimilarityMatrix<T>& s, const CorrespondenceSet& corr, const LossConfig& cfg,
                        LossMode mode) {
  cfg.validate();
  check_indices(corr, s.rows(), s.cols());
  if (mode == LossMode::kDense) return dense_forward(s, corr, cfg.temperature).loss;
  return block_forward(s, corr, cfg).loss;
}

template <typename T>
Var descriptor_loss(Tape<T>& tape, Var desc_a, Var desc_b, const CorrespondenceSet& corr, const LossConfig& cfg,
                    LossMode mode, MatchSuccessLabels* labels) {
  cfg.validate();
  const Tensor<T>& va = tape.value(desc_a);
  const Tensor<T>& vb = tape.value(desc_b);
  auto s = std::make_shared<const SimilarityMatrix<T>>(
      SimilarityMatrix<T>::from_descriptors(descriptor_rows(va), descriptor_rows(vb)));
  check_indices(corr, s->rows(), s->cols());

  auto grads = [s, desc_a, desc_b](Tape<T>& t, const RowMatrix<T>& du_a, const RowMatrix<T>& du_b) {
    if (Tensor<T>* ga = t.grad_sink(desc_a)) accumulate_descriptor_grad(du_a, s->unit_a(), s->norms_a(), *ga);
    if (Tensor<T>* gb = t.grad_sink(desc_b)) accumulate_descriptor_grad(du_b, s->unit_b(), s->norms_b(), *gb);
  };

  if (mode == LossMode::kDense) {
    auto r = std::make_shared<DenseResult<T>>(dense_forward(*s, corr, cfg.temperature));
    if (labels) *labels = r->labels;
    const T loss = r->loss;
    return tape.record(Tensor<T>::scalar(loss), {desc_a, desc_b}, [s, r, corr, cfg, grads](Tape<T>& t, Var self) {
      const T seed = t.grad(self).item();
      const T factor = seed / (static_cast<T>(corr.size()) * static_cast<T>(cfg.temperature));
      RowMatrix<T> g = RowMatrix<T>::Zero(s->rows(), s->cols());
      std::vector<std::uint8_t> row_used(s->rows(), 0), col_used(s->cols(), 0);
      for (const auto& p : corr.pairs) {
        row_used[p.a] = 1;
        col_used[p.b] = 1;
        g(p.a, p.b) -= T(2);
      }
      for (Eigen::Index i = 0; i < s->rows(); ++i) {
        if (row_used[i]) g.row(i) += r->p.forward.row(i);
      }
      for (Eigen::Index j = 0; j < s->cols(); ++j) {
        if (col_used[j]) g.col(j) += r->p.backward.col(j);
      }
      g *= factor;
      const RowMatrix<T> du_a = g * s->unit_b();
      const RowMatrix<T> du_b = g.transpose() * s->unit_a();
      grads(t, du_a, du_b);
    });
  }

  auto r = std::make_shared<BlockResult<T>>(block_forward(*s, corr, cfg));
  if (labels) *labels = labels_from_scan(r->scan, corr);
  const T loss = r->loss;
  return tape.record(Tensor<T>::scalar(loss), {desc_a, desc_b}, [s, r, corr, cfg, grads](Tape<T>& t, Var self) {
    RowMatrix<T> du_a = RowMatrix<T>::Zero(s->rows(), s->unit_a().cols());
    RowMatrix<T> du_b = RowMatrix<T>::Zero(s->cols(), s->unit_b().cols());
    block_backward(*s, r->scan, corr, cfg, t.grad(self).item(), du_a, du_b);
    grads(t, du_a, du_b);
  });
}

namespace {

template <typename T>
T softplus(T x) noexcept {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

void check_labels(const CorrespondenceSet& corr, const MatchSuccessLabels& labels) {
  if (labels.size() != corr.size()) {
    throw ShapeError("label count " + std::to_string(labels.size()) + " does not match " +
                     std::to_string(corr.size()) + " correspondences");
  }
}

template <typename T>
T bce_mean(std::span<const T> logits, const CorrespondenceSet& corr, const MatchSuccessLabels& labels, bool side_a) {
  T acc = 0;
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const auto idx = static_cast<std::size_t>(side_a ? corr.pairs[i].a : corr.pairs[i].b);
    if (idx >= logits.size()) throw ShapeError("correspondence index outside logit map");
    const T q = logits[idx];
    acc += softplus(q) - (labels.y[i] ? q : T(0));
  }
  return acc / static_cast<T>(corr.size());
}

}  // namespace

template <typename T>
T keypoint_loss_value(std::span<const T> logits_a, std::span<const T> logits_b, const CorrespondenceSet& corr,
                      const MatchSuccessLabels& labels) {
  check_labels(corr, labels);
  if (corr.empty()) throw Error("keypoint loss needs at least one correspondence");
  return bce_mean(logits_a, corr, labels, true) + bce_mean(logits_b, corr, labels, false);
}

template <typename T>
Var keypoint_loss(Tape<T>& tape, Var logits_a, Var logits_b, const CorrespondenceSet& corr,
                  const MatchSuccessLabels& labels) {
  const Tensor<T>& qa = tape.value(logits_a);
  const Tensor<T>& qb = tape.value(logits_b);
  const T loss = keypoint_loss_value<T>(qa.data(), qb.data(), corr, labels);
  return tape.record(Tensor<T>::scalar(loss), {logits_a, logits_b},
                     [logits_a, logits_b, corr, labels](Tape<T>& t, Var self) {
                       const T factor = t.grad(self).item() / static_cast<T>(corr.size());
                       for (int side = 0; side < 2; ++side) {
                         const Var v = side == 0 ? logits_a : logits_b;
                         Tensor<T>* g = t.grad_sink(v);
                         if (!g) continue;
                         const Tensor<T>& q = t.value(v);
                         for (std::size_t i = 0; i < corr.size(); ++i) {
                           const auto idx = static_cast<std::size_t>(side == 0 ? corr.pairs[i].a : corr.pairs[i].b);
                           (*g)[idx] += factor * (sigmoid_value(q[idx]) - (labels.y[i] ? T(1) : T(0)));
                         }
                       }
                     });
}

template <typename T>
LossTerms<T> total_loss(Tape<T>& tape, const DenseVars& a, const DenseVars& b, const CorrespondenceSet& corr,
                        const LossConfig& cfg, LossMode mode, const MatchSuccessLabels* fixed_labels) {
  LossTerms<T> out;
  const Var desc = descriptor_loss(tape, a.descriptors, b.descriptors, corr, cfg, mode, &out.labels);
  if (fixed_labels) {
    check_labels(corr, *fixed_labels);
    out.labels = *fixed_labels;
  }
  const Var key = keypoint_loss(tape, a.logits, b.logits, corr, out.labels);
  out.descriptor = tape.value(desc).item();
  out.keypoint = tape.value(key).item();
  out.total = add(tape, desc, scale(tape, key, static_cast<T>(cfg.keypoint_weight)));
  return out;
}

#define SILK_INSTANTIATE(T)                                                                                          \
  template MatchProbabilities<T> match_probabilities<T>(const SimilarityMatrix<T>&, double);                        \
  template MatchSuccessLabels matching_success<T>(const SimilarityMatrix<T>&, const CorrespondenceSet&,             \
                                                  std::int64_t);                                                    \
  template T descriptor_loss_value<T>(const SimilarityMatrix<T>&, const CorrespondenceSet&, const LossConfig&,      \
                                      LossMode);                                                                    \
  template Var descriptor_loss<T>(Tape<T>&, Var, Var, const CorrespondenceSet&, const LossConfig&, LossMode,        \
                                  MatchSuccessLabels*);                                                             \
  template T keypoint_loss_value<T>(std::span<const T>, std::span<const T>, const CorrespondenceSet&,               \
                                    const MatchSuccessLabels&);                                                     \
  template Var keypoint_loss<T>(Tape<T>&, Var, Var, const CorrespondenceSet&, const MatchSuccessLabels&);           \
  template LossTerms<T> total_loss<T>(Tape<T>&, const DenseVars&, const DenseVars&, const CorrespondenceSet&,       \
                                      const LossConfig&, LossMode, const MatchSuccessLabels*);

SILK_INSTANTIATE(float)
SILK_INSTANTIATE(double)

#undef SILK_INSTANTIATE

}  // namespace silk
