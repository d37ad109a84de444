#include "silk/similarity.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "silk/error.hpp"

namespace silk {

template <typename T>
RowMatrix<T> descriptor_rows(const Tensor<T>& map) {
  if (map.rank() != 3) throw ShapeError("descriptor map must be [D,H,W], got " + shape_string(map.shape()));
  const auto d = static_cast<Eigen::Index>(map.dim(0));
  const auto m = static_cast<Eigen::Index>(map.dim(1) * map.dim(2));
  return Eigen::Map<const RowMatrix<T>>(map.ptr(), d, m).transpose();
}

namespace {

template <typename T>
void normalise_rows(const RowMatrix<T>& x, RowMatrix<T>& unit, ColVector<T>& norms, const char* side) {
  norms = x.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) >= T(1e-12))) {
      throw Error(std::string("descriptor ") + side + "[" + std::to_string(i) + "] has zero norm");
    }
  }
  unit = x.array().colwise() / norms.array();
}

}  // namespace

template <typename T>
SimilarityMatrix<T> SimilarityMatrix<T>::from_descriptors(const RowMatrix<T>& a, const RowMatrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("descriptor dimensions differ: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
  }
  SimilarityMatrix s;
  s.factored_ = true;
  normalise_rows(a, s.unit_a_, s.norms_a_, "a");
  normalise_rows(b, s.unit_b_, s.norms_b_, "b");
  return s;
}

template <typename T>
SimilarityMatrix<T> SimilarityMatrix<T>::from_dense(RowMatrix<T> s) {
  SimilarityMatrix out;
  out.dense_ = std::move(s);
  return out;
}

template <typename T>
SimilarityScan<T> scan_similarity(const SimilarityMatrix<T>& s, const ScanOptions& opts, const CorrespondenceSet* corr) {
  using Index = Eigen::Index;
  const Index m_a = s.rows();
  const Index m_b = s.cols();
  const T lowest = std::numeric_limits<T>::lowest();
  const T inv_tau = T(1) / static_cast<T>(opts.temperature);

  SimilarityScan<T> out;
  out.row_max.assign(m_a, lowest);
  out.row_argmax.assign(m_a, -1);
  out.col_max.assign(m_b, lowest);
  out.col_argmax.assign(m_b, -1);

  // Online log-sum-exp state: running max and sum of exp(z - max).
  ColVector<T> row_m = ColVector<T>::Constant(m_a, lowest);
  ColVector<T> row_sum = ColVector<T>::Zero(m_a);
  ColVector<T> col_m = ColVector<T>::Constant(m_b, lowest);
  ColVector<T> col_sum = ColVector<T>::Zero(m_b);

  std::vector<std::int64_t> partner;
  if (corr) {
    partner.assign(m_a, -1);
    out.target.assign(corr->size(), T(0));
    for (std::size_t i = 0; i < corr->size(); ++i) partner[corr->pairs[i].a] = static_cast<std::int64_t>(i);
  }

  s.for_each_tile(opts.block, [&](Index r0, Index c0, const RowMatrix<T>& tile) {
    const Index nr = tile.rows();
    const Index nc = tile.cols();
    for (Index i = 0; i < nr; ++i) {
      const Index gi = r0 + i;
      for (Index j = 0; j < nc; ++j) {
        const T v = tile(i, j);
        if (v > out.row_max[gi]) {
          out.row_max[gi] = v;
          out.row_argmax[gi] = c0 + j;
        }
        if (v > out.col_max[c0 + j]) {
          out.col_max[c0 + j] = v;
          out.col_argmax[c0 + j] = gi;
        }
      }
      if (corr && partner[gi] >= 0) {
        const auto b = corr->pairs[partner[gi]].b;
        if (b >= c0 && b < c0 + nc) out.target[partner[gi]] = tile(i, b - c0);
      }
    }
    if (!opts.log_sum_exp) return;
    const RowMatrix<T> z = tile * inv_tau;
    const ColVector<T> tile_row_max = z.rowwise().maxCoeff();
    const ColVector<T> new_row_m = row_m.segment(r0, nr).cwiseMax(tile_row_max);
    const ColVector<T> row_part = (z.colwise() - new_row_m).array().exp().rowwise().sum();
    row_sum.segment(r0, nr) =
        row_sum.segment(r0, nr).cwiseProduct((row_m.segment(r0, nr) - new_row_m).array().exp().matrix()) + row_part;
    row_m.segment(r0, nr) = new_row_m;

    const ColVector<T> tile_col_max = z.colwise().maxCoeff().transpose();
    const ColVector<T> new_col_m = col_m.segment(c0, nc).cwiseMax(tile_col_max);
    const ColVector<T> col_part = (z.rowwise() - new_col_m.transpose()).array().exp().colwise().sum().transpose();
    col_sum.segment(c0, nc) =
        col_sum.segment(c0, nc).cwiseProduct((col_m.segment(c0, nc) - new_col_m).array().exp().matrix()) + col_part;
    col_m.segment(c0, nc) = new_col_m;
  });

  if (opts.log_sum_exp) {
    out.row_lse.resize(m_a);
    out.col_lse.resize(m_b);
    for (Index i = 0; i < m_a; ++i) out.row_lse[i] = row_m(i) + std::log(row_sum(i));
    for (Index j = 0; j < m_b; ++j) out.col_lse[j] = col_m(j) + std::log(col_sum(j));
  }
  return out;
}

template RowMatrix<float> descriptor_rows<float>(const Tensor<float>&);
template RowMatrix<double> descriptor_rows<double>(const Tensor<double>&);
template class SimilarityMatrix<float>;
template class SimilarityMatrix<double>;
template SimilarityScan<float> scan_similarity<float>(const SimilarityMatrix<float>&, const ScanOptions&,
                                                      const CorrespondenceSet*);
template SimilarityScan<double> scan_similarity<double>(const SimilarityMatrix<double>&, const ScanOptions&,
                                                        const CorrespondenceSet*);

}  // namespace silk
