#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <vector>

#include "silk/geometry.hpp"
#include "silk/tensor.hpp"

namespace silk {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// [D,H,W] descriptor map -> (H*W) x D matrix, one row per grid cell.
template <typename T>
RowMatrix<T> descriptor_rows(const Tensor<T>& map);

// Cosine similarities s_ij = <a_i, b_j> / (|a_i| |b_j|) between two
// descriptor sets. Either materialised (from_dense) or kept factored as
// unit-norm descriptors, in which case tiles are recomputed on demand and the
// full M_a x M_b matrix never exists. Factored entries are clamped to
// [-1, 1].
template <typename T>
class SimilarityMatrix {
 public:
  using Index = Eigen::Index;

  // Throws Error naming the first descriptor with norm < 1e-12.
  static SimilarityMatrix from_descriptors(const RowMatrix<T>& a, const RowMatrix<T>& b);
  static SimilarityMatrix from_dense(RowMatrix<T> s);

  Index rows() const noexcept { return factored_ ? unit_a_.rows() : dense_.rows(); }
  Index cols() const noexcept { return factored_ ? unit_b_.rows() : dense_.cols(); }
  bool factored() const noexcept { return factored_; }

  const RowMatrix<T>& unit_a() const noexcept { return unit_a_; }
  const RowMatrix<T>& unit_b() const noexcept { return unit_b_; }
  const ColVector<T>& norms_a() const noexcept { return norms_a_; }
  const ColVector<T>& norms_b() const noexcept { return norms_b_; }

  T at(Index i, Index j) const {
    if (!factored_) return dense_(i, j);
    return std::clamp(unit_a_.row(i).dot(unit_b_.row(j)), T(-1), T(1));
  }

  RowMatrix<T> dense() const {
    if (!factored_) return dense_;
    RowMatrix<T> s(rows(), cols());
    for_each_tile(std::max<Index>(rows(), 1), [&](Index r0, Index c0, const RowMatrix<T>& tile) {
      s.block(r0, c0, tile.rows(), tile.cols()) = tile;
    });
    return s;
  }

  RowMatrix<T> tile(Index r0, Index c0, Index nr, Index nc) const {
    if (!factored_) return dense_.block(r0, c0, nr, nc);
    RowMatrix<T> t(nr, nc);
    t.noalias() = unit_a_.middleRows(r0, nr) * unit_b_.middleRows(c0, nc).transpose();
    return t.cwiseMax(T(-1)).cwiseMin(T(1));
  }

  // Visits tiles of at most block x block entries, rows outer, columns inner,
  // both ascending.
  template <typename Fn>
  void for_each_tile(Index block, Fn&& fn) const {
    block = std::max<Index>(block, 1);
    for (Index r0 = 0; r0 < rows(); r0 += block) {
      const Index nr = std::min(block, rows() - r0);
      for (Index c0 = 0; c0 < cols(); c0 += block) {
        const Index nc = std::min(block, cols() - c0);
        const RowMatrix<T> t = tile(r0, c0, nr, nc);
        fn(r0, c0, t);
      }
    }
  }

 private:
  bool factored_ = false;
  RowMatrix<T> dense_;
  RowMatrix<T> unit_a_;
  RowMatrix<T> unit_b_;
  ColVector<T> norms_a_;
  ColVector<T> norms_b_;
};

// One streaming pass over a similarity matrix. Argmax ties resolve to the
// lowest index. Log-sum-exps are over s / tau. When a correspondence set is
// given, `target[i]` is s[c_i][c'_i] read from the same tiles as the maxima.
template <typename T>
struct SimilarityScan {
  std::vector<T> row_max;
  std::vector<std::int64_t> row_argmax;
  std::vector<T> col_max;
  std::vector<std::int64_t> col_argmax;
  std::vector<T> row_lse;
  std::vector<T> col_lse;
  std::vector<T> target;
};

struct ScanOptions {
  Eigen::Index block = 4096;
  bool log_sum_exp = true;
  double temperature = 1.0 / 20.0;
};

template <typename T>
SimilarityScan<T> scan_similarity(const SimilarityMatrix<T>& s, const ScanOptions& opts,
                                  const CorrespondenceSet* corr = nullptr);

}  // namespace silk
