#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "silk/autodiff.hpp"
#include "silk/geometry.hpp"
#include "silk/model.hpp"
#include "silk/similarity.hpp"

namespace silk {

struct LossConfig {
  double temperature = 1.0 / 20.0;
  std::int64_t block_size = 4096;
  double keypoint_weight = 1.0;

  void validate() const;
};

// kDense materialises the whole similarity matrix; kBlock streams tiles of
// block_size x block_size and recomputes them in the backward pass.
enum class LossMode { kBlock, kDense };

template <typename T>
struct MatchProbabilities {
  RowMatrix<T> forward;   // row softmax of s / tau
  RowMatrix<T> backward;  // column softmax of s / tau
};

template <typename T>
MatchProbabilities<T> match_probabilities(const SimilarityMatrix<T>& s, double temperature);

// y_i = 1 iff s[c_i][c'_i] is a maximum of its row and of its column.
struct MatchSuccessLabels {
  std::vector<std::uint8_t> y;

  std::size_t size() const noexcept { return y.size(); }
  double rate() const noexcept;
};

template <typename T>
MatchSuccessLabels matching_success(const SimilarityMatrix<T>& s, const CorrespondenceSet& corr,
                                    std::int64_t block_size = 4096);

// -(1/N) sum_i [log P_fwd(c_i, c'_i) + log P_bwd(c_i, c'_i)]. Throws on an
// empty correspondence set.
template <typename T>
T descriptor_loss_value(const SimilarityMatrix<T>& s, const CorrespondenceSet& corr, const LossConfig& cfg,
                        LossMode mode = LossMode::kBlock);

// Differentiable descriptor loss on two [D,H,W] descriptor maps. When
// `labels` is given the matching-success labels from the same pass are
// stored there.
template <typename T>
Var descriptor_loss(Tape<T>& tape, Var desc_a, Var desc_b, const CorrespondenceSet& corr, const LossConfig& cfg,
                    LossMode mode = LossMode::kBlock, MatchSuccessLabels* labels = nullptr);

template <typename T>
T keypoint_loss_value(std::span<const T> logits_a, std::span<const T> logits_b, const CorrespondenceSet& corr,
                      const MatchSuccessLabels& labels);

// Mean binary cross-entropy of sigmoid(q) against y at the corresponding
// cells of both logit maps, summed over the two images.
template <typename T>
Var keypoint_loss(Tape<T>& tape, Var logits_a, Var logits_b, const CorrespondenceSet& corr,
                  const MatchSuccessLabels& labels);

template <typename T>
struct LossTerms {
  Var total;
  T descriptor = 0;
  T keypoint = 0;
  MatchSuccessLabels labels;
};

// L_desc + keypoint_weight * L_key. `fixed_labels` replaces the labels
// computed from the current similarities.
template <typename T>
LossTerms<T> total_loss(Tape<T>& tape, const DenseVars& a, const DenseVars& b, const CorrespondenceSet& corr,
                        const LossConfig& cfg, LossMode mode = LossMode::kBlock,
                        const MatchSuccessLabels* fixed_labels = nullptr);

}  // namespace silk
