#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "silk/autodiff.hpp"
#include "silk/geometry.hpp"

namespace silk {

enum class Backbone { kVggnp1, kVggnp2, kVggnp3, kVggnp4, kVggnpMu };
enum class Mode { kTrain, kEval };

std::string_view backbone_name(Backbone b);
// Throws ConfigError for unknown names.
Backbone parse_backbone(std::string_view name);
std::string_view padding_name(Padding p);
Padding parse_padding(std::string_view name);

// VGG-style backbone without pooling: one block per entry of `channels`,
// each block two 3x3 conv + batchnorm + ReLU. Two separate heads follow:
// 3x3 conv(head_hidden) + bn + ReLU then a 1x1 conv producing 1 logit or
// descriptor_dim channels.
struct ModelConfig {
  Backbone backbone = Backbone::kVggnp4;
  std::vector<int> channels;
  int descriptor_dim = 128;
  int head_hidden = 128;
  Padding padding = Padding::kValid;

  static ModelConfig for_backbone(Backbone b, Padding padding = Padding::kValid);

  void validate() const;
  int conv3x3_count() const noexcept { return 2 * static_cast<int>(channels.size()) + 1; }
  // Pixels removed from each border in valid mode.
  int border() const noexcept { return padding == Padding::kValid ? conv3x3_count() : 0; }
  CoordinateMapping mapping() const noexcept { return {static_cast<double>(border()), 1.0}; }
  int min_input_extent() const noexcept { return 2 * border() + 1; }
  // Input extent that yields a `grid`-sized descriptor map.
  int input_extent_for_grid(int grid) const noexcept { return grid + 2 * border(); }
  GridShape output_grid(ImageShape input) const noexcept {
    return {input.height - 2 * border(), input.width - 2 * border()};
  }
  bool operator==(const ModelConfig&) const = default;
};

// Per-image network output: keypoint logits [1,H',W'] and unnormalised
// descriptors [D,H',W'].
template <typename T>
struct DenseOutput {
  Tensor<T> logits;
  Tensor<T> descriptors;
  CoordinateMapping mapping;

  GridShape grid() const { return {static_cast<int>(logits.dim(1)), static_cast<int>(logits.dim(2))}; }
};

// Same as DenseOutput but as nodes of a tape, for training.
struct DenseVars {
  Var logits;
  Var descriptors;
  CoordinateMapping mapping;
  GridShape grid;
};

template <typename T>
struct ConvLayer {
  Parameter<T> weight;
  Parameter<T> bias;
};

template <typename T>
struct BatchNormLayer {
  Parameter<T> gamma;
  Parameter<T> beta;
  BatchNormStats<T> stats;
};

template <typename T>
struct ConvBnRelu {
  ConvLayer<T> conv;
  BatchNormLayer<T> bn;
};

template <typename T>
class SilkModel {
 public:
  // Kaiming fan-in initialisation of conv weights from `seed`; zero biases,
  // unit gamma, zero beta.
  explicit SilkModel(ModelConfig cfg, std::uint64_t seed = 0);

  SilkModel(SilkModel&&) noexcept = default;
  SilkModel& operator=(SilkModel&&) noexcept = default;
  SilkModel(const SilkModel&) = delete;
  SilkModel& operator=(const SilkModel&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  std::size_t parameter_count() const;

  // Every serialised tensor (parameters and running statistics) in a fixed
  // order.
  std::vector<std::pair<std::string, Tensor<T>*>> state();
  std::vector<std::pair<std::string, const Tensor<T>*>> state() const;

  // Train mode updates the batchnorm running statistics.
  DenseVars forward(Tape<T>& tape, const ImageGray& img, Mode mode);
  // Eval-mode forward without gradient bookkeeping. Safe to call
  // concurrently.
  DenseOutput<T> infer(const ImageGray& img) const;

  template <typename U>
  SilkModel<U> cast() const {
    SilkModel<U> out(cfg_, 0);
    auto dst = out.state();
    auto src = state();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
    for (auto* p : out.parameters()) p->zero_grad();
    return out;
  }

 private:
  template <typename Self>
  static DenseVars run(Self& self, Tape<T>& tape, const ImageGray& img, Mode mode);

  ModelConfig cfg_;
  std::vector<ConvBnRelu<T>> backbone_;
  ConvBnRelu<T> keypoint_hidden_;
  ConvLayer<T> keypoint_out_;
  ConvBnRelu<T> descriptor_hidden_;
  ConvLayer<T> descriptor_out_;
};

extern template class SilkModel<float>;
extern template class SilkModel<double>;

}  // namespace silk
