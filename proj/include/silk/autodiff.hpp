#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "silk/tensor.hpp"

namespace silk {

// Learnable tensor with its gradient accumulator.
template <typename T>
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() { grad.fill(T(0)); }
};

// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

// Linear record of a forward computation. Replaying it in reverse from a
// scalar pushes adjoints to every recorded input and finally adds them into
// the Parameters that were read through parameter().
//
// A non-recording tape only keeps values; it is used for inference.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Var self)>;

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor<T> value);
  // Leaf bound to a Parameter. Reading the same Parameter twice returns the
  // same node, so its adjoints accumulate in one place.
  Var parameter(Parameter<T>& p);
  // Records an operation. `fn` is kept only if one of `inputs` needs a
  // gradient and the tape is recording.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  // Adjoint of `v` from the last backward pass.
  const Tensor<T>& grad(Var v) const;
  // Accumulation target inside a backward function; nullptr when `v` does
  // not need a gradient.
  Tensor<T>* grad_sink(Var v);

  // Reverse pass from a scalar. Node adjoints are reset on every call while
  // Parameter::grad keeps accumulating until zeroed.
  void backward(Var loss);

  // Number of backward functions invoked by the last backward().
  std::size_t last_backward_visits() const noexcept { return last_visits_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn fn;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
  };

  bool recording_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_ids_;
  std::size_t last_visits_ = 0;
};

template <typename T>
void zero_grads(std::span<Parameter<T>* const> params) {
  for (auto* p : params) p->zero_grad();
}

enum class Padding { kValid, kZero };

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormStats(std::size_t channels = 1)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

// Stride-1 cross-correlation. input [Cin,H,W], weight [Cout,Cin,k,k] with
// k in {1,3}, bias [Cout]. Valid mode trims k-1 per axis; zero mode pads.
template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias, Padding padding);

template <typename T>
Var relu(Tape<T>& tape, Var x);

template <typename T>
Var sigmoid(Tape<T>& tape, Var x);

// Per-channel normalisation over the spatial positions of one [C,H,W] map.
// Updates the running statistics with momentum.
template <typename T>
Var batchnorm_train(Tape<T>& tape, Var x, Var gamma, Var beta, BatchNormStats<T>& stats,
                    const BatchNormOptions& opts = {});

template <typename T>
Var batchnorm_eval(Tape<T>& tape, Var x, Var gamma, Var beta, const BatchNormStats<T>& stats,
                   const BatchNormOptions& opts = {});

template <typename T>
Var sum(Tape<T>& tape, Var x);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor);

// Numerically stable logistic function on raw values.
template <typename T>
T sigmoid_value(T x) noexcept;

}  // namespace silk
