#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "silk/autodiff.hpp"

namespace silk::testing {

// sum_i w_i x_i as a tape node with w constant.
inline Var weighted_sum(Tape<double>& tape, Var x, const Tensor<double>& w) {
  const Tensor<double>& xv = tape.value(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += w[i] * xv[i];
  return tape.record(Tensor<double>::scalar(acc), {x}, [x, w](Tape<double>& t, Var self) {
    const double g = t.grad(self).item();
    if (Tensor<double>* dx = t.grad_sink(x)) {
      for (std::size_t i = 0; i < w.size(); ++i) (*dx)[i] += g * w[i];
    }
  });
}

inline double relative_error(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central difference of f along `dir` at `x`.
inline double directional_fd(const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
                             const Tensor<double>& dir, double h = 1e-5) {
  Tensor<double> xp = x;
  Tensor<double> xm = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] += h * dir[i];
    xm[i] -= h * dir[i];
  }
  return (f(xp) - f(xm)) / (2.0 * h);
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace silk::testing
