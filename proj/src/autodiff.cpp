#include "silk/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>

#include "silk/error.hpp"

namespace silk {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, k, pad, h_out, w_out;
};

// Unfolds [Cin,H,W] into a (Cin*k*k) x (Hout*Wout) matrix.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t p = g.h_out * g.w_out;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((ci * g.k + ky) * g.k + kx) * p;
        for (std::size_t y = 0; y < g.h_out; ++y) {
          const long sy = static_cast<long>(y + ky) - static_cast<long>(g.pad);
          T* dst = row + y * g.w_out;
          if (sy < 0 || sy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.w_out, T(0));
            continue;
          }
          const T* src = x + (ci * g.h + static_cast<std::size_t>(sy)) * g.w;
          for (std::size_t xo = 0; xo < g.w_out; ++xo) {
            const long sx = static_cast<long>(xo + kx) - static_cast<long>(g.pad);
            dst[xo] = (sx < 0 || sx >= static_cast<long>(g.w)) ? T(0) : src[sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t p = g.h_out * g.w_out;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((ci * g.k + ky) * g.k + kx) * p;
        for (std::size_t y = 0; y < g.h_out; ++y) {
          const long sy = static_cast<long>(y + ky) - static_cast<long>(g.pad);
          if (sy < 0 || sy >= static_cast<long>(g.h)) continue;
          const T* src = row + y * g.w_out;
          T* dst = dx + (ci * g.h + static_cast<std::size_t>(sy)) * g.w;
          for (std::size_t xo = 0; xo < g.w_out; ++xo) {
            const long sx = static_cast<long>(xo + kx) - static_cast<long>(g.pad);
            if (sx >= 0 && sx < static_cast<long>(g.w)) dst[sx] += src[xo];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::parameter(Parameter<T>& p) {
  if (!recording_) return constant(p.value);
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var{it->second};
  Node n;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  param_ids_[&p] = nodes_.size() - 1;
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (Var v : inputs) n.needs_grad = n.needs_grad || nodes_.at(v.id).needs_grad;
    if (n.needs_grad) n.fn = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) throw Error("no gradient recorded for tape node " + std::to_string(v.id));
  return n.grad;
}

template <typename T>
Tensor<T>* Tape<T>::grad_sink(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.needs_grad) return nullptr;
  return &n.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (!recording_) throw Error("backward() on a non-recording tape");
  Node& root = nodes_.at(loss.id);
  if (root.value.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_string(root.value.shape()));
  }
  for (std::size_t i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[i];
    n.grad = n.needs_grad ? Tensor<T>(n.value.shape(), T(0)) : Tensor<T>();
  }
  if (!root.needs_grad) return;
  root.grad.fill(T(1));

  last_visits_ = 0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (nodes_[i].fn) {
      nodes_[i].fn(*this, Var{i});
      ++last_visits_;
    }
  }
  for (std::size_t i = 0; i <= loss.id; ++i) {
    if (nodes_[i].param) nodes_[i].param->grad += nodes_[i].grad;
  }
}

// ---------------------------------------------------------------------------
// Operations

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias, Padding padding) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& w = tape.value(weight);
  const Tensor<T>& b = tape.value(bias);
  if (x.rank() != 3) throw ShapeError("conv2d input must be [C,H,W], got " + shape_string(x.shape()));
  if (w.rank() != 4 || w.dim(2) != w.dim(3)) {
    throw ShapeError("conv2d weight must be [Cout,Cin,k,k], got " + shape_string(w.shape()));
  }
  if (w.dim(1) != x.dim(0)) {
    throw ShapeError("conv2d channel mismatch: input " + shape_string(x.shape()) + " vs weight " +
                     shape_string(w.shape()));
  }
  const std::size_t k = w.dim(2);
  if (k != 1 && k != 3) throw ShapeError("conv2d kernel size must be 1 or 3, got " + std::to_string(k));
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
    throw ShapeError("conv2d bias " + shape_string(b.shape()) + " does not match weight " +
                     shape_string(w.shape()));
  }

  ConvGeometry g{};
  g.c_in = x.dim(0);
  g.h = x.dim(1);
  g.w = x.dim(2);
  g.c_out = w.dim(0);
  g.k = k;
  if (padding == Padding::kValid) {
    if (g.h < k || g.w < k) {
      throw ShapeError("conv2d input " + shape_string(x.shape()) + " smaller than kernel " + std::to_string(k) +
                       "x" + std::to_string(k) + " in valid mode");
    }
    g.pad = 0;
    g.h_out = g.h - k + 1;
    g.w_out = g.w - k + 1;
  } else {
    g.pad = (k - 1) / 2;
    g.h_out = g.h;
    g.w_out = g.w;
  }
  const std::size_t kk = g.c_in * k * k;
  const std::size_t p = g.h_out * g.w_out;
  const bool direct = (k == 1);

  Tensor<T> out(Shape{g.c_out, g.h_out, g.w_out});
  {
    AlignedVector<T> cols;
    const T* cols_ptr = x.ptr();
    if (!direct) {
      cols.resize(kk * p);
      im2col(x.ptr(), g, cols.data());
      cols_ptr = cols.data();
    }
    ConstMatrixMap<T> wm(w.ptr(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(kk));
    ConstMatrixMap<T> cm(cols_ptr, static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(p));
    MatrixMap<T> om(out.ptr(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(p));
    om.noalias() = wm * cm;
    for (std::size_t co = 0; co < g.c_out; ++co) om.row(static_cast<Eigen::Index>(co)).array() += b[co];
  }

  return tape.record(std::move(out), {input, weight, bias}, [input, weight, bias, g, kk, p, direct](Tape<T>& t, Var self) {
    const Tensor<T>& gy = t.grad(self);
    const Tensor<T>& xv = t.value(input);
    const Tensor<T>& wv = t.value(weight);
    const auto rows_out = static_cast<Eigen::Index>(g.c_out);
    const auto rows_k = static_cast<Eigen::Index>(kk);
    const auto cols_p = static_cast<Eigen::Index>(p);
    ConstMatrixMap<T> gm(gy.ptr(), rows_out, cols_p);

    if (Tensor<T>* db = t.grad_sink(bias)) {
      for (std::size_t co = 0; co < g.c_out; ++co) (*db)[co] += gm.row(static_cast<Eigen::Index>(co)).sum();
    }
    if (Tensor<T>* dw = t.grad_sink(weight)) {
      AlignedVector<T> cols;
      const T* cols_ptr = xv.ptr();
      if (!direct) {
        cols.resize(kk * p);
        im2col(xv.ptr(), g, cols.data());
        cols_ptr = cols.data();
      }
      ConstMatrixMap<T> cm(cols_ptr, rows_k, cols_p);
      MatrixMap<T> dwm(dw->ptr(), rows_out, rows_k);
      dwm.noalias() += gm * cm.transpose();
    }
    if (Tensor<T>* dx = t.grad_sink(input)) {
      ConstMatrixMap<T> wm(wv.ptr(), rows_out, rows_k);
      if (direct) {
        MatrixMap<T> dxm(dx->ptr(), rows_k, cols_p);
        dxm.noalias() += wm.transpose() * gm;
      } else {
        RowMatrix<T> dcols(rows_k, cols_p);
        dcols.noalias() = wm.transpose() * gm;
        col2im_add(dcols.data(), g, dx->ptr());
      }
    }
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, Var self) {
    Tensor<T>* dx = t.grad_sink(x);
    const Tensor<T>& gy = t.grad(self);
    const Tensor<T>& xv = t.value(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > T(0)) (*dx)[i] += gy[i];
    }
  });
}

template <typename T>
T sigmoid_value(T x) noexcept {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = sigmoid_value(xv[i]);
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, Var self) {
    Tensor<T>* dx = t.grad_sink(x);
    const Tensor<T>& gy = t.grad(self);
    const Tensor<T>& y = t.value(self);
    for (std::size_t i = 0; i < y.size(); ++i) (*dx)[i] += gy[i] * y[i] * (T(1) - y[i]);
  });
}

namespace {

template <typename T>
void check_bn_shapes(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  if (x.rank() != 3) throw ShapeError("batchnorm input must be [C,H,W], got " + shape_string(x.shape()));
  const Shape channel{x.dim(0)};
  if (gamma.shape() != channel || beta.shape() != channel) {
    throw ShapeError("batchnorm affine parameters " + shape_string(gamma.shape()) + "/" +
                     shape_string(beta.shape()) + " do not match input " + shape_string(x.shape()));
  }
}

}  // namespace

template <typename T>
Var batchnorm_train(Tape<T>& tape, Var x, Var gamma, Var beta, BatchNormStats<T>& stats,
                    const BatchNormOptions& opts) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& gv = tape.value(gamma);
  const Tensor<T>& bv = tape.value(beta);
  check_bn_shapes(xv, gv, bv);
  const std::size_t c = xv.dim(0);
  const std::size_t n = xv.dim(1) * xv.dim(2);
  if (n < 2) {
    throw ShapeError("batchnorm in train mode needs at least 2 spatial positions, got " + shape_string(xv.shape()));
  }
  const T momentum = static_cast<T>(opts.momentum);
  const T eps = static_cast<T>(opts.eps);

  Tensor<T> out(xv.shape());
  Tensor<T> xhat(xv.shape());
  std::vector<T> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = xv.ptr() + ch * n;
    T mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += src[i];
    mean /= static_cast<T>(n);
    T residual = 0;
    for (std::size_t i = 0; i < n; ++i) residual += src[i] - mean;
    mean += residual / static_cast<T>(n);
    T var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[ch] = inv;
    T* xh = xhat.ptr() + ch * n;
    T* dst = out.ptr() + ch * n;
    for (std::size_t i = 0; i < n; ++i) {
      xh[i] = (src[i] - mean) * inv;
      dst[i] = gv[ch] * xh[i] + bv[ch];
    }
    stats.running_mean[ch] = (T(1) - momentum) * stats.running_mean[ch] + momentum * mean;
    const T unbiased = var * static_cast<T>(n) / static_cast<T>(n - 1);
    stats.running_var[ch] = (T(1) - momentum) * stats.running_var[ch] + momentum * unbiased;
  }

  return tape.record(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), c, n](Tape<T>& t, Var self) {
                       const Tensor<T>& gy = t.grad(self);
                       const Tensor<T>& gv = t.value(gamma);
                       Tensor<T>* dx = t.grad_sink(x);
                       Tensor<T>* dg = t.grad_sink(gamma);
                       Tensor<T>* db = t.grad_sink(beta);
                       const T nn = static_cast<T>(n);
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const T* g = gy.ptr() + ch * n;
                         const T* xh = xhat.ptr() + ch * n;
                         T sum_g = 0;
                         T sum_gx = 0;
                         for (std::size_t i = 0; i < n; ++i) {
                           sum_g += g[i];
                           sum_gx += g[i] * xh[i];
                         }
                         if (dg) (*dg)[ch] += sum_gx;
                         if (db) (*db)[ch] += sum_g;
                         if (dx) {
                           const T k = gv[ch] * inv_std[ch] / nn;
                           T* d = dx->ptr() + ch * n;
                           for (std::size_t i = 0; i < n; ++i) d[i] += k * (nn * g[i] - sum_g - xh[i] * sum_gx);
                         }
                       }
                     });
}

template <typename T>
Var batchnorm_eval(Tape<T>& tape, Var x, Var gamma, Var beta, const BatchNormStats<T>& stats,
                   const BatchNormOptions& opts) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& gv = tape.value(gamma);
  const Tensor<T>& bv = tape.value(beta);
  check_bn_shapes(xv, gv, bv);
  if (stats.running_mean.shape() != gv.shape() || stats.running_var.shape() != gv.shape()) {
    throw ShapeError("batchnorm running statistics do not match channel count " + std::to_string(xv.dim(0)));
  }
  const std::size_t c = xv.dim(0);
  const std::size_t n = xv.dim(1) * xv.dim(2);
  const T eps = static_cast<T>(opts.eps);
  std::vector<T> inv_std(c);
  std::vector<T> mean(c);
  Tensor<T> out(xv.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    mean[ch] = stats.running_mean[ch];
    inv_std[ch] = T(1) / std::sqrt(stats.running_var[ch] + eps);
    const T* src = xv.ptr() + ch * n;
    T* dst = out.ptr() + ch * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = gv[ch] * (src[i] - mean[ch]) * inv_std[ch] + bv[ch];
  }
  return tape.record(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, mean = std::move(mean), inv_std = std::move(inv_std), c, n](Tape<T>& t, Var self) {
                       const Tensor<T>& gy = t.grad(self);
                       const Tensor<T>& xv = t.value(x);
                       const Tensor<T>& gv = t.value(gamma);
                       Tensor<T>* dx = t.grad_sink(x);
                       Tensor<T>* dg = t.grad_sink(gamma);
                       Tensor<T>* db = t.grad_sink(beta);
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const T* g = gy.ptr() + ch * n;
                         const T* src = xv.ptr() + ch * n;
                         T sum_g = 0;
                         T sum_gx = 0;
                         for (std::size_t i = 0; i < n; ++i) {
                           sum_g += g[i];
                           sum_gx += g[i] * (src[i] - mean[ch]) * inv_std[ch];
                         }
                         if (dg) (*dg)[ch] += sum_gx;
                         if (db) (*db)[ch] += sum_g;
                         if (dx) {
                           T* d = dx->ptr() + ch * n;
                           const T k = gv[ch] * inv_std[ch];
                           for (std::size_t i = 0; i < n; ++i) d[i] += k * g[i];
                         }
                       }
                     });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  T s = 0;
  for (T v : xv.data()) s += v;
  return tape.record(Tensor<T>::scalar(s), {x}, [x](Tape<T>& t, Var self) {
    const T g = t.grad(self).item();
    Tensor<T>* dx = t.grad_sink(x);
    for (auto& v : dx->data()) v += g;
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (!av.same_shape(bv)) {
    throw ShapeError("add shape mismatch: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  Tensor<T> out = av;
  out += bv;
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    if (Tensor<T>* da = t.grad_sink(a)) *da += g;
    if (Tensor<T>* db = t.grad_sink(b)) *db += g;
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
  Tensor<T> out = tape.value(a);
  for (auto& v : out.data()) v *= factor;
  return tape.record(std::move(out), {a}, [a, factor](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>* da = t.grad_sink(a);
    for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += factor * g[i];
  });
}

#define SILK_INSTANTIATE(T)                                                                              \
  template class Tape<T>;                                                                                \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, Padding);                                              \
  template Var relu<T>(Tape<T>&, Var);                                                                   \
  template Var sigmoid<T>(Tape<T>&, Var);                                                                \
  template Var batchnorm_train<T>(Tape<T>&, Var, Var, Var, BatchNormStats<T>&, const BatchNormOptions&); \
  template Var batchnorm_eval<T>(Tape<T>&, Var, Var, Var, const BatchNormStats<T>&, const BatchNormOptions&); \
  template Var sum<T>(Tape<T>&, Var);                                                                    \
  template Var add<T>(Tape<T>&, Var, Var);                                                               \
  template Var scale<T>(Tape<T>&, Var, T);                                                               \
  template T sigmoid_value<T>(T) noexcept;

SILK_INSTANTIATE(float)
SILK_INSTANTIATE(double)

#undef SILK_INSTANTIATE

}  // namespace silk
