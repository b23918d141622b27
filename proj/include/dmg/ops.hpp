#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmg/tensor.hpp"

namespace dmg {

// ---------------------------------------------------------------------------
// Dense layer kernels
// ---------------------------------------------------------------------------

// y = x W + b.  x: [batch x in], W: [in x out], b: [out].
inline Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2)
    throw std::invalid_argument("dense_forward: rank-2 inputs required");
  if (x.cols() != w.rows())
    throw std::invalid_argument("dense_forward: inner dims differ, x " + shape_str(x) +
                                " vs W " + shape_str(w));
  if (b.size() != w.cols())
    throw std::invalid_argument("dense_forward: bias length " + std::to_string(b.size()) +
                                " vs out width " + std::to_string(w.cols()));
  const std::size_t n = x.rows(), in = x.cols(), out = w.cols();
  Tensor y({n, out});
  for (std::size_t i = 0; i < n; ++i) {
    double* yi = &y.data[i * out];
    for (std::size_t j = 0; j < out; ++j) yi[j] = b[j];
    const double* xi = &x.data[i * in];
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xi[k];
      const double* wk = &w.data[k * out];
      for (std::size_t j = 0; j < out; ++j) yi[j] += xv * wk[j];
    }
  }
  require_finite(y, "dense_forward");
  return y;
}

struct DenseGrads {
  Tensor grad_x;  // [batch x in]
  Tensor grad_w;  // [in x out]
  Tensor grad_b;  // [out]
};

inline DenseGrads dense_backward(const Tensor& grad_y, const Tensor& x, const Tensor& w) {
  if (grad_y.rank() != 2 || x.rank() != 2 || w.rank() != 2)
    throw std::invalid_argument("dense_backward: rank-2 inputs required");
  if (grad_y.rows() != x.rows() || grad_y.cols() != w.cols() || x.cols() != w.rows())
    throw std::invalid_argument("dense_backward: shape mismatch, grad_y " + shape_str(grad_y) +
                                ", x " + shape_str(x) + ", W " + shape_str(w));
  const std::size_t n = x.rows(), in = x.cols(), out = w.cols();
  DenseGrads g{Tensor({n, in}), Tensor({in, out}), Tensor({out})};
  for (std::size_t i = 0; i < n; ++i) {
    const double* gyi = &grad_y.data[i * out];
    const double* xi = &x.data[i * in];
    double* gxi = &g.grad_x.data[i * in];
    for (std::size_t j = 0; j < out; ++j) g.grad_b[j] += gyi[j];
    for (std::size_t k = 0; k < in; ++k) {
      double* gwk = &g.grad_w.data[k * out];
      const double* wk = &w.data[k * out];
      double acc = 0.0;
      const double xv = xi[k];
      for (std::size_t j = 0; j < out; ++j) {
        gwk[j] += xv * gyi[j];
        acc += gyi[j] * wk[j];
      }
      gxi[k] = acc;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

// Subgradient 0 at x == 0.
inline Tensor relu_backward(const Tensor& grad_y, const Tensor& x) {
  require_same_shape(grad_y, x, "relu_backward");
  Tensor g(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? grad_y[i] : 0.0;
  return g;
}

// ---------------------------------------------------------------------------
// Softmax cross entropy
// ---------------------------------------------------------------------------

// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_rows: rank-2 input required");
  const std::size_t n = logits.rows(), c = logits.cols();
  Tensor p({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const double* li = &logits.data[i * c];
    double* pi = &p.data[i * c];
    double m = li[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, li[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      pi[j] = std::exp(li[j] - m);
      z += pi[j];
    }
    for (std::size_t j = 0; j < c; ++j) pi[j] /= z;
  }
  return p;
}

struct XentResult {
  double loss = 0.0;     // mean over batch of -log softmax(logits)[label]
  Tensor grad_logits;    // (softmax - onehot) / batch
};

inline XentResult softmax_xent(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_xent: rank-2 logits required");
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n)
    throw std::invalid_argument("softmax_xent: label count " + std::to_string(labels.size()) +
                                " vs batch " + std::to_string(n));
  XentResult r;
  r.grad_logits = softmax_rows(logits);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw std::invalid_argument("softmax_xent: label " + std::to_string(y) +
                                  " outside [0," + std::to_string(c) + ") at row " +
                                  std::to_string(i));
    double* gi = &r.grad_logits.data[i * c];
    // log softmax directly from the stabilized probability; p > 0 by construction.
    r.loss -= std::log(gi[y]);
    gi[y] -= 1.0;
    for (std::size_t j = 0; j < c; ++j) gi[j] *= inv_n;
  }
  r.loss *= inv_n;
  require_finite(r.grad_logits, "softmax_xent");
  if (!std::isfinite(r.loss)) throw std::runtime_error("softmax_xent: non-finite loss");
  return r;
}

// ---------------------------------------------------------------------------
// Small elementwise helpers shared across modules
// ---------------------------------------------------------------------------

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

}  // namespace dmg
