#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "motionseq/error.hpp"
#include "motionseq/rng.hpp"

namespace motionseq {

// Dense row-major N-d tensor with optional gradient buffer. Instantiated with
// float for training/generation and double for gradient-check tests.
template <class T>
struct TensorObj {
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized on demand; same length as value when present
  bool requires_grad = false;
  std::string label;  // set for model parameters, used in diagnostics

  std::size_t numel() const { return value.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
  void zero_grad() { grad.assign(value.size(), T(0)); }
};

template <class T>
using Tensor = std::shared_ptr<TensorObj<T>>;

namespace detail {

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace detail

template <class T>
Tensor<T> tensor(std::vector<std::size_t> shape, bool requires_grad = false) {
  auto t = std::make_shared<TensorObj<T>>();
  t->shape = std::move(shape);
  t->value.assign(detail::shape_numel(t->shape), T(0));
  t->requires_grad = requires_grad;
  return t;
}

template <class T>
Tensor<T> tensor_from(std::vector<std::size_t> shape, std::vector<T> data, bool requires_grad = false) {
  if (detail::shape_numel(shape) != data.size())
    throw ValidationError("tensor: shape " + detail::shape_str(shape) + " does not match data length " +
                          std::to_string(data.size()));
  auto t = std::make_shared<TensorObj<T>>();
  t->shape = std::move(shape);
  t->value = std::move(data);
  t->requires_grad = requires_grad;
  return t;
}

template <class T>
Tensor<T> scalar_tensor(T v, bool requires_grad = false) {
  return tensor_from<T>({1}, {v}, requires_grad);
}

template <class T>
Tensor<T> randn(Rng& rng, std::vector<std::size_t> shape, T stddev, bool requires_grad = false) {
  auto t = tensor<T>(std::move(shape), requires_grad);
  for (auto& v : t->value) v = static_cast<T>(rng.normal()) * stddev;
  return t;
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t->value)
    if (!std::isfinite(v)) return false;
  return true;
}

// Ordered record of backward rules. Replaying in reverse accumulates grad for
// every requires_grad tensor reachable from the loss. A tape is meant for a
// single backward pass; callers zero parameter grads between steps.
template <class T>
class Tape {
 public:
  void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

  void backward(const Tensor<T>& loss) {
    if (loss->numel() != 1)
      throw ValidationError("backward: loss must be scalar, got shape " + detail::shape_str(loss->shape));
    loss->ensure_grad();
    loss->grad[0] += T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

  std::size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
};

// ---------------------------------------------------------------------------
// Row kernels. The incremental generation path reuses these so its arithmetic
// is bit-identical to the tape forward pass.
// ---------------------------------------------------------------------------

namespace rowk {

// out[j] += sum_k a[k] * b[k*cols + j]; k-ascending accumulation per element.
template <class T>
void matvec_rowmajor(const T* a, const T* b, std::size_t k_dim, std::size_t cols, T* out) {
  for (std::size_t k = 0; k < k_dim; ++k) {
    const T av = a[k];
    const T* brow = b + k * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += av * brow[j];
  }
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// In-place softmax over n entries with max-subtraction; -inf maps to exact 0.
// Returns false when every entry is -inf (row is zeroed).
template <class T>
bool softmax_row(T* x, std::size_t n) {
  T m = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > m) m = x[i];
  if (!(m > -std::numeric_limits<T>::infinity())) {
    for (std::size_t i = 0; i < n; ++i) x[i] = T(0);
    return false;
  }
  T sum = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - m);
    sum += x[i];
  }
  for (std::size_t i = 0; i < n; ++i) x[i] /= sum;
  return true;
}

template <class T>
void layernorm_row(const T* x, std::size_t d, T eps, const T* gain, const T* bias, T* out) {
  T mean = T(0);
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<T>(d);
  T var = T(0);
  for (std::size_t i = 0; i < d; ++i) {
    const T c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<T>(d);
  const T rstd = T(1) / std::sqrt(var + eps);
  for (std::size_t i = 0; i < d; ++i) out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
}

template <class T>
T gelu_scalar(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <class T>
T row_l2_norm(const T* x, std::size_t d) {
  T acc = T(0);
  for (std::size_t i = 0; i < d; ++i) acc += x[i] * x[i];
  return std::sqrt(acc);
}

}  // namespace rowk

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void require_2d(const Tensor<T>& t, const char* op) {
  if (t->shape.size() != 2)
    throw ValidationError(std::string(op) + ": expected 2-d tensor, got shape " + shape_str(t->shape));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a->shape != b->shape)
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                          shape_str(b->shape));
}

}  // namespace detail

template <class T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  if (b->shape[0] != k)
    throw ValidationError("matmul: inner dimensions disagree, " + detail::shape_str(a->shape) + " vs " +
                          detail::shape_str(b->shape));
  auto out = tensor<T>({m, n}, a->requires_grad || b->requires_grad);
  for (std::size_t i = 0; i < m; ++i)
    rowk::matvec_rowmajor(a->value.data() + i * k, b->value.data(), k, n, out->value.data() + i * n);
  if (out->requires_grad) {
    const bool ga = a->requires_grad, gb = b->requires_grad;
    if (ga) a->ensure_grad();
    if (gb) b->ensure_grad();
    out->ensure_grad();
    tape.record([a, b, out, m, k, n, ga, gb] {
      const T* g = out->grad.data();
      if (ga) {  // grad_a += g . b^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t kk = 0; kk < k; ++kk)
            a->grad[i * k + kk] += rowk::dot(g + i * n, b->value.data() + kk * n, n);
      }
      if (gb) {  // grad_b += a^T . g
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = a->value[i * k + kk];
            for (std::size_t j = 0; j < n; ++j) b->grad[kk * n + j] += av * g[i * n + j];
          }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> transpose(Tape<T>& tape, const Tensor<T>& a) {
  detail::require_2d(a, "transpose");
  const std::size_t m = a->shape[0], n = a->shape[1];
  auto out = tensor<T>({n, m}, a->requires_grad);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->value[j * m + i] = a->value[i * n + j];
  if (out->requires_grad) {
    a->ensure_grad();
    out->ensure_grad();
    tape.record([a, out, m, n] {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) a->grad[i * n + j] += out->grad[j * m + i];
    });
  }
  return out;
}

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  auto out = tensor<T>(a->shape, a->requires_grad || b->requires_grad);
  for (std::size_t i = 0; i < a->numel(); ++i) out->value[i] = a->value[i] + b->value[i];
  if (out->requires_grad) {
    const bool ga = a->requires_grad, gb = b->requires_grad;
    if (ga) a->ensure_grad();
    if (gb) b->ensure_grad();
    out->ensure_grad();
    tape.record([a, b, out, ga, gb] {
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        if (ga) a->grad[i] += out->grad[i];
        if (gb) b->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  auto out = tensor<T>(a->shape, a->requires_grad || b->requires_grad);
  for (std::size_t i = 0; i < a->numel(); ++i) out->value[i] = a->value[i] - b->value[i];
  if (out->requires_grad) {
    const bool ga = a->requires_grad, gb = b->requires_grad;
    if (ga) a->ensure_grad();
    if (gb) b->ensure_grad();
    out->ensure_grad();
    tape.record([a, b, out, ga, gb] {
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        if (ga) a->grad[i] += out->grad[i];
        if (gb) b->grad[i] -= out->grad[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  auto out = tensor<T>(a->shape, a->requires_grad || b->requires_grad);
  for (std::size_t i = 0; i < a->numel(); ++i) out->value[i] = a->value[i] * b->value[i];
  if (out->requires_grad) {
    const bool ga = a->requires_grad, gb = b->requires_grad;
    if (ga) a->ensure_grad();
    if (gb) b->ensure_grad();
    out->ensure_grad();
    tape.record([a, b, out, ga, gb] {
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        if (ga) a->grad[i] += out->grad[i] * b->value[i];
        if (gb) b->grad[i] += out->grad[i] * a->value[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T c) {
  auto out = tensor<T>(a->shape, a->requires_grad);
  for (std::size_t i = 0; i < a->numel(); ++i) out->value[i] = a->value[i] * c;
  if (out->requires_grad) {
    a->ensure_grad();
    out->ensure_grad();
    tape.record([a, out, c] {
      for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i] * c;
    });
  }
  return out;
}

// x: R x d, v: length-d vector broadcast across rows.
template <class T>
Tensor<T> add_rowvec(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& v) {
  detail::require_2d(x, "add_rowvec");
  const std::size_t r = x->shape[0], d = x->shape[1];
  if (v->numel() != d)
    throw ValidationError("add_rowvec: vector length " + std::to_string(v->numel()) + " vs row width " +
                          std::to_string(d));
  auto out = tensor<T>(x->shape, x->requires_grad || v->requires_grad);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < d; ++j) out->value[i * d + j] = x->value[i * d + j] + v->value[j];
  if (out->requires_grad) {
    const bool gx = x->requires_grad, gv = v->requires_grad;
    if (gx) x->ensure_grad();
    if (gv) v->ensure_grad();
    out->ensure_grad();
    tape.record([x, v, out, r, d, gx, gv] {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          if (gx) x->grad[i * d + j] += out->grad[i * d + j];
          if (gv) v->grad[j] += out->grad[i * d + j];
        }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul_rowvec(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& v) {
  detail::require_2d(x, "mul_rowvec");
  const std::size_t r = x->shape[0], d = x->shape[1];
  if (v->numel() != d)
    throw ValidationError("mul_rowvec: vector length " + std::to_string(v->numel()) + " vs row width " +
                          std::to_string(d));
  auto out = tensor<T>(x->shape, x->requires_grad || v->requires_grad);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < d; ++j) out->value[i * d + j] = x->value[i * d + j] * v->value[j];
  if (out->requires_grad) {
    const bool gx = x->requires_grad, gv = v->requires_grad;
    if (gx) x->ensure_grad();
    if (gv) v->ensure_grad();
    out->ensure_grad();
    tape.record([x, v, out, r, d, gx, gv] {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          if (gx) x->grad[i * d + j] += out->grad[i * d + j] * v->value[j];
          if (gv) v->grad[j] += out->grad[i * d + j] * x->value[i * d + j];
        }
    });
  }
  return out;
}

template <class T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x) {
  auto out = tensor<T>(x->shape, x->requires_grad);
  for (std::size_t i = 0; i < x->numel(); ++i) out->value[i] = rowk::gelu_scalar(x->value[i]);
  if (out->requires_grad) {
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out] {
      constexpr T kInvSqrt2 = T(0.70710678118654752440);
      constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        const T v = x->value[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
        const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
        x->grad[i] += out->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

// Softmax along `axis` (negative counts from the end). Max-subtracted; -inf
// entries map to exactly 0. A lane that is entirely -inf becomes all zeros and
// raises a warning (malformed mask).
template <class T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, int axis = -1) {
  const int nd = static_cast<int>(x->shape.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw ValidationError("softmax: axis out of range");
  const std::size_t n = x->shape[axis];
  std::size_t inner = 1, outer = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= x->shape[i];
  for (int i = 0; i < axis; ++i) outer *= x->shape[i];

  auto out = tensor<T>(x->shape, x->requires_grad);
  bool malformed = false;
  std::vector<T> lane(n);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      for (std::size_t i = 0; i < n; ++i) lane[i] = x->value[base + i * inner];
      if (!rowk::softmax_row(lane.data(), n)) malformed = true;
      for (std::size_t i = 0; i < n; ++i) out->value[base + i * inner] = lane[i];
    }
  if (malformed) warn("softmax: lane with every entry -inf, emitting zero row");

  if (out->requires_grad) {
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out, n, inner, outer] {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          T dotgy = T(0);
          for (std::size_t i = 0; i < n; ++i) dotgy += out->grad[base + i * inner] * out->value[base + i * inner];
          for (std::size_t i = 0; i < n; ++i) {
            const T y = out->value[base + i * inner];
            x->grad[base + i * inner] += y * (out->grad[base + i * inner] - dotgy);
          }
        }
    });
  }
  return out;
}

// Per-last-axis standardization followed by affine. x: R x d (rows = lanes).
template <class T>
Tensor<T> layernorm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  detail::require_2d(x, "layernorm");
  if (!(eps > T(0))) throw ValidationError("layernorm: eps must be positive");
  const std::size_t r = x->shape[0], d = x->shape[1];
  if (gain->numel() != d || bias->numel() != d)
    throw ValidationError("layernorm: gain/bias length mismatch with width " + std::to_string(d));
  auto out = tensor<T>(x->shape, x->requires_grad || gain->requires_grad || bias->requires_grad);
  for (std::size_t i = 0; i < r; ++i)
    rowk::layernorm_row(x->value.data() + i * d, d, eps, gain->value.data(), bias->value.data(),
                        out->value.data() + i * d);
  if (out->requires_grad) {
    const bool gx = x->requires_grad, gg = gain->requires_grad, gb = bias->requires_grad;
    if (gx) x->ensure_grad();
    if (gg) gain->ensure_grad();
    if (gb) bias->ensure_grad();
    out->ensure_grad();
    tape.record([x, gain, bias, out, r, d, eps, gx, gg, gb] {
      std::vector<T> xhat(d), gy(d);
      for (std::size_t i = 0; i < r; ++i) {
        const T* xr = x->value.data() + i * d;
        T mean = T(0);
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (std::size_t j = 0; j < d; ++j) {
          const T c = xr[j] - mean;
          var += c * c;
        }
        var /= static_cast<T>(d);
        const T rstd = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
          xhat[j] = (xr[j] - mean) * rstd;
          gy[j] = out->grad[i * d + j];
        }
        if (gg || gb)
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gain->grad[j] += gy[j] * xhat[j];
            if (gb) bias->grad[j] += gy[j];
          }
        if (gx) {
          T sum_g = T(0), sum_gx = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            const T gj = gy[j] * gain->value[j];
            sum_g += gj;
            sum_gx += gj * xhat[j];
          }
          const T inv_d = T(1) / static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T gj = gy[j] * gain->value[j];
            x->grad[i * d + j] += rstd * (gj - inv_d * sum_g - xhat[j] * inv_d * sum_gx);
          }
        }
      }
    });
  }
  return out;
}

// Mean-over-elements Huber loss.
template <class T>
Tensor<T> huber(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target, T delta) {
  detail::require_same_shape(pred, target, "huber");
  if (!(delta > T(0))) throw ValidationError("huber: delta must be positive");
  const std::size_t n = pred->numel();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T e = pred->value[i] - target->value[i];
    const T ae = std::abs(e);
    acc += ae <= delta ? T(0.5) * e * e : delta * (ae - T(0.5) * delta);
  }
  auto out = scalar_tensor<T>(acc / static_cast<T>(n), pred->requires_grad || target->requires_grad);
  if (out->requires_grad) {
    const bool gp = pred->requires_grad, gt = target->requires_grad;
    if (gp) pred->ensure_grad();
    if (gt) target->ensure_grad();
    out->ensure_grad();
    tape.record([pred, target, out, delta, n, gp, gt] {
      const T g = out->grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T e = pred->value[i] - target->value[i];
        const T de = std::abs(e) <= delta ? e : (e > T(0) ? delta : -delta);
        if (gp) pred->grad[i] += g * de;
        if (gt) target->grad[i] -= g * de;
      }
    });
  }
  return out;
}

// Mean squared error; the squared-L2 terms of the quantizer objective use it.
template <class T>
Tensor<T> mse(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mse");
  const std::size_t n = a->numel();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T e = a->value[i] - b->value[i];
    acc += e * e;
  }
  auto out = scalar_tensor<T>(acc / static_cast<T>(n), a->requires_grad || b->requires_grad);
  if (out->requires_grad) {
    const bool ga = a->requires_grad, gb = b->requires_grad;
    if (ga) a->ensure_grad();
    if (gb) b->ensure_grad();
    out->ensure_grad();
    tape.record([a, b, out, n, ga, gb] {
      const T g = T(2) * out->grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T e = a->value[i] - b->value[i];
        if (ga) a->grad[i] += g * e;
        if (gb) b->grad[i] -= g * e;
      }
    });
  }
  return out;
}

// Mean negative log-likelihood of integer targets under row-wise log-softmax.
template <class T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, const std::vector<int>& targets) {
  detail::require_2d(logits, "cross_entropy");
  const std::size_t rows = logits->shape[0], v = logits->shape[1];
  if (targets.size() != rows)
    throw ValidationError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                          std::to_string(rows) + " logit rows");
  for (std::size_t t = 0; t < rows; ++t)
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= v)
      throw ValidationError("cross_entropy: target " + std::to_string(targets[t]) + " at position " +
                            std::to_string(t) + " out of range [0," + std::to_string(v) + ")");
  T acc = T(0);
  for (std::size_t t = 0; t < rows; ++t) {
    const T* row = logits->value.data() + t * v;
    T m = row[0];
    for (std::size_t j = 1; j < v; ++j)
      if (row[j] > m) m = row[j];
    T sum = T(0);
    for (std::size_t j = 0; j < v; ++j) sum += std::exp(row[j] - m);
    acc += (m + std::log(sum)) - row[targets[t]];
  }
  auto out = scalar_tensor<T>(acc / static_cast<T>(rows), logits->requires_grad);
  if (out->requires_grad) {
    logits->ensure_grad();
    out->ensure_grad();
    tape.record([logits, out, targets, rows, v] {
      const T g = out->grad[0] / static_cast<T>(rows);
      std::vector<T> p(v);
      for (std::size_t t = 0; t < rows; ++t) {
        const T* row = logits->value.data() + t * v;
        for (std::size_t j = 0; j < v; ++j) p[j] = row[j];
        rowk::softmax_row(p.data(), v);
        for (std::size_t j = 0; j < v; ++j)
          logits->grad[t * v + j] += g * (p[j] - (static_cast<std::size_t>(targets[t]) == j ? T(1) : T(0)));
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x->value) acc += v;
  auto out = scalar_tensor<T>(acc, x->requires_grad);
  if (out->requires_grad) {
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out] {
      for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += out->grad[0];
    });
  }
  return out;
}

template <class T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x->value) acc += v;
  const std::size_t n = x->numel();
  auto out = scalar_tensor<T>(acc / static_cast<T>(n), x->requires_grad);
  if (out->requires_grad) {
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out, n] {
      const T g = out->grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
    });
  }
  return out;
}

// Embedding lookup: out[i] = table[idx[i]]. Backward scatter-adds.
template <class T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& table, const std::vector<int>& idx) {
  detail::require_2d(table, "gather_rows");
  const std::size_t n = table->shape[0], d = table->shape[1];
  for (std::size_t i = 0; i < idx.size(); ++i)
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= n)
      throw ValidationError("gather_rows: index " + std::to_string(idx[i]) + " at position " + std::to_string(i) +
                            " out of range [0," + std::to_string(n) + ")");
  auto out = tensor<T>({idx.size(), d}, table->requires_grad);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out->value[i * d + j] = table->value[idx[i] * d + j];
  if (out->requires_grad) {
    table->ensure_grad();
    out->ensure_grad();
    tape.record([table, out, idx, d] {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) table->grad[idx[i] * d + j] += out->grad[i * d + j];
    });
  }
  return out;
}

template <class T>
Tensor<T> slice_cols(Tape<T>& tape, const Tensor<T>& x, std::size_t c0, std::size_t c1) {
  detail::require_2d(x, "slice_cols");
  const std::size_t r = x->shape[0], d = x->shape[1];
  if (c0 >= c1 || c1 > d) throw ValidationError("slice_cols: bad column range");
  const std::size_t w = c1 - c0;
  auto out = tensor<T>({r, w}, x->requires_grad);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out->value[i * w + j] = x->value[i * d + c0 + j];
  if (out->requires_grad) {
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out, r, d, c0, w] {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) x->grad[i * d + c0 + j] += out->grad[i * w + j];
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_cols(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no parts");
  const std::size_t r = parts[0]->shape[0];
  std::size_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_cols");
    if (p->shape[0] != r) throw ValidationError("concat_cols: row count mismatch");
    total += p->shape[1];
    rg = rg || p->requires_grad;
  }
  auto out = tensor<T>({r, total}, rg);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p->shape[1];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out->value[i * total + off + j] = p->value[i * w + j];
    off += w;
  }
  if (rg) {
    for (const auto& p : parts)
      if (p->requires_grad) p->ensure_grad();
    out->ensure_grad();
    tape.record([parts, out, r, total] {
      std::size_t off2 = 0;
      for (const auto& p : parts) {
        const std::size_t w = p->shape[1];
        if (p->requires_grad)
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) p->grad[i * w + j] += out->grad[i * total + off2 + j];
        off2 += w;
      }
    });
  }
  return out;
}

// Value copy with no gradient flow (stop-gradient).
template <class T>
Tensor<T> detach(const Tensor<T>& x) {
  auto out = tensor<T>(x->shape, false);
  out->value = x->value;
  return out;
}

template <class T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, std::vector<std::size_t> shape) {
  if (detail::shape_numel(shape) != x->numel())
    throw ValidationError("reshape: cannot view " + detail::shape_str(x->shape) + " as " +
                          detail::shape_str(shape));
  auto out = tensor<T>(std::move(shape), x->requires_grad);
  out->value = x->value;
  if (out->requires_grad) {
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out] {
      for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

// Rows scaled to unit L2 norm; rows with norm below `floor` pass through as
// zeros (treated as locally constant, zero gradient).
template <class T>
Tensor<T> row_l2_normalize(Tape<T>& tape, const Tensor<T>& x, T floor = T(1e-8)) {
  detail::require_2d(x, "row_l2_normalize");
  const std::size_t r = x->shape[0], d = x->shape[1];
  auto out = tensor<T>(x->shape, x->requires_grad);
  std::vector<T> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T nrm = rowk::row_l2_norm(x->value.data() + i * d, d);
    norms[i] = nrm;
    if (nrm < floor) {
      for (std::size_t j = 0; j < d; ++j) out->value[i * d + j] = T(0);
    } else {
      for (std::size_t j = 0; j < d; ++j) out->value[i * d + j] = x->value[i * d + j] / nrm;
    }
  }
  if (out->requires_grad) {
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out, norms, r, d, floor] {
      for (std::size_t i = 0; i < r; ++i) {
        if (norms[i] < floor) continue;
        const T inv = T(1) / norms[i];
        T gdoty = T(0);
        for (std::size_t j = 0; j < d; ++j) gdoty += out->grad[i * d + j] * out->value[i * d + j];
        for (std::size_t j = 0; j < d; ++j)
          x->grad[i * d + j] += inv * (out->grad[i * d + j] - out->value[i * d + j] * gdoty);
      }
    });
  }
  return out;
}

}  // namespace motionseq
