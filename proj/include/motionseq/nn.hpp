#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "motionseq/tensor.hpp"

namespace motionseq {

template <class T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <class T>
struct Linear {
  Tensor<T> w;  // in x out
  Tensor<T> b;  // out

  void init(Rng& rng, std::size_t in, std::size_t out, T w_std = T(0.02), T b_init = T(0)) {
    w = randn<T>(rng, {in, out}, w_std, true);
    b = tensor<T>({out}, true);
    for (auto& v : b->value) v = b_init;
  }

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const {
    return add_rowvec(tape, matmul(tape, x, w), b);
  }

  void collect(NamedParams<T>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

template <class T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;
  T eps = T(1e-5);

  void init(std::size_t d) {
    gain = tensor<T>({d}, true);
    for (auto& v : gain->value) v = T(1);
    bias = tensor<T>({d}, true);
  }

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const {
    return layernorm(tape, x, gain, bias, eps);
  }

  void collect(NamedParams<T>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
  }
};

// Head slopes m_i = 2^(-8i/n) for i = 1..n.
template <class T>
std::vector<T> alibi_slopes(std::size_t n_heads) {
  std::vector<T> m(n_heads);
  for (std::size_t i = 0; i < n_heads; ++i)
    m[i] = static_cast<T>(std::exp2(-8.0 * static_cast<double>(i + 1) / static_cast<double>(n_heads)));
  return m;
}

// Self-attention bias for one head: -slope*(i-j) on and below the diagonal,
// -inf above it (future positions).
template <class T>
Tensor<T> causal_alibi_bias(std::size_t len, T slope) {
  auto b = tensor<T>({len, len});
  const T ninf = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < len; ++j)
      b->value[i * len + j] = j <= i ? -slope * static_cast<T>(i - j) : ninf;
  return b;
}

// Bidirectional variant penalizing distance in both directions: -slope*|i-j|.
template <class T>
Tensor<T> symmetric_alibi_bias(std::size_t len, T slope) {
  auto b = tensor<T>({len, len});
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < len; ++j) {
      const std::size_t d = i > j ? i - j : j - i;
      b->value[i * len + j] = -slope * static_cast<T>(d);
    }
  return b;
}

// Cross-attention mask: query row i may attend conditioning rows j <= i.
template <class T>
Tensor<T> prefix_bias(std::size_t rows, std::size_t cols) {
  auto b = tensor<T>({rows, cols});
  const T ninf = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) b->value[i * cols + j] = j <= i ? T(0) : ninf;
  return b;
}

// Fixed sin/cos position encoding, used by the absolute-position ablation.
template <class T>
Tensor<T> sinusoidal_pe(std::size_t len, std::size_t d) {
  auto pe = tensor<T>({len, d});
  for (std::size_t pos = 0; pos < len; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      pe->value[pos * d + i] = static_cast<T>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

// Multi-head attention over row-major sequences. Queries come from x_q
// (rows x d_model); keys and values from x_kv (rows_kv x d_kv_in). head_bias
// supplies one additive logit-bias matrix per head, or a single matrix shared
// by every head.
template <class T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  std::size_t n_heads = 1;
  std::size_t d_model = 0;
  std::size_t d_head = 0;

  void init(Rng& rng, std::size_t d_model_, std::size_t d_kv_in, std::size_t n_heads_) {
    if (n_heads_ == 0 || d_model_ % n_heads_ != 0)
      throw ValidationError("attention: model width " + std::to_string(d_model_) +
                            " not divisible by head count " + std::to_string(n_heads_));
    d_model = d_model_;
    n_heads = n_heads_;
    d_head = d_model_ / n_heads_;
    wq.init(rng, d_model, d_model);
    wk.init(rng, d_kv_in, d_model);
    wv.init(rng, d_kv_in, d_model);
    wo.init(rng, d_model, d_model);
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x_q, const Tensor<T>& x_kv,
                    const std::vector<Tensor<T>>& head_bias) const {
    if (head_bias.size() != 1 && head_bias.size() != n_heads)
      throw ValidationError("attention: need 1 or n_heads bias matrices, got " +
                            std::to_string(head_bias.size()));
    auto q = wq(tape, x_q);
    auto k = wk(tape, x_kv);
    auto v = wv(tape, x_kv);
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(d_head));
    std::vector<Tensor<T>> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
      auto qh = slice_cols(tape, q, h * d_head, (h + 1) * d_head);
      auto kh = slice_cols(tape, k, h * d_head, (h + 1) * d_head);
      auto vh = slice_cols(tape, v, h * d_head, (h + 1) * d_head);
      auto logits = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
      const auto& bias = head_bias[head_bias.size() == 1 ? 0 : h];
      auto weights = softmax(tape, add(tape, logits, bias), -1);
      heads.push_back(matmul(tape, weights, vh));
    }
    auto merged = n_heads == 1 ? heads[0] : concat_cols(tape, heads);
    return wo(tape, merged);
  }

  void collect(NamedParams<T>& out, const std::string& prefix) const {
    wq.collect(out, prefix + ".wq");
    wk.collect(out, prefix + ".wk");
    wv.collect(out, prefix + ".wv");
    wo.collect(out, prefix + ".wo");
  }
};

// Position-wise feed-forward: expand, GELU, contract.
template <class T>
struct FeedForward {
  Linear<T> up, down;

  void init(Rng& rng, std::size_t d, std::size_t hidden) {
    up.init(rng, d, hidden);
    down.init(rng, hidden, d);
  }

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const {
    return down(tape, gelu(tape, up(tape, x)));
  }

  void collect(NamedParams<T>& out, const std::string& prefix) const {
    up.collect(out, prefix + ".up");
    down.collect(out, prefix + ".down");
  }
};

}  // namespace motionseq
