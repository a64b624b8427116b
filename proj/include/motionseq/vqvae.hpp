#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "motionseq/motion.hpp"
#include "motionseq/nn.hpp"
#include "motionseq/optim.hpp"
#include "motionseq/tensor.hpp"

namespace motionseq {

template <class T>
struct VqVaeConfig {
  std::size_t d_h = 64;
  std::size_t d_c = 32;  // latent width; the encoder/decoder transformers run at this width
  std::size_t codebook_size = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t stride = 1;  // frames per token; 1 keeps one latent per frame
  T beta = T(0.2);
  bool ema = true;
  T ema_decay = T(0.99);
  T ema_eps = T(1e-5);
  bool restarts = true;
  std::uint64_t stale_after = 256;
  bool kmeans = true;
  std::size_t kmeans_iters = 10;
  float fps = 20.0f;
};

template <class T>
struct Codebook {
  Tensor<T> entries;                     // K x d_c
  std::vector<T> cluster_size;           // EMA counts, K
  std::vector<T> embed_sum;              // EMA latent sums, K*d_c
  std::vector<std::uint64_t> usage_age;  // steps since an entry was last assigned

  std::size_t size() const { return entries ? entries->shape[0] : 0; }
  std::size_t dim() const { return entries ? entries->shape[1] : 0; }
};

// Pre-norm residual block: x += attn(ln1 x); x += ffn(ln2 x).
template <class T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  FeedForward<T> ffn;

  void init(Rng& rng, std::size_t width, std::size_t heads, std::size_t ffn_mult) {
    ln1.init(width);
    ln2.init(width);
    attn.init(rng, width, width, heads);
    ffn.init(rng, width, width * ffn_mult);
  }

  Tensor<T> forward(Tape<T>& tape, Tensor<T> x, const std::vector<Tensor<T>>& head_bias) const {
    auto normed = ln1(tape, x);
    x = add(tape, x, attn.forward(tape, normed, normed, head_bias));
    x = add(tape, x, ffn(tape, ln2(tape, x)));
    return x;
  }

  void collect(NamedParams<T>& out, const std::string& prefix) const {
    ln1.collect(out, prefix + ".ln1");
    ln2.collect(out, prefix + ".ln2");
    attn.collect(out, prefix + ".attn");
    ffn.collect(out, prefix + ".ffn");
  }
};

template <class T>
struct VqVae {
  VqVaeConfig<T> cfg;
  Linear<T> enc_in, enc_out, dec_in, dec_out;
  std::vector<TransformerBlock<T>> enc_blocks, dec_blocks;
  LayerNorm<T> enc_ln, dec_ln;
  Codebook<T> codebook;
  ChannelStats norm;  // channel statistics the model was trained with

  void init(Rng& rng) {
    if (cfg.codebook_size < 2) throw ValidationError("vqvae: codebook needs at least 2 entries");
    enc_in.init(rng, cfg.d_h, cfg.d_c);
    enc_out.init(rng, cfg.d_c, cfg.d_c);
    dec_in.init(rng, cfg.d_c, cfg.d_c);
    dec_out.init(rng, cfg.d_c, cfg.d_h);
    enc_blocks.assign(cfg.layers, {});
    dec_blocks.assign(cfg.layers, {});
    for (auto& b : enc_blocks) b.init(rng, cfg.d_c, cfg.heads, cfg.ffn_mult);
    for (auto& b : dec_blocks) b.init(rng, cfg.d_c, cfg.heads, cfg.ffn_mult);
    enc_ln.init(cfg.d_c);
    dec_ln.init(cfg.d_c);
    codebook.entries = randn<T>(rng, {cfg.codebook_size, cfg.d_c}, T(0.02), !cfg.ema);
    codebook.cluster_size.assign(cfg.codebook_size, T(0));
    codebook.embed_sum.assign(cfg.codebook_size * cfg.d_c, T(0));
    codebook.usage_age.assign(cfg.codebook_size, 0);
    norm.mean.assign(cfg.d_h, 0.0f);
    norm.stdev.assign(cfg.d_h, 1.0f);
  }

  // x: T x d_h in normalized space -> latents ceil(T/stride) x d_c.
  Tensor<T> encode_latents(Tape<T>& tape, Tensor<T> x) const {
    if (x->shape.size() != 2 || x->shape[1] != cfg.d_h)
      throw ValidationError("encode: expected T x " + std::to_string(cfg.d_h) + " input");
    const std::size_t len = x->shape[0];
    auto slopes = alibi_slopes<T>(cfg.heads);
    std::vector<Tensor<T>> bias;
    bias.reserve(cfg.heads);
    for (T m : slopes) bias.push_back(symmetric_alibi_bias<T>(len, m));
    auto h = enc_in(tape, x);
    for (const auto& blk : enc_blocks) h = blk.forward(tape, h, bias);
    h = enc_out(tape, enc_ln(tape, h));
    if (cfg.stride > 1) h = matmul(tape, pool_matrix(len), h);
    return h;
  }

  // z_q: N x d_c -> frames N*stride x d_h in normalized space.
  Tensor<T> decode_latents(Tape<T>& tape, Tensor<T> z_q) const {
    if (z_q->shape.size() != 2 || z_q->shape[1] != cfg.d_c)
      throw ValidationError("decode: expected N x " + std::to_string(cfg.d_c) + " input");
    auto h = z_q;
    if (cfg.stride > 1) h = matmul(tape, repeat_matrix(z_q->shape[0]), h);
    const std::size_t len = h->shape[0];
    auto slopes = alibi_slopes<T>(cfg.heads);
    std::vector<Tensor<T>> bias;
    bias.reserve(cfg.heads);
    for (T m : slopes) bias.push_back(causal_alibi_bias<T>(len, m));
    h = dec_in(tape, h);
    for (const auto& blk : dec_blocks) h = blk.forward(tape, h, bias);
    return dec_out(tape, dec_ln(tape, h));
  }

  NamedParams<T> trainable_params() const {
    NamedParams<T> p;
    enc_in.collect(p, "enc.in");
    for (std::size_t i = 0; i < enc_blocks.size(); ++i)
      enc_blocks[i].collect(p, "enc.blk" + std::to_string(i));
    enc_ln.collect(p, "enc.ln_f");
    enc_out.collect(p, "enc.out");
    dec_in.collect(p, "dec.in");
    for (std::size_t i = 0; i < dec_blocks.size(); ++i)
      dec_blocks[i].collect(p, "dec.blk" + std::to_string(i));
    dec_ln.collect(p, "dec.ln_f");
    dec_out.collect(p, "dec.out");
    if (!cfg.ema) p.emplace_back("codebook.entries", codebook.entries);
    return p;
  }

 private:
  Tensor<T> pool_matrix(std::size_t len) const {
    const std::size_t groups = (len + cfg.stride - 1) / cfg.stride;
    auto p = tensor<T>({groups, len});
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t lo = g * cfg.stride;
      const std::size_t hi = std::min(len, lo + cfg.stride);
      for (std::size_t i = lo; i < hi; ++i) p->value[g * len + i] = T(1) / static_cast<T>(hi - lo);
    }
    return p;
  }

  Tensor<T> repeat_matrix(std::size_t groups) const {
    const std::size_t len = groups * cfg.stride;
    auto r = tensor<T>({len, groups});
    for (std::size_t i = 0; i < len; ++i) r->value[i * groups + i / cfg.stride] = T(1);
    return r;
  }
};

// Nearest codebook entry per latent row; squared-distance ties go to the
// lowest index. Value-level only, no gradients.
template <class T>
std::pair<Tensor<T>, std::vector<int>> quantize(const Tensor<T>& entries, const Tensor<T>& z_e) {
  if (z_e->shape.size() != 2 || entries->shape.size() != 2 || z_e->shape[1] != entries->shape[1])
    throw ValidationError("quantize: latent width does not match codebook entries");
  const std::size_t n = z_e->shape[0], d = z_e->shape[1], k = entries->shape[0];
  std::vector<int> idx(n);
  auto z_q = tensor<T>({n, d});
  for (std::size_t t = 0; t < n; ++t) {
    T best = std::numeric_limits<T>::infinity();
    std::size_t arg = 0;
    for (std::size_t c = 0; c < k; ++c) {
      T dist = T(0);
      for (std::size_t j = 0; j < d; ++j) {
        const T diff = z_e->value[t * d + j] - entries->value[c * d + j];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        arg = c;
      }
    }
    idx[t] = static_cast<int>(arg);
    for (std::size_t j = 0; j < d; ++j) z_q->value[t * d + j] = entries->value[arg * d + j];
  }
  return {z_q, idx};
}

// Quantized latents that forward the quantized values bit-exactly but route
// gradients straight to z_e (identity Jacobian), never to the entries. The
// z_e - sg[z_e] term is exactly zero, so the sum leaves z_q untouched.
template <class T>
Tensor<T> straight_through(Tape<T>& tape, const Tensor<T>& z_e, const Tensor<T>& z_q) {
  detail::require_same_shape(z_e, z_q, "straight_through");
  return add(tape, detach(z_q), sub(tape, z_e, detach(z_e)));
}

template <class T>
struct VqLossParts {
  Tensor<T> total, recon, codebook, commit;
};

// Reconstruction + codebook pull + beta-scaled commitment. In EMA mode the
// codebook term is still reported but kept out of the gradient graph (the
// entries learn through ema_update instead).
template <class T>
VqLossParts<T> vq_loss(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& x_rec, const Tensor<T>& z_e,
                       const Tensor<T>& z_q, T beta, bool ema_mode) {
  if (beta < T(0)) throw ValidationError("vq_loss: beta must be nonnegative");
  VqLossParts<T> parts;
  parts.recon = huber(tape, x_rec, x, T(1));
  parts.commit = mse(tape, z_e, detach(z_q));
  parts.codebook = ema_mode ? mse(tape, detach(z_e), detach(z_q)) : mse(tape, detach(z_e), z_q);
  parts.total = add(tape, add(tape, parts.recon, parts.codebook), scale(tape, parts.commit, beta));
  return parts;
}

// EMA recurrences over the batch assignment, Laplace-smoothed cluster sizes.
template <class T>
void ema_update(Codebook<T>& cb, const Tensor<T>& z_e, const std::vector<int>& indices,
                T decay = T(0.99), T eps = T(1e-5)) {
  const std::size_t k = cb.size(), d = cb.dim(), n = z_e->shape[0];
  if (indices.size() != n) throw ValidationError("ema_update: one index per latent required");
  std::vector<T> count(k, T(0)), sum(k * d, T(0));
  for (std::size_t t = 0; t < n; ++t) {
    const auto c = static_cast<std::size_t>(indices[t]);
    count[c] += T(1);
    for (std::size_t j = 0; j < d; ++j) sum[c * d + j] += z_e->value[t * d + j];
  }
  for (std::size_t c = 0; c < k; ++c) {
    cb.cluster_size[c] = decay * cb.cluster_size[c] + (T(1) - decay) * count[c];
    for (std::size_t j = 0; j < d; ++j) {
      cb.embed_sum[c * d + j] = decay * cb.embed_sum[c * d + j] + (T(1) - decay) * sum[c * d + j];
      cb.entries->value[c * d + j] = cb.embed_sum[c * d + j] / (cb.cluster_size[c] + eps);
    }
  }
}

// Ages every entry one step, zeroing the ones assigned in this batch.
template <class T>
void bump_usage(Codebook<T>& cb, const std::vector<int>& indices) {
  for (auto& age : cb.usage_age) ++age;
  for (int i : indices) cb.usage_age[static_cast<std::size_t>(i)] = 0;
}

// Entries unused for more than stale_after steps teleport onto a random
// latent from the current batch, with accumulators reset to adopt it.
template <class T>
void random_restart(Codebook<T>& cb, const Tensor<T>& z_e, std::uint64_t stale_after, Rng& rng) {
  const std::size_t n = z_e->shape[0], d = cb.dim();
  if (n == 0) throw ValidationError("random_restart: empty batch");
  for (std::size_t c = 0; c < cb.size(); ++c) {
    if (cb.usage_age[c] <= stale_after) continue;
    const std::size_t pick = static_cast<std::size_t>(rng.below(n));
    for (std::size_t j = 0; j < d; ++j) {
      cb.entries->value[c * d + j] = z_e->value[pick * d + j];
      cb.embed_sum[c * d + j] = z_e->value[pick * d + j];
    }
    cb.cluster_size[c] = T(1);
    cb.usage_age[c] = 0;
  }
}

// Lloyd's algorithm with k-means++ seeding; empty clusters reseed from the
// point farthest from its assigned centroid.
template <class T>
void kmeans_init(Codebook<T>& cb, const Tensor<T>& batch, std::size_t iters, Rng& rng) {
  const std::size_t k = cb.size(), d = cb.dim(), n = batch->shape[0];
  if (n == 0) throw ValidationError("kmeans_init: empty batch");
  if (batch->shape[1] != d) throw ValidationError("kmeans_init: latent width mismatch");

  auto sqdist = [&](std::size_t row, const T* center) {
    T acc = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T diff = batch->value[row * d + j] - center[j];
      acc += diff * diff;
    }
    return acc;
  };

  std::vector<T> centers(k * d);
  const std::size_t first = static_cast<std::size_t>(rng.below(n));
  for (std::size_t j = 0; j < d; ++j) centers[j] = batch->value[first * d + j];
  std::vector<T> dist(n);
  for (std::size_t c = 1; c < k; ++c) {
    T total = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      T best = std::numeric_limits<T>::infinity();
      for (std::size_t p = 0; p < c; ++p) best = std::min(best, sqdist(i, centers.data() + p * d));
      dist[i] = best;
      total += best;
    }
    std::size_t pick;
    if (total > T(0)) {
      // D^2-weighted draw; duplicates points when the batch is smaller than K.
      T r = static_cast<T>(rng.uniform()) * total;
      pick = n - 1;
      T acc = T(0);
      for (std::size_t i = 0; i < n; ++i) {
        acc += dist[i];
        if (r < acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng.below(n));
    }
    for (std::size_t j = 0; j < d; ++j) centers[c * d + j] = batch->value[pick * d + j];
  }

  std::vector<std::size_t> assign(n, 0);
  std::vector<T> count(k);
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      T best = std::numeric_limits<T>::infinity();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const T q = sqdist(i, centers.data() + c * d);
        if (q < best) {
          best = q;
          arg = c;
        }
      }
      assign[i] = arg;
    }
    std::fill(count.begin(), count.end(), T(0));
    std::vector<T> acc(k * d, T(0));
    for (std::size_t i = 0; i < n; ++i) {
      count[assign[i]] += T(1);
      for (std::size_t j = 0; j < d; ++j) acc[assign[i] * d + j] += batch->value[i * d + j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > T(0)) {
        for (std::size_t j = 0; j < d; ++j) centers[c * d + j] = acc[c * d + j] / count[c];
      } else {
        std::size_t far = 0;
        T far_d = T(-1);
        for (std::size_t i = 0; i < n; ++i) {
          const T q = sqdist(i, centers.data() + assign[i] * d);
          if (q > far_d) {
            far_d = q;
            far = i;
          }
        }
        for (std::size_t j = 0; j < d; ++j) centers[c * d + j] = batch->value[far * d + j];
      }
    }
  }

  // Final assignment decides the EMA warm start.
  std::fill(count.begin(), count.end(), T(0));
  for (std::size_t i = 0; i < n; ++i) {
    T best = std::numeric_limits<T>::infinity();
    std::size_t arg = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const T q = sqdist(i, centers.data() + c * d);
      if (q < best) {
        best = q;
        arg = c;
      }
    }
    count[arg] += T(1);
  }
  for (std::size_t c = 0; c < k; ++c) {
    const T nc = std::max(count[c], T(1));
    cb.cluster_size[c] = nc;
    for (std::size_t j = 0; j < d; ++j) {
      cb.entries->value[c * d + j] = centers[c * d + j];
      cb.embed_sum[c * d + j] = centers[c * d + j] * nc;
    }
  }
  std::fill(cb.usage_age.begin(), cb.usage_age.end(), 0);
}

template <class T>
struct VqStepStats {
  T total = 0, recon = 0, codebook = 0, commit = 0;
  T usage = 0, perplexity = 0;
};

// One optimizer step over a batch of normalized sequences (each T x d_h).
template <class T>
VqStepStats<T> vqvae_train_step(VqVae<T>& model, AdamW<T>& opt, const std::vector<Tensor<T>>& batch,
                                T lr, Rng& rng) {
  if (batch.empty()) throw ValidationError("vqvae_train_step: empty batch");
  Tape<T> tape;
  const T inv_b = T(1) / static_cast<T>(batch.size());
  Tensor<T> loss;
  VqStepStats<T> stats;
  std::size_t total_latents = 0;
  for (const auto& x : batch) total_latents += (x->shape[0] + model.cfg.stride - 1) / model.cfg.stride;

  auto pool = tensor<T>({total_latents, model.cfg.d_c});
  std::vector<int> pool_idx;
  pool_idx.reserve(total_latents);
  std::size_t cursor = 0;

  for (const auto& x : batch) {
    auto z_e = model.encode_latents(tape, x);
    auto [z_q, idx] = quantize(model.codebook.entries, z_e);
    Tensor<T> z_q_graph = model.cfg.ema ? z_q : gather_rows(tape, model.codebook.entries, idx);
    auto z_st = straight_through(tape, z_e, z_q);
    auto x_rec = model.decode_latents(tape, z_st);
    if (x_rec->shape[0] != x->shape[0]) {
      std::vector<int> keep(x->shape[0]);
      std::iota(keep.begin(), keep.end(), 0);
      x_rec = gather_rows(tape, x_rec, keep);
    }
    auto parts = vq_loss(tape, x, x_rec, z_e, z_q_graph, model.cfg.beta, model.cfg.ema);
    auto contrib = scale(tape, parts.total, inv_b);
    loss = loss ? add(tape, loss, contrib) : contrib;
    stats.total += parts.total->value[0] * inv_b;
    stats.recon += parts.recon->value[0] * inv_b;
    stats.codebook += parts.codebook->value[0] * inv_b;
    stats.commit += parts.commit->value[0] * inv_b;
    std::copy(z_e->value.begin(), z_e->value.end(), pool->value.begin() + cursor * model.cfg.d_c);
    cursor += idx.size();
    pool_idx.insert(pool_idx.end(), idx.begin(), idx.end());
  }

  if (!std::isfinite(stats.total)) throw NumericError("vqvae: non-finite loss");
  tape.backward(loss);
  opt.step(lr);
  opt.zero_grad();

  if (model.cfg.ema)
    ema_update(model.codebook, pool, pool_idx, model.cfg.ema_decay, model.cfg.ema_eps);
  bump_usage(model.codebook, pool_idx);
  if (model.cfg.restarts) random_restart(model.codebook, pool, model.cfg.stale_after, rng);

  std::vector<T> histogram(model.codebook.size(), T(0));
  for (int i : pool_idx) histogram[static_cast<std::size_t>(i)] += T(1);
  std::size_t used = 0;
  T entropy = T(0);
  for (T c : histogram) {
    if (c > T(0)) {
      ++used;
      const T p = c / static_cast<T>(total_latents);
      entropy -= p * std::log(p);
    }
  }
  stats.usage = static_cast<T>(used) / static_cast<T>(model.codebook.size());
  stats.perplexity = std::exp(entropy);
  return stats;
}

// ---------------------------------------------------------------------------
// Token-level interface
// ---------------------------------------------------------------------------

template <class T>
int eos_token(const VqVae<T>& model) {
  return static_cast<int>(model.cfg.codebook_size);
}

// Raw-space motion in, token indices out (appends EOS on request).
template <class T>
std::vector<int> tokenize(const VqVae<T>& model, const MotionSequence& raw, bool append_eos = false) {
  if (raw.width() != model.cfg.d_h)
    throw ValidationError("tokenize: motion has " + std::to_string(raw.width()) +
                          " channels, model expects " + std::to_string(model.cfg.d_h));
  const MotionSequence normed = normalize(raw, model.norm);
  auto x = tensor<T>({normed.length(), normed.width()});
  for (std::size_t i = 0; i < x->numel(); ++i) x->value[i] = static_cast<T>(normed.frames.data[i]);
  Tape<T> tape;
  auto z_e = model.encode_latents(tape, x);
  auto [z_q, idx] = quantize(model.codebook.entries, z_e);
  (void)z_q;
  if (append_eos) idx.push_back(eos_token(model));
  return idx;
}

// Tokens in, raw-space motion out. EOS may appear once, at the end only.
template <class T>
MotionSequence detokenize(const VqVae<T>& model, const std::vector<int>& tokens,
                          const std::string& name = "generated") {
  std::vector<int> idx = tokens;
  if (!idx.empty() && idx.back() == eos_token(model)) idx.pop_back();
  if (idx.empty()) throw ValidationError("detokenize: no motion tokens");
  for (std::size_t i = 0; i < idx.size(); ++i)
    if (idx[i] < 0 || idx[i] >= static_cast<int>(model.cfg.codebook_size))
      throw ValidationError("detokenize: token " + std::to_string(idx[i]) + " at position " +
                            std::to_string(i) + " outside codebook");

  Tape<T> tape;
  auto z_q = gather_rows(tape, model.codebook.entries, idx);
  auto frames = model.decode_latents(tape, z_q);

  MotionSequence out;
  out.name = name;
  out.frames = make_frames(frames->shape[0], frames->shape[1], model.cfg.fps);
  for (std::size_t i = 0; i < frames->numel(); ++i)
    out.frames.data[i] = static_cast<float>(frames->value[i]);
  return denormalize(out, model.norm);
}

}  // namespace motionseq
