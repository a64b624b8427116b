#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "motionseq/matio.hpp"
#include "motionseq/nn.hpp"
#include "motionseq/optim.hpp"
#include "motionseq/tensor.hpp"

namespace motionseq {

using TokenSequence = std::vector<int>;

template <class T>
struct DecoderConfig {
  std::size_t codebook_size = 64;  // vocabulary is codebook_size + 1 (EOS)
  std::size_t d_k = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t d_a = 35;   // conditioning feature width
  std::size_t d_s = 512;  // style embedding width
  bool style = false;
  bool alibi = true;  // false: sinusoidal encodings added to the layer-0 input
  float fps = 20.0f;

  std::size_t vocab() const { return codebook_size + 1; }
};

// Causal self-attention, music cross-attention, optional style modulation,
// position-wise feed-forward, each behind its own pre-norm.
template <class T>
struct DecoderLayer {
  LayerNorm<T> ln1, ln2, ln3;
  MultiHeadAttention<T> self_attn, cross_attn;
  Linear<T> style_proj;
  FeedForward<T> ffn;

  void init(Rng& rng, const DecoderConfig<T>& cfg) {
    ln1.init(cfg.d_k);
    ln2.init(cfg.d_k);
    ln3.init(cfg.d_k);
    self_attn.init(rng, cfg.d_k, cfg.d_k, cfg.heads);
    cross_attn.init(rng, cfg.d_k, cfg.d_k, cfg.heads);
    if (cfg.style) style_proj.init(rng, cfg.d_s, cfg.d_k);
    ffn.init(rng, cfg.d_k, cfg.d_k * cfg.ffn_mult);
  }

  void collect(NamedParams<T>& out, const std::string& prefix, bool style) const {
    ln1.collect(out, prefix + ".ln1");
    ln2.collect(out, prefix + ".ln2");
    ln3.collect(out, prefix + ".ln3");
    self_attn.collect(out, prefix + ".self");
    cross_attn.collect(out, prefix + ".cross");
    if (style) style_proj.collect(out, prefix + ".style");
    ffn.collect(out, prefix + ".ffn");
  }
};

template <class T>
struct DecoderModel {
  DecoderConfig<T> cfg;
  Tensor<T> embed;      // vocab x d_k
  Linear<T> cond_proj;  // d_a -> d_k, shared across layers
  std::vector<DecoderLayer<T>> layers;
  LayerNorm<T> ln_f;
  Linear<T> head;  // d_k -> vocab

  void init(Rng& rng) {
    if (cfg.codebook_size < 1) throw ValidationError("decoder: empty codebook");
    embed = randn<T>(rng, {cfg.vocab(), cfg.d_k}, T(0.02), true);
    embed->label = "embed";
    cond_proj.init(rng, cfg.d_a, cfg.d_k);
    layers.assign(cfg.layers, {});
    for (auto& l : layers) l.init(rng, cfg);
    ln_f.init(cfg.d_k);
    head.init(rng, cfg.d_k, cfg.vocab());
  }

  int eos() const { return static_cast<int>(cfg.codebook_size); }

  void check_tokens(const TokenSequence& tokens) const {
    if (tokens.empty()) throw ValidationError("decoder: empty token sequence");
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (tokens[i] < 0 || tokens[i] > eos())
        throw ValidationError("decoder: token " + std::to_string(tokens[i]) + " at position " +
                              std::to_string(i) + " outside vocabulary");
  }

  // Logits T x vocab for next-token prediction at every position. cond must
  // cover at least the token length; style must match d_s when the model was
  // built with style support and must be absent otherwise.
  Tensor<T> forward(Tape<T>& tape, const TokenSequence& tokens, const Tensor<T>& cond,
                    const Tensor<T>* style = nullptr) const {
    check_tokens(tokens);
    if (cond->shape.size() != 2 || cond->shape[1] != cfg.d_a)
      throw ValidationError("decoder: conditioning must be T x " + std::to_string(cfg.d_a));
    const std::size_t len = tokens.size();
    if (cond->shape[0] < len)
      throw ValidationError("decoder: conditioning covers " + std::to_string(cond->shape[0]) +
                            " frames for " + std::to_string(len) + " tokens");
    if (style != nullptr && !cfg.style)
      throw ValidationError("decoder: model was built without style support");
    if (style != nullptr && (*style)->numel() != cfg.d_s)
      throw ValidationError("decoder: style embedding must have " + std::to_string(cfg.d_s) +
                            " dimensions");

    auto x = gather_rows(tape, embed, tokens);
    if (!cfg.alibi) x = add(tape, x, sinusoidal_pe<T>(len, cfg.d_k));

    auto slopes = alibi_slopes<T>(cfg.heads);
    std::vector<Tensor<T>> self_bias;
    self_bias.reserve(cfg.heads);
    for (T m : slopes) self_bias.push_back(causal_alibi_bias<T>(len, cfg.alibi ? m : T(0)));
    std::vector<Tensor<T>> cross_bias{prefix_bias<T>(len, cond->shape[0])};

    auto c = cond_proj(tape, cond);
    for (const auto& layer : layers) {
      auto a = layer.ln1(tape, x);
      x = add(tape, x, layer.self_attn.forward(tape, a, a, self_bias));
      x = add(tape, x, layer.cross_attn.forward(tape, layer.ln2(tape, x), c, cross_bias));
      if (style != nullptr) {
        auto gain = layer.style_proj(tape, *style);
        x = mul_rowvec(tape, row_l2_normalize(tape, x), gain);
      }
      x = add(tape, x, layer.ffn(tape, layer.ln3(tape, x)));
    }
    return head(tape, ln_f(tape, x));
  }

  NamedParams<T> params() const {
    NamedParams<T> p;
    p.emplace_back("embed", embed);
    cond_proj.collect(p, "cond_proj");
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].collect(p, "blk" + std::to_string(i), cfg.style);
    ln_f.collect(p, "ln_f");
    head.collect(p, "head");
    return p;
  }
};

// Next-token negative log likelihood: row t of the logits is scored against
// tokens[t+1], with EOS as the final target.
template <class T>
Tensor<T> gpt_loss(Tape<T>& tape, const Tensor<T>& logits, const TokenSequence& tokens) {
  if (tokens.size() < 2) throw ValidationError("gpt_loss: need at least 2 tokens");
  if (logits->shape[0] != tokens.size())
    throw ValidationError("gpt_loss: " + std::to_string(logits->shape[0]) + " logit rows for " +
                          std::to_string(tokens.size()) + " tokens");
  TokenSequence targets(tokens.begin() + 1, tokens.end());
  targets.push_back(static_cast<int>(logits->shape[1]) - 1);
  return cross_entropy(tape, logits, targets);
}

// Fraction of positions whose argmax logit hits the shifted target.
template <class T>
double token_accuracy(const Tensor<T>& logits, const TokenSequence& tokens) {
  if (tokens.size() < 2 || logits->shape[0] != tokens.size())
    throw ValidationError("token_accuracy: logits and tokens disagree");
  const std::size_t v = logits->shape[1];
  std::size_t hits = 0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const int target = t + 1 < tokens.size() ? tokens[t + 1] : static_cast<int>(v) - 1;
    std::size_t arg = 0;
    for (std::size_t j = 1; j < v; ++j)
      if (logits->value[t * v + j] > logits->value[t * v + arg]) arg = j;
    if (static_cast<int>(arg) == target) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(tokens.size());
}

struct SamplerSpec {
  bool greedy = true;
  double temperature = 1.0;  // multinomial only; <= 0 collapses to greedy
};

// Draws one token from a logits row. Greedy breaks ties toward the lowest
// index; multinomial normalizes exp(logit/temperature).
template <class T>
int sample_token(const std::vector<T>& logits, const SamplerSpec& spec, Rng& rng) {
  const std::size_t v = logits.size();
  if (v == 0) throw ValidationError("sample_token: empty logits");
  if (spec.greedy || spec.temperature <= 0.0) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < v; ++j)
      if (logits[j] > logits[arg]) arg = j;
    return static_cast<int>(arg);
  }
  std::vector<double> p(v);
  for (std::size_t j = 0; j < v; ++j) p[j] = static_cast<double>(logits[j]) / spec.temperature;
  if (!rowk::softmax_row(p.data(), v)) throw NumericError("sample_token: degenerate distribution");
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t j = 0; j < v; ++j) {
    acc += p[j];
    if (u < acc) return static_cast<int>(j);
  }
  return static_cast<int>(v) - 1;
}

// Incremental decoding state. Feeding token t returns the logits row for
// position t+1, reproducing the full forward pass bit for bit: every kernel,
// accumulation order, and scale placement matches the tape ops, and entries a
// full pass would mask out contribute exact zeros there, so skipping them
// here leaves identical sums.
template <class T>
class DecoderStream {
 public:
  DecoderStream(const DecoderModel<T>& model, const Tensor<T>& cond, const Tensor<T>* style = nullptr)
      : m_(model), d_(model.cfg.d_k) {
    if (cond->shape.size() != 2 || cond->shape[1] != m_.cfg.d_a)
      throw ValidationError("decoder: conditioning must be T x " + std::to_string(m_.cfg.d_a));
    if (style != nullptr && !m_.cfg.style)
      throw ValidationError("decoder: model was built without style support");
    if (style != nullptr && (*style)->numel() != m_.cfg.d_s)
      throw ValidationError("decoder: style embedding must have " + std::to_string(m_.cfg.d_s) +
                            " dimensions");
    cond_len_ = cond->shape[0];
    slopes_ = alibi_slopes<T>(m_.cfg.heads);

    // conditioning keys/values do not depend on the step; project once
    Tape<T> tape;
    auto c = m_.cond_proj(tape, detach(cond));
    per_layer_.resize(m_.layers.size());
    for (std::size_t l = 0; l < m_.layers.size(); ++l) {
      auto& st = per_layer_[l];
      const auto& layer = m_.layers[l];
      st.cross_k = detach(layer.cross_attn.wk(tape, c));
      st.cross_v = detach(layer.cross_attn.wv(tape, c));
      if (style != nullptr) {
        auto g = layer.style_proj(tape, detach(*style));
        st.style_gain.assign(g->value.begin(), g->value.end());
      }
      st.self_k.reserve(64 * d_);
      st.self_v.reserve(64 * d_);
    }
    styled_ = style != nullptr;
  }

  std::size_t position() const { return pos_; }

  // Appends one token and returns the next-token logits.
  std::vector<T> push(int token) {
    if (token < 0 || token > m_.eos())
      throw ValidationError("decoder: token " + std::to_string(token) + " outside vocabulary");
    if (pos_ >= cond_len_)
      throw ValidationError("decoder: conditioning exhausted at position " + std::to_string(pos_));
    const std::size_t i = pos_;

    std::vector<T> h(m_.embed->value.begin() + static_cast<std::size_t>(token) * d_,
                     m_.embed->value.begin() + (static_cast<std::size_t>(token) + 1) * d_);
    if (!m_.cfg.alibi) {
      ensure_pe(i + 1);
      for (std::size_t j = 0; j < d_; ++j) h[j] = h[j] + pe_->value[i * d_ + j];
    }

    std::vector<T> a(d_), q(d_), kv(d_), out(d_);
    for (std::size_t l = 0; l < m_.layers.size(); ++l) {
      const auto& layer = m_.layers[l];
      auto& st = per_layer_[l];

      // causal self-attention over the cached prefix
      ln_row(layer.ln1, h.data(), a.data());
      linear_row(layer.self_attn.wq, a.data(), q.data());
      linear_row(layer.self_attn.wk, a.data(), kv.data());
      st.self_k.insert(st.self_k.end(), kv.begin(), kv.end());
      linear_row(layer.self_attn.wv, a.data(), kv.data());
      st.self_v.insert(st.self_v.end(), kv.begin(), kv.end());
      attend(q, st.self_k, st.self_v, i + 1, i, true, out);
      linear_row(layer.self_attn.wo, out.data(), a.data());
      for (std::size_t j = 0; j < d_; ++j) h[j] = h[j] + a[j];

      // cross-attention over the conditioning prefix rows <= i
      ln_row(layer.ln2, h.data(), a.data());
      linear_row(layer.cross_attn.wq, a.data(), q.data());
      attend(q, st.cross_k->value, st.cross_v->value, i + 1, i, false, out);
      linear_row(layer.cross_attn.wo, out.data(), a.data());
      for (std::size_t j = 0; j < d_; ++j) h[j] = h[j] + a[j];

      if (styled_) {
        const T nrm = rowk::row_l2_norm(h.data(), d_);
        if (nrm < T(1e-8)) {
          std::fill(h.begin(), h.end(), T(0));
        } else {
          for (std::size_t j = 0; j < d_; ++j) h[j] = (h[j] / nrm) * st.style_gain[j];
        }
      }

      // feed-forward
      ln_row(layer.ln3, h.data(), a.data());
      std::vector<T> hidden(layer.ffn.up.w->shape[1]);
      linear_row(layer.ffn.up, a.data(), hidden.data());
      for (auto& u : hidden) u = rowk::gelu_scalar(u);
      linear_row(layer.ffn.down, hidden.data(), a.data());
      for (std::size_t j = 0; j < d_; ++j) h[j] = h[j] + a[j];
    }

    ln_row(m_.ln_f, h.data(), a.data());
    std::vector<T> logits(m_.cfg.vocab());
    linear_row(m_.head, a.data(), logits.data());
    ++pos_;
    return logits;
  }

 private:
  struct LayerState {
    std::vector<T> self_k, self_v;  // cached rows, pos_ x d_k
    Tensor<T> cross_k, cross_v;     // projected conditioning, cond_len x d_k
    std::vector<T> style_gain;
  };

  void ln_row(const LayerNorm<T>& ln, const T* x, T* out) const {
    rowk::layernorm_row(x, d_, ln.eps, ln.gain->value.data(), ln.bias->value.data(), out);
  }

  // One row through a Linear: matvec against the row-major weights, then bias.
  // The matvec kernel accumulates, so the destination is cleared first.
  void linear_row(const Linear<T>& lin, const T* x, T* out) const {
    const std::size_t cols = lin.w->shape[1];
    std::fill(out, out + cols, T(0));
    rowk::matvec_rowmajor(x, lin.w->value.data(), lin.w->shape[0], cols, out);
    for (std::size_t c = 0; c < cols; ++c) out[c] = out[c] + lin.b->value[c];
  }

  // Multi-head attention of one query row at absolute position `qpos` over
  // `keys` rows [0, kv_rows) with per-head slope bias (self) or none (cross).
  void attend(const std::vector<T>& q, const std::vector<T>& keys, const std::vector<T>& values,
              std::size_t kv_rows, std::size_t qpos, bool self, std::vector<T>& out) const {
    const std::size_t heads = m_.cfg.heads, dh = d_ / heads;
    std::vector<T> logits(kv_rows), weighted(dh);
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const T slope = self && m_.cfg.alibi ? slopes_[hd] : T(0);
      for (std::size_t j = 0; j < kv_rows; ++j) {
        const T dot = rowk::dot(q.data() + hd * dh, keys.data() + j * d_ + hd * dh, dh);
        logits[j] = dot * inv_sqrt + (self ? -slope * static_cast<T>(qpos - j) : T(0));
      }
      if (!rowk::softmax_row(logits.data(), kv_rows)) warn("softmax: lane with every entry -inf, emitting zero row");
      for (std::size_t c = 0; c < dh; ++c) {
        T acc = T(0);
        for (std::size_t j = 0; j < kv_rows; ++j) acc += logits[j] * values[j * d_ + hd * dh + c];
        weighted[c] = acc;
      }
      std::copy(weighted.begin(), weighted.end(), out.begin() + hd * dh);
    }
  }

  void ensure_pe(std::size_t rows) {
    if (!pe_ || pe_->shape[0] < rows) pe_ = sinusoidal_pe<T>(std::max<std::size_t>(rows, 64), d_);
  }

  const DecoderModel<T>& m_;
  std::size_t d_;
  std::size_t cond_len_ = 0;
  std::size_t pos_ = 0;
  bool styled_ = false;
  std::vector<T> slopes_;
  std::vector<LayerState> per_layer_;
  Tensor<T> pe_;
};

// Extends conditioning to `rows` frames by holding the last frame, warning
// when real coverage runs short.
template <class T>
Tensor<T> extend_conditioning(const Tensor<T>& cond, std::size_t rows) {
  if (cond->shape.size() != 2 || cond->shape[0] == 0)
    throw ValidationError("generate: empty conditioning");
  if (cond->shape[0] >= rows) return cond;
  warn("conditioning covers " + std::to_string(cond->shape[0]) + " frames, edge-holding to " +
       std::to_string(rows));
  const std::size_t d = cond->shape[1];
  auto out = tensor<T>({rows, d});
  std::copy(cond->value.begin(), cond->value.end(), out->value.begin());
  for (std::size_t i = cond->shape[0]; i < rows; ++i)
    std::copy(cond->value.begin() + (cond->shape[0] - 1) * d, cond->value.begin() + cond->shape[0] * d,
              out->value.begin() + i * d);
  return out;
}

struct GenerateOptions {
  std::size_t target_len = 0;
  SamplerSpec sampler;
  int seed_token = -1;  // < 0: drawn uniformly from the codebook
};

// Autoregressive sampling; stops at EOS or target_len. The first token never
// comes from the model (there is nothing to condition on yet): it is the
// caller's seed or a uniform codebook draw.
template <class T>
TokenSequence generate(const DecoderModel<T>& model, const Tensor<T>& cond,
                       const Tensor<std::type_identity_t<T>>* style, const GenerateOptions& opts,
                       Rng& rng) {
  if (opts.target_len < 1) throw ValidationError("generate: target length must be positive");
  if (opts.seed_token >= static_cast<int>(model.cfg.codebook_size))
    throw ValidationError("generate: seed token outside codebook");
  auto full_cond = extend_conditioning(cond, opts.target_len);
  DecoderStream<T> stream(model, full_cond, style);

  TokenSequence out;
  out.reserve(opts.target_len);
  out.push_back(opts.seed_token >= 0
                    ? opts.seed_token
                    : static_cast<int>(rng.below(model.cfg.codebook_size)));
  while (out.size() < opts.target_len) {
    auto logits = stream.push(out.back());
    const int next = sample_token(logits, opts.sampler, rng);
    if (next == model.eos()) break;
    out.push_back(next);
  }
  return out;
}

// Segment chaining: each segment seeds with the previous segment's last token
// so consecutive clips join on a shared pose.
template <class T>
TokenSequence chain_generate(const DecoderModel<T>& model,
                             const std::vector<Tensor<std::type_identity_t<T>>>& cond_list,
                             const Tensor<std::type_identity_t<T>>* style, std::size_t per_segment_len,
                             const SamplerSpec& sampler, Rng& rng, int first_seed = -1) {
  if (cond_list.empty()) throw ValidationError("chain_generate: no segments");
  TokenSequence out;
  for (std::size_t s = 0; s < cond_list.size(); ++s) {
    GenerateOptions opts;
    opts.target_len = per_segment_len;
    opts.sampler = sampler;
    opts.seed_token = s == 0 ? first_seed : out.back();
    auto seg = generate(model, cond_list[s], style, opts, rng);
    out.insert(out.end(), seg.begin(), seg.end());
  }
  return out;
}

template <class T>
struct DecoderExample {
  TokenSequence tokens;
  Tensor<T> cond;
  Tensor<T> style;  // null when unstyled
};

template <class T>
struct DecoderStepStats {
  T nll = 0;
  double accuracy = 0;
};

// One optimizer step over a batch of (tokens, conditioning, style) examples.
template <class T>
DecoderStepStats<T> decoder_train_step(DecoderModel<T>& model, AdamW<T>& opt,
                                       const std::vector<DecoderExample<T>>& batch, T lr) {
  if (batch.empty()) throw ValidationError("decoder_train_step: empty batch");
  Tape<T> tape;
  Tensor<T> loss;
  DecoderStepStats<T> stats;
  const T inv_b = T(1) / static_cast<T>(batch.size());
  std::size_t positions = 0, hits = 0;
  for (const auto& ex : batch) {
    auto logits = model.forward(tape, ex.tokens, ex.cond, ex.style ? &ex.style : nullptr);
    auto nll = gpt_loss(tape, logits, ex.tokens);
    auto contrib = scale(tape, nll, inv_b);
    loss = loss ? add(tape, loss, contrib) : contrib;
    stats.nll += nll->value[0] * inv_b;
    hits += static_cast<std::size_t>(
        std::lround(token_accuracy(logits, ex.tokens) * static_cast<double>(ex.tokens.size())));
    positions += ex.tokens.size();
  }
  if (!std::isfinite(stats.nll)) throw NumericError("decoder: non-finite loss");
  tape.backward(loss);
  opt.step(lr);
  opt.zero_grad();
  stats.accuracy = static_cast<double>(hits) / static_cast<double>(positions);
  return stats;
}

// Deterministic stand-in for a text encoder: expands a label into a fixed
// Gaussian vector so styles work without any external embedding files.
inline FrameMatrix embed_style_label(const std::string& label, std::size_t d_s = 512) {
  auto rng = derive_rng(0x7374796c65ULL, label);
  FrameMatrix m = make_frames(1, d_s, 0.0f);
  for (auto& v : m.data) v = static_cast<float>(rng.normal());
  return m;
}

template <class T>
Tensor<T> frames_to_tensor(const FrameMatrix& m) {
  auto t = tensor<T>({m.rows, m.cols});
  for (std::size_t i = 0; i < t->numel(); ++i) t->value[i] = static_cast<T>(m.data[i]);
  return t;
}

}  // namespace motionseq
