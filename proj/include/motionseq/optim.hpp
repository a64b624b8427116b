#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "motionseq/nn.hpp"
#include "motionseq/tensor.hpp"

namespace motionseq {

// Linear warmup from zero, then cosine decay to zero at total_steps. Steps
// beyond the schedule clamp to zero.
template <class T>
T cosine_warmup_lr(std::uint64_t step, T base_lr, std::uint64_t warmup_steps, std::uint64_t total_steps) {
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<T>(step) / static_cast<T>(warmup_steps);
  if (step >= total_steps) return T(0);
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * static_cast<T>(0.5 * (1.0 + std::cos(progress * 3.14159265358979323846)));
}

// AdamW over a fixed set of named parameters: bias-corrected moments plus
// decay applied directly to the weights, not through the gradient.
template <class T>
class AdamW {
 public:
  struct Options {
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0.01);
  };

  AdamW() = default;
  explicit AdamW(NamedParams<T> params, Options opt = {}) : params_(std::move(params)), opt_(opt) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].second->numel(), T(0));
      v_[i].assign(params_[i].second->numel(), T(0));
    }
  }

  // Applies one update from the accumulated gradients. A non-finite gradient
  // anywhere refuses the whole step so a bad batch cannot poison the weights.
  void step(T lr) {
    for (const auto& [name, p] : params_) {
      if (p->grad.size() != p->numel())
        throw NumericError("optimizer: parameter " + name + " has no gradient");
      for (T g : p->grad)
        if (!std::isfinite(g)) throw NumericError("optimizer: non-finite gradient in parameter " + name);
    }
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(opt_.beta1), static_cast<double>(t_)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(opt_.beta2), static_cast<double>(t_)));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].second;
      for (std::size_t j = 0; j < p->numel(); ++j) {
        const T g = p->grad[j];
        m_[i][j] = opt_.beta1 * m_[i][j] + (T(1) - opt_.beta1) * g;
        v_[i][j] = opt_.beta2 * v_[i][j] + (T(1) - opt_.beta2) * g * g;
        const T mhat = m_[i][j] / bc1;
        const T vhat = v_[i][j] / bc2;
        p->value[j] -= lr * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * p->value[j]);
      }
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p->zero_grad();
  }

  std::uint64_t step_count() const { return t_; }
  void set_step_count(std::uint64_t t) { t_ = t; }
  const NamedParams<T>& params() const { return params_; }
  std::vector<T>& moment1(std::size_t i) { return m_[i]; }
  std::vector<T>& moment2(std::size_t i) { return v_[i]; }
  const std::vector<T>& moment1(std::size_t i) const { return m_[i]; }
  const std::vector<T>& moment2(std::size_t i) const { return v_[i]; }

 private:
  NamedParams<T> params_;
  Options opt_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace motionseq
