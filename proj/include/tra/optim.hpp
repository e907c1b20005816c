#pragma once

#include <cmath>
#include <vector>

#include "tra/tensor.hpp"

namespace tra {

// AdamW with decoupled weight decay: decay is applied to the parameter
// directly, not mixed into the moment estimates.
template <class T>
class AdamWT {
 public:
  struct Hyper {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamWT(std::vector<TensorT<T>> params, Hyper h) : params_(std::move(params)), h_(h) {
    for (auto& p : params_) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  // One update with an explicit learning rate (the schedule owns lr).
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(h_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(h_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(h_.beta1), b2 = static_cast<T>(h_.beta2);
    const T one_m_b1 = static_cast<T>(1.0 - h_.beta1), one_m_b2 = static_cast<T>(1.0 - h_.beta2);
    const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(h_.eps);
    const T step_lr = static_cast<T>(lr);
    const T decay = static_cast<T>(lr * h_.weight_decay);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      TensorT<T>& p = params_[k];
      if (!p.grad) continue;
      T* w = p.ptr();
      const T* g = p.grad->data();
      T* m = m_[k].data();
      T* v = v_[k].data();
      const std::size_t n = p.numel();
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + one_m_b1 * g[i];
        v[i] = b2 * v[i] + one_m_b2 * g[i] * g[i];
        const T mhat = m[i] * inv_bc1;
        const T vhat = v[i] * inv_bc2;
        w[i] -= step_lr * mhat / (std::sqrt(vhat) + eps) + decay * w[i];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  // L2 norm over all gradients; the harness logs this on divergence.
  double grad_norm() const {
    double ss = 0.0;
    for (const auto& p : params_) {
      if (!p.grad) continue;
      for (T g : *p.grad) ss += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(ss);
  }

  int64_t step_count() const { return t_; }
  const Hyper& hyper() const { return h_; }

  // optimizer moments for checkpoint round-trips
  std::vector<std::vector<T>>& moments_m() { return m_; }
  std::vector<std::vector<T>>& moments_v() { return v_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  std::vector<TensorT<T>> params_;
  Hyper h_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  int64_t t_ = 0;
};

using AdamW = AdamWT<float>;

// Linear warmup over the first 5% of steps, then cosine decay to zero.
// `step` is zero-based; the first update sees a nonzero rate.
inline double lr_at(double peak, int64_t step, int64_t total_steps) {
  if (total_steps <= 0) return peak;
  const int64_t warmup = std::max<int64_t>(1, total_steps / 20);
  if (step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(std::max<int64_t>(1, total_steps - warmup));
  return peak * 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, progress)));
}

}  // namespace tra
