#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "densesr/common.hpp"
#include "densesr/layers.hpp"
#include "densesr/tape.hpp"
#include "densesr/tensor.hpp"

namespace densesr {

// Adaptive-moment optimizer with bias correction. Decay rates default to
// (0.5, 0.999), the usual stable choice for adversarial training.
template <typename S>
class Adam {
 public:
  Adam(std::vector<Parameter<S>*> params, double lr = 2e-4, double beta1 = 0.5,
       double beta2 = 0.999, double epsilon = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
    if (lr_ <= 0.0) fail_config("learning rate must be positive, got ", lr_);
    for (Parameter<S>* p : params_) {
      moments_.push_back({Tensor<S>(p->value.shape()), Tensor<S>(p->value.shape())});
    }
  }

  void step() {
    double norm_sq = 0.0;
    for (Parameter<S>* p : params_) {
      const S* g = p->grad.data();
      for (std::size_t i = 0; i < p->grad.size(); ++i) {
        if (!std::isfinite(static_cast<double>(g[i]))) {
          fail_runtime("non-finite gradient in parameter ", p->name);
        }
        norm_sq += static_cast<double>(g[i]) * g[i];
      }
    }
    if (norm_sq > 1e6) {
      log_warn("gradient norm ", std::sqrt(norm_sq), " exceeds 1e3 at step ", step_ + 1);
    }

    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Parameter<S>* p = params_[pi];
      S* value = p->value.mutable_data();
      const S* g = p->grad.data();
      S* m = moments_[pi].m.mutable_data();
      S* v = moments_[pi].v.mutable_data();
      for (std::size_t i = 0; i < p->grad.size(); ++i) {
        const double gi = g[i];
        const double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
        const double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        m[i] = static_cast<S>(mi);
        v[i] = static_cast<S>(vi);
        value[i] -= static_cast<S>(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + epsilon_));
      }
    }
  }

  void zero_grads() { densesr::zero_grads(params_); }

  std::int64_t step_count() const { return step_; }
  const std::vector<Parameter<S>*>& params() const { return params_; }

  // Moment accesses for checkpointing, in parameter order.
  const Tensor<S>& first_moment(std::size_t i) const { return moments_[i].m; }
  const Tensor<S>& second_moment(std::size_t i) const { return moments_[i].v; }
  Tensor<S>& first_moment(std::size_t i) { return moments_[i].m; }
  Tensor<S>& second_moment(std::size_t i) { return moments_[i].v; }
  void set_step_count(std::int64_t s) { step_ = s; }

 private:
  struct Moments {
    Tensor<S> m, v;
  };

  std::vector<Parameter<S>*> params_;
  std::vector<Moments> moments_;
  double lr_, beta1_, beta2_, epsilon_;
  std::int64_t step_ = 0;
};

}  // namespace densesr
