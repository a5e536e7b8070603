#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "latmos/nn/tensor.hpp"

namespace latmos::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(ParamSet& params, AdamConfig cfg = {}) : cfg_(cfg), params_(params.trainable()) {
    for (Param* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  // Applies one bias-corrected update and zeroes the gradients. Returns false
  // (leaving parameters and moments untouched) if any gradient is not finite.
  bool step() {
    bool finite = true;
    for (Param* p : params_)
      if (!p->grad.vec().allFinite()) finite = false;
    if (!finite) {
      for (Param* p : params_) p->grad.zero();
      ++rejected_;
      return false;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto g = params_[i]->grad.vec();
      auto m = m_[i].vec();
      auto v = v_[i].vec();
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      params_[i]->value.vec().array() -=
          cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
      params_[i]->grad.zero();
    }
    return true;
  }

  std::int64_t step_count() const noexcept { return t_; }
  std::int64_t rejected_steps() const noexcept { return rejected_; }
  const AdamConfig& config() const noexcept { return cfg_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  AdamConfig cfg_;
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
  std::int64_t rejected_ = 0;
};

}  // namespace latmos::nn
