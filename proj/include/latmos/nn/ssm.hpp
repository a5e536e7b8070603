#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "latmos/nn/tensor.hpp"

namespace latmos::nn {

// Diagonal linear recurrence with a squashed decay:
//   a = tanh(a_raw), s_t = a * s_{t-1} + B x_t + b, y_t = Wo tanh(s_t) + bo [+ D x_t]
struct DiagonalSsm {
  Param* a_raw = nullptr;  // d
  Param* B = nullptr;      // d x n
  Param* b = nullptr;      // d
  Param* Wo = nullptr;     // d x d
  Param* bo = nullptr;     // d
  Param* D = nullptr;      // d x n, optional feedthrough
  int in = 0;
  int dim = 0;

  struct StepCache {
    Mat x, s_prev, g;
  };

  DiagonalSsm() = default;
  DiagonalSsm(ParamSet& ps, const std::string& name, int in_dim, int state_dim, Rng& rng, bool feedthrough)
      : in(in_dim), dim(state_dim) {
    require(in_dim >= 1 && state_dim >= 1, "DiagonalSsm: dimensions must be positive");
    a_raw = &ps.add(name + ".a_raw", {state_dim});
    B = &ps.add(name + ".B", {state_dim, in_dim});
    b = &ps.add(name + ".b", {state_dim});
    Wo = &ps.add(name + ".Wo", {state_dim, state_dim});
    bo = &ps.add(name + ".bo", {state_dim});
    if (feedthrough) {
      D = &ps.add(name + ".D", {state_dim, in_dim});
      glorot_uniform(*D, in_dim, state_dim, rng);
    }
    // Decays start spread over [0.3, 0.9] so the layer keeps memory from the outset.
    std::uniform_real_distribution<double> decay(0.3, 0.9);
    for (std::size_t i = 0; i < a_raw->value.size(); ++i) a_raw->value[i] = std::atanh(decay(rng));
    glorot_uniform(*B, in_dim, state_dim, rng);
    glorot_uniform(*Wo, state_dim, state_dim, rng);
  }

  Vec decay() const { return a_raw->value.vec().array().tanh(); }

  // Returns y; the new state is written to *s.
  Mat step(const Mat& x, Mat* s, StepCache* cache = nullptr) const {
    require(x.rows() == in && s->rows() == dim && x.cols() == s->cols(), "DiagonalSsm: shape mismatch");
    Mat s_new = add_bias(B->value.mat() * x, b->value);
    s_new += (s->array().colwise() * decay().array()).matrix();
    Mat g = s_new.array().tanh();
    Mat y = add_bias(Wo->value.mat() * g, bo->value);
    if (D) y.noalias() += D->value.mat() * x;
    if (cache) *cache = StepCache{x, *s, g};
    *s = std::move(s_new);
    return y;
  }

  // dy: gradient wrt y_t; ds: gradient wrt s_t arriving from step t+1, replaced
  // by the gradient wrt s_{t-1}. Returns dL/dx_t.
  Mat step_backward(const StepCache& c, const Mat& dy, Mat* ds) const {
    Wo->grad.mat().noalias() += dy * c.g.transpose();
    bo->grad.vec() += dy.rowwise().sum();
    Mat ds_t = *ds + (Wo->value.mat().transpose() * dy).cwiseProduct((1.0 - c.g.array().square()).matrix());
    const Vec a = decay();
    Vec da = (ds_t.cwiseProduct(c.s_prev)).rowwise().sum();
    a_raw->grad.vec() += da.cwiseProduct((1.0 - a.array().square()).matrix());
    B->grad.mat().noalias() += ds_t * c.x.transpose();
    b->grad.vec() += ds_t.rowwise().sum();
    Mat dx = B->value.mat().transpose() * ds_t;
    if (D) {
      D->grad.mat().noalias() += dy * c.x.transpose();
      dx.noalias() += D->value.mat().transpose() * dy;
    }
    *ds = ds_t.array().colwise() * a.array();
    return dx;
  }
};

}  // namespace latmos::nn
