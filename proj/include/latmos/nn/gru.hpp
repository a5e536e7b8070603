#pragma once

#include <string>
#include <vector>

#include "latmos/nn/tensor.hpp"

namespace latmos::nn {

// z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
// c = tanh(Wc x + Uc (r*h) + bc), h' = (1 - z) * h + z * c.
// W, U and b stack the (z, r, c) blocks row-wise.
struct GruCell {
  Param* W = nullptr;  // 3d x n
  Param* U = nullptr;  // 3d x d
  Param* b = nullptr;  // 3d
  int in = 0;
  int hidden = 0;

  struct StepCache {
    Mat x, h, z, r, c, rh;
  };

  GruCell() = default;
  GruCell(ParamSet& ps, const std::string& name, int in_dim, int hidden_dim, Rng& rng)
      : in(in_dim), hidden(hidden_dim) {
    require(in_dim >= 1 && hidden_dim >= 1, "GruCell: dimensions must be positive");
    W = &ps.add(name + ".W", {3 * hidden_dim, in_dim});
    U = &ps.add(name + ".U", {3 * hidden_dim, hidden_dim});
    b = &ps.add(name + ".b", {3 * hidden_dim});
    glorot_uniform(*W, in_dim, hidden_dim, rng);
    glorot_uniform(*U, hidden_dim, hidden_dim, rng);
  }

  Mat step(const Mat& x, const Mat& h, StepCache* cache = nullptr) const {
    require(x.rows() == in && h.rows() == hidden && x.cols() == h.cols(), "GruCell: shape mismatch");
    const int d = hidden;
    auto Wm = W->value.mat();
    auto Um = U->value.mat();
    Mat a = add_bias(Wm * x, b->value);
    a.topRows(2 * d).noalias() += Um.topRows(2 * d) * h;
    Mat z = sigmoid(a.topRows(d));
    Mat r = sigmoid(a.middleRows(d, d));
    Mat rh = r.cwiseProduct(h);
    Mat c = (a.bottomRows(d) + Um.bottomRows(d) * rh).array().tanh();
    Mat h_new = h + z.cwiseProduct(c - h);
    if (cache) *cache = StepCache{x, h, std::move(z), std::move(r), std::move(c), std::move(rh)};
    return h_new;
  }

  // Given dL/dh', accumulates parameter gradients; writes dL/dx and dL/dh.
  void step_backward(const StepCache& s, const Mat& dh_new, Mat* dx, Mat* dh) const {
    const int d = hidden;
    auto Um = U->value.mat();
    Mat dpre(3 * d, dh_new.cols());
    Mat dc = dh_new.cwiseProduct(s.z);
    Mat dz = dh_new.cwiseProduct(s.c - s.h);
    Mat dh_acc = dh_new.cwiseProduct((1.0 - s.z.array()).matrix());
    dpre.bottomRows(d) = dc.array() * (1.0 - s.c.array().square());
    Mat drh = Um.bottomRows(d).transpose() * dpre.bottomRows(d);
    Mat dr = drh.cwiseProduct(s.h);
    dh_acc += drh.cwiseProduct(s.r);
    dpre.topRows(d) = dz.array() * s.z.array() * (1.0 - s.z.array());
    dpre.middleRows(d, d) = dr.array() * s.r.array() * (1.0 - s.r.array());
    dh_acc.noalias() += Um.topRows(2 * d).transpose() * dpre.topRows(2 * d);

    auto dU = U->grad.mat();
    dU.topRows(2 * d).noalias() += dpre.topRows(2 * d) * s.h.transpose();
    dU.bottomRows(d).noalias() += dpre.bottomRows(d) * s.rh.transpose();
    W->grad.mat().noalias() += dpre * s.x.transpose();
    b->grad.vec() += dpre.rowwise().sum();
    if (dx) *dx = W->value.mat().transpose() * dpre;
    *dh = std::move(dh_acc);
  }
};

}  // namespace latmos::nn
