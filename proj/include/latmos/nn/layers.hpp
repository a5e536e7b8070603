#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "latmos/nn/tensor.hpp"

namespace latmos::nn {

// y = W x + b
struct Linear {
  Param* W = nullptr;
  Param* b = nullptr;
  int in = 0;
  int out = 0;

  Linear() = default;
  Linear(ParamSet& ps, const std::string& name, int in_dim, int out_dim, Rng& rng, bool trainable = true,
         bool zero_weights = false)
      : in(in_dim), out(out_dim) {
    require(in_dim >= 1 && out_dim >= 1, "Linear: dimensions must be positive");
    W = &ps.add(name + ".W", {out_dim, in_dim}, trainable);
    b = &ps.add(name + ".b", {out_dim}, trainable);
    if (!zero_weights) glorot_uniform(*W, in_dim, out_dim, rng);
  }

  Mat forward(const Mat& x) const {
    require(x.rows() == in, "Linear: input dimension mismatch");
    return add_bias(W->value.mat() * x, b->value);
  }

  // Accumulates parameter gradients and returns dL/dx.
  Mat backward(const Mat& x, const Mat& dy) const {
    require(dy.rows() == out && dy.cols() == x.cols(), "Linear: gradient shape mismatch");
    if (W->trainable) {
      W->grad.mat().noalias() += dy * x.transpose();
      b->grad.vec() += dy.rowwise().sum();
    }
    return W->value.mat().transpose() * dy;
  }

  // Parameter gradients only (inputs that need no gradient, e.g. raw observations).
  void backward_params(const Mat& x, const Mat& dy) const {
    if (!W->trainable) return;
    W->grad.mat().noalias() += dy * x.transpose();
    b->grad.vec() += dy.rowwise().sum();
  }
};

// Per-column normalization over the feature dimension.
struct LayerNorm {
  Param* gain = nullptr;
  Param* bias = nullptr;
  int dim = 0;
  double eps = 1e-5;

  struct Cache {
    Mat xhat;
    Eigen::RowVectorXd inv_std;
  };

  LayerNorm() = default;
  LayerNorm(ParamSet& ps, const std::string& name, int d) : dim(d) {
    gain = &ps.add(name + ".gain", {d});
    bias = &ps.add(name + ".bias", {d});
    gain->value.vec().setOnes();
  }

  Mat forward(const Mat& x, Cache* cache = nullptr) const {
    require(x.rows() == dim, "LayerNorm: dimension mismatch");
    Eigen::RowVectorXd mean = x.colwise().mean();
    Mat xc = x.rowwise() - mean;
    Eigen::RowVectorXd var = xc.array().square().colwise().sum() / static_cast<double>(dim);
    Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
    Mat xhat = xc.array().rowwise() * inv_std.array();
    Mat y = (xhat.array().colwise() * gain->value.vec().array()).colwise() + bias->value.vec().array();
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  Mat backward(const Cache& c, const Mat& dy) const {
    gain->grad.vec() += (dy.array() * c.xhat.array()).rowwise().sum().matrix();
    bias->grad.vec() += dy.rowwise().sum();
    Mat dxhat = dy.array().colwise() * gain->value.vec().array();
    const double n = static_cast<double>(dim);
    Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
    Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * c.xhat.array()).colwise().sum();
    Mat dx = (n * dxhat.array()).rowwise() - sum_dxhat.array();
    dx.array() -= c.xhat.array().rowwise() * sum_dxhat_xhat.array();
    dx.array().rowwise() *= (c.inv_std.array() / n);
    return dx;
  }
};

// Column-wise softmax.
inline Mat softmax(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double m = logits.col(j).maxCoeff();
    p.col(j) = (logits.col(j).array() - m).exp();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

inline Mat softmax_backward(const Mat& p, const Mat& dp) {
  Eigen::RowVectorXd dot = (p.array() * dp.array()).colwise().sum();
  return p.array() * (dp.array().rowwise() - dot.array());
}

inline constexpr double kProbClamp = 1e-12;

// -sum y log(clamp(p)); p and y are probability / one-hot columns.
inline double cross_entropy(const Vec& pred, const Vec& one_hot) {
  require(pred.size() == one_hot.size(), "cross_entropy: size mismatch");
  assert(std::abs(pred.sum() - 1.0) < 1e-4);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i)
    if (one_hot[i] != 0.0) loss -= one_hot[i] * std::log(std::clamp(pred[i], kProbClamp, 1.0));
  return loss;
}

inline Vec cross_entropy_grad(const Vec& pred, const Vec& one_hot) {
  Vec g = Vec::Zero(pred.size());
  for (Eigen::Index i = 0; i < pred.size(); ++i)
    if (one_hot[i] != 0.0 && pred[i] > kProbClamp) g[i] = -one_hot[i] / pred[i];
  return g;
}

// Mean cross-entropy over columns of class probabilities against integer labels;
// also returns dL/dlogits (softmax folded in) scaled by `scale`.
inline double softmax_ce_from_probs(const Mat& p, const std::vector<int>& labels, double scale, Mat* dlogits) {
  require(static_cast<Eigen::Index>(labels.size()) == p.cols(), "softmax_ce: label count mismatch");
  double total = 0.0;
  if (dlogits) dlogits->setZero(p.rows(), p.cols());
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    const double py = p(y, j);
    total -= std::log(std::max(py, kProbClamp));
    if (dlogits && py > kProbClamp) {
      dlogits->col(j) = p.col(j) * scale;
      (*dlogits)(y, j) -= scale;
    }
  }
  return total;
}

// One hidden layer of width round((in + out) / 2) with leaky ReLU; the output
// layer starts at zero so an untrained decoder predicts the uniform distribution.
struct MlpDecoder {
  Linear hidden;
  Linear output;
  static constexpr int kClasses = 2;

  struct Cache {
    Mat x;
    Mat pre;
    Mat act;
  };

  static int hidden_width(int in, int out = kClasses) {
    return std::max(1, static_cast<int>(std::lround((in + out) / 2.0)));
  }

  MlpDecoder() = default;
  MlpDecoder(ParamSet& ps, const std::string& name, int in, Rng& rng, int classes = kClasses)
      : hidden(ps, name + ".hidden", in, hidden_width(in, classes), rng),
        output(ps, name + ".out", hidden_width(in, classes), classes, rng, true, /*zero_weights=*/true) {}

  Mat logits(const Mat& x, Cache* cache = nullptr) const {
    Mat pre = hidden.forward(x);
    Mat act = leaky_relu(pre);
    Mat z = output.forward(act);
    if (cache) {
      cache->x = x;
      cache->pre = std::move(pre);
      cache->act = std::move(act);
    }
    return z;
  }

  Mat forward(const Mat& x) const { return softmax(logits(x)); }

  Mat backward(const Cache& c, const Mat& dlogits) const {
    Mat dact = output.backward(c.act, dlogits);
    Mat dpre = leaky_relu_backward(c.pre, dact);
    return hidden.backward(c.x, dpre);
  }
};

}  // namespace latmos::nn
