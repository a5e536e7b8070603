#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latmos/error.hpp"
#include "latmos/rng.hpp"

namespace latmos::nn {

// Activations are column-major with one column per batch element (or per step).
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    for (int d : shape_) require(d >= 0, "Tensor: negative dimension");
    data_.assign(numel(shape_), 0.0);
  }

  static std::size_t numel(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  std::size_t size() const noexcept { return data_.size(); }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) {
    assert(i < data_.size());
    return data_[i];
  }
  double operator[](std::size_t i) const {
    assert(i < data_.size());
    return data_[i];
  }

  // Leading dimension vs. the product of the rest; a rank-1 tensor is a column.
  Eigen::Index rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }
  Eigen::Index cols() const noexcept {
    return shape_.size() <= 1 ? 1 : static_cast<Eigen::Index>(data_.size() / static_cast<std::size_t>(shape_[0]));
  }

  Eigen::Map<RowMat> mat() { return {data_.data(), rows(), cols()}; }
  Eigen::Map<const RowMat> mat() const { return {data_.data(), rows(), cols()}; }
  Eigen::Map<Vec> vec() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
  Eigen::Map<const Vec> vec() const { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }

  void zero() { std::fill(data_.begin(), data_.end(), 0.0); }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  std::vector<int> shape_;
  // Aligned so vectorized kernels peel identically for every tensor (bit-reproducibility).
  std::vector<double, Eigen::aligned_allocator<double>> data_;
};

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

// Named parameters with stable addresses; layers keep raw pointers into it.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet&) = delete;
  ParamSet& operator=(const ParamSet&) = delete;
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;

  Param& add(const std::string& name, std::vector<int> shape, bool trainable = true) {
    require(!index_.count(name), "ParamSet: duplicate parameter name " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->value = Tensor(shape);
    p->grad = Tensor(std::move(shape));
    p->trainable = trainable;
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Param& get(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamSet: unknown parameter " + name);
    return *params_[it->second];
  }
  const Param& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamSet: unknown parameter " + name);
    return *params_[it->second];
  }

  std::size_t size() const noexcept { return params_.size(); }
  Param& operator[](std::size_t i) { return *params_[i]; }
  const Param& operator[](std::size_t i) const { return *params_[i]; }

  std::vector<Param*> trainable() {
    std::vector<Param*> out;
    for (auto& p : params_)
      if (p->trainable) out.push_back(p.get());
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.zero();
  }

  // Scalar count, optionally restricted to names starting with `prefix`.
  std::size_t count(const std::string& prefix = "", bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p->name.rfind(prefix, 0) == 0 && (!trainable_only || p->trainable)) n += p->value.size();
    return n;
  }

  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p->value);
    return out;
  }

  void restore(const std::vector<Tensor>& values) {
    require(values.size() == params_.size(), "ParamSet::restore: size mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      require(values[i].shape() == params_[i]->value.shape(), "ParamSet::restore: shape mismatch");
      params_[i]->value = values[i];
    }
  }

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::map<std::string, std::size_t> index_;
};

inline void glorot_uniform(Param& p, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = dist(rng);
}

inline Mat add_bias(Mat y, const Tensor& b) {
  y.colwise() += b.vec();
  return y;
}

// Leaky ReLU with the slope used throughout.
inline constexpr double kLeakySlope = 0.01;

inline Mat leaky_relu(const Mat& x) {
  return x.unaryExpr([](double v) { return v > 0 ? v : kLeakySlope * v; });
}

inline Mat leaky_relu_backward(const Mat& pre, const Mat& dy) {
  return dy.binaryExpr(pre, [](double g, double v) { return v > 0 ? g : kLeakySlope * g; });
}

inline Mat sigmoid(const Mat& x) {
  return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

}  // namespace latmos::nn
