#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "latmos/nn/tensor.hpp"

namespace latmos::nn {

struct GradCheckResult {
  std::string name;
  double rel_error = 0.0;
  std::size_t entries = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t max_entries = 400;  // per tensor; larger tensors are subsampled
  std::uint64_t seed = 7;
};

// Norm-wise relative error ||a - n|| / max(||a||, ||n||), zero when both vanish.
inline double relative_error(const Vec& analytic, const Vec& numeric) {
  const double scale = std::max(analytic.norm(), numeric.norm());
  if (scale < 1e-12) return 0.0;
  return (analytic - numeric).norm() / scale;
}

// Central differences of `loss` over `data[i]` for the chosen indices.
inline Vec numeric_gradient(double* data, const std::vector<std::size_t>& idx, const std::function<double()>& loss,
                            double step) {
  Vec g(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    double& x = data[idx[k]];
    const double saved = x;
    x = saved + step;
    const double fp = loss();
    x = saved - step;
    const double fm = loss();
    x = saved;
    g[static_cast<Eigen::Index>(k)] = (fp - fm) / (2.0 * step);
  }
  return g;
}

inline std::vector<std::size_t> pick_entries(std::size_t n, const GradCheckOptions& opt, std::uint64_t salt) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n > opt.max_entries) {
    Rng rng = make_rng(derive_seed(opt.seed, {salt}));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(opt.max_entries);
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

// `loss` evaluates the objective at the current parameter values; `backward`
// zeroes and fills the parameter gradients for the same objective. Every
// trainable parameter is checked separately.
inline std::vector<GradCheckResult> check_parameters(ParamSet& params, const std::function<double()>& loss,
                                                     const std::function<void()>& backward,
                                                     const GradCheckOptions& opt = {}) {
  params.zero_grad();
  backward();
  std::vector<GradCheckResult> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    if (!p.trainable || p.value.size() == 0) continue;
    const Tensor analytic = p.grad;
    auto idx = pick_entries(p.value.size(), opt, i);
    Vec a(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) a[static_cast<Eigen::Index>(k)] = analytic[idx[k]];
    Vec n = numeric_gradient(p.value.data(), idx, loss, opt.step);
    GradCheckResult r{p.name, relative_error(a, n), idx.size(), false};
    r.passed = r.rel_error < opt.tolerance;
    out.push_back(r);
  }
  return out;
}

// Checks an analytic gradient with respect to an input buffer.
inline GradCheckResult check_input(const std::string& name, double* data, std::size_t size, const Vec& analytic,
                                   const std::function<double()>& loss, const GradCheckOptions& opt = {}) {
  auto idx = pick_entries(size, opt, 0x1234);
  Vec a(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) a[static_cast<Eigen::Index>(k)] = analytic[static_cast<Eigen::Index>(idx[k])];
  Vec n = numeric_gradient(data, idx, loss, opt.step);
  GradCheckResult r{name, relative_error(a, n), idx.size(), false};
  r.passed = r.rel_error < opt.tolerance;
  return r;
}

inline bool all_passed(const std::vector<GradCheckResult>& rs) {
  return std::all_of(rs.begin(), rs.end(), [](const GradCheckResult& r) { return r.passed; });
}

}  // namespace latmos::nn
