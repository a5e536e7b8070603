#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "latmos/dataset.hpp"
#include "latmos/error.hpp"

namespace latmos::baselines {

enum class Decision : std::uint8_t { reject = 0, accept = 1, abstain = 2 };

inline const char* to_string(Decision d) {
  switch (d) {
    case Decision::reject: return "reject";
    case Decision::accept: return "accept";
    case Decision::abstain: return "abstain";
  }
  return "?";
}

// The learners' alphabet: every distinct observation vector seen in training
// (within `tolerance`, Euclidean). Test vectors decode to the nearest entry
// within `tolerance` or fail. Tolerance 0 is exact matching.
class SymbolTable {
 public:
  explicit SymbolTable(double tolerance = 0.0) : tol_(tolerance) {
    require(tolerance >= 0.0, "SymbolTable: tolerance must be non-negative");
  }

  double tolerance() const noexcept { return tol_; }
  int size() const noexcept { return static_cast<int>(entries_.size()); }
  const Eigen::VectorXd& entry(int i) const { return entries_.at(static_cast<std::size_t>(i)); }

  // Returns the symbol for `v`, adding a new entry when nothing matches.
  int intern(const Eigen::VectorXd& v) {
    if (auto s = lookup(v)) return *s;
    entries_.push_back(v);
    return size() - 1;
  }

  std::optional<int> lookup(const Eigen::VectorXd& v) const {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < size(); ++i) {
      const auto& e = entries_[static_cast<std::size_t>(i)];
      if (e.size() != v.size()) continue;
      const double d = (e - v).norm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    if (best < 0 || best_d > tol_) return std::nullopt;
    return best;
  }

  std::vector<int> intern_sequence(const Eigen::MatrixXd& steps) {
    std::vector<int> out(static_cast<std::size_t>(steps.cols()));
    for (Eigen::Index t = 0; t < steps.cols(); ++t) out[static_cast<std::size_t>(t)] = intern(steps.col(t));
    return out;
  }

  std::optional<std::vector<int>> decode(const Eigen::MatrixXd& steps) const {
    std::vector<int> out(static_cast<std::size_t>(steps.cols()));
    for (Eigen::Index t = 0; t < steps.cols(); ++t) {
      auto s = lookup(steps.col(t));
      if (!s) return std::nullopt;
      out[static_cast<std::size_t>(t)] = *s;
    }
    return out;
  }

 private:
  double tol_;
  std::vector<Eigen::VectorXd> entries_;
};

}  // namespace latmos::baselines
