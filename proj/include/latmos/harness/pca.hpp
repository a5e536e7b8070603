#pragma once

// Principal component projection of latent trajectories via Eigen's SVD.

#include <algorithm>

#include <Eigen/Dense>

#include "latmos/error.hpp"

namespace latmos::harness {

struct Pca {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;        // d x k, orthonormal columns
  Eigen::VectorXd explained_variance;  // per component, sample variance (n - 1)
  Eigen::MatrixXd projection;        // n x k, the centred rows in component coordinates
};

// Rows of `x` are samples. Components are sign-fixed so the largest-magnitude
// loading is positive, which makes the output deterministic.
inline Pca pca(const Eigen::MatrixXd& x, int k) {
  require(x.rows() >= 1 && x.cols() >= 1, "pca: empty input");
  require(k >= 1, "pca: k must be positive");
  k = std::min<int>(k, static_cast<int>(std::min(x.rows(), x.cols())));
  Pca out;
  out.mean = x.colwise().mean();
  const Eigen::MatrixXd centred = x.rowwise() - out.mean;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
  out.components = svd.matrixV().leftCols(k);
  for (int j = 0; j < k; ++j) {
    Eigen::Index arg = 0;
    out.components.col(j).cwiseAbs().maxCoeff(&arg);
    if (out.components(arg, j) < 0.0) out.components.col(j) *= -1.0;
  }
  const double denom = x.rows() > 1 ? static_cast<double>(x.rows() - 1) : 1.0;
  out.explained_variance = svd.singularValues().head(k).array().square() / denom;
  out.projection = centred * out.components;
  return out;
}

}  // namespace latmos::harness
