#pragma once

#include <Eigen/Dense>
#include <Eigen/QR>

#include <string>
#include <vector>

#include "bcs/agents/common.hpp"
#include "bcs/core_types.hpp"
#include "bcs/error.hpp"

namespace bcs::agents {

/// OLS fit of Y on [1, X, T, T*X]. The effect at x is [1, x]' beta_2 where
/// beta_2 collects the T and T*X coefficients.
struct LinearAgentFit {
  Vector effect_coef;  // length p+1: T main effect then T*X slopes
  Matrix effect_cov;   // its block of sigma_hat^2 (Z'Z)^-1
  double sigma2_hat = 0.0;
  AgentPosterior training;

  AgentPosterior evaluate(const Matrix& x) const {
    AgentPosterior out;
    out.j = training.j;
    out.name = training.name;
    const Eigen::Index n = x.rows();
    out.tau_hat.resize(n);
    out.se.resize(n);
    Vector z(x.cols() + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      z[0] = 1.0;
      z.tail(x.cols()) = x.row(i).transpose();
      out.tau_hat[i] = z.dot(effect_coef);
      out.se[i] = std::sqrt(std::max(0.0, z.dot(effect_cov * z)));
    }
    out.se = floor_se(out.se);
    return out;
  }
};

inline LinearAgentFit fit_linear_agent(const ObservedData& data, int j = 1) {
  const Eigen::Index n = data.n();
  const Eigen::Index p = data.p();
  const Eigen::Index cols = 2 * p + 2;
  if (n <= cols)
    throw AgentError("linear agent design is rank deficient: needs more rows than its " + std::to_string(cols) + " design columns (n=" +
                     std::to_string(n) + ")");

  Matrix z(n, cols);
  std::vector<std::string> names;
  names.emplace_back("intercept");
  for (Eigen::Index k = 0; k < p; ++k) names.push_back(covariate_name(data, k));
  names.emplace_back("t");
  for (Eigen::Index k = 0; k < p; ++k) names.push_back("t:" + covariate_name(data, k));
  const Vector t = treated_mask(data);
  z.col(0).setOnes();
  z.block(0, 1, n, p) = data.x;
  z.col(p + 1) = t;
  z.rightCols(p) = t.asDiagonal() * data.x;

  Eigen::ColPivHouseholderQR<Matrix> qr(z);
  qr.setThreshold(1e-10);
  if (qr.rank() < cols) {
    std::string dependent;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index r = qr.rank(); r < cols; ++r) {
      if (!dependent.empty()) dependent += ", ";
      dependent += names[static_cast<std::size_t>(perm[r])];
    }
    throw AgentError("linear agent design is rank deficient; dependent columns: " + dependent);
  }

  const Vector coef = qr.solve(data.y);
  const double rss = (data.y - z * coef).squaredNorm();
  LinearAgentFit fit;
  fit.sigma2_hat = rss / static_cast<double>(n - cols);
  // (Z'Z)^-1 = P R^-1 R^-T P' from Z P = Q R.
  const Matrix r = qr.matrixR().topLeftCorner(cols, cols).triangularView<Eigen::Upper>();
  const Matrix r_inv = r.triangularView<Eigen::Upper>().solve(Matrix::Identity(cols, cols));
  const Matrix ztz_inv = qr.colsPermutation() * (r_inv * r_inv.transpose()) * qr.colsPermutation().transpose();
  fit.effect_coef = coef.tail(p + 1);
  fit.effect_cov = fit.sigma2_hat * ztz_inv.bottomRightCorner(p + 1, p + 1);
  fit.training.j = j;
  fit.training.name = "lm";
  fit.training = fit.evaluate(data.x);
  return fit;
}

}  // namespace bcs::agents
