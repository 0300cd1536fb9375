#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "bcs/geweke.hpp"
#include "bcs/nngp.hpp"
#include "bcs/rng.hpp"

namespace bcs::validation {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string statistic;  // the worst value observed, as text
};

/// Dense N(mean, tau2 * C) log density with C_ij = exp(-d_ij / phi).
inline double dense_log_density(const Matrix& points, const Vector& values, double mean, double tau2, double phi) {
  const auto n = points.rows();
  Matrix c(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < n; ++k) c(i, k) = tau2 * std::exp(-(points.row(i) - points.row(k)).norm() / phi);
  Eigen::LLT<Matrix> llt(c);
  const Vector r = values.array() - mean;
  const Vector z = llt.matrixL().solve(r);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + logdet + z.squaredNorm());
}

/// With m = n - 1 the nearest-neighbor factorization is the exact joint density.
inline CheckResult check_dense_equivalence(std::uint64_t seed = 11) {
  Rng rng(seed);
  double worst = 0.0;
  const int dims[] = {1, 3, 5};
  for (int rep = 0; rep < 25; ++rep) {
    const int d = dims[rep % 3];
    const Matrix pts = Matrix::NullaryExpr(20, d, [&] { return rng.uniform(); });
    const double phi = rng.uniform(0.1, 1.0);
    const double tau2 = rng.uniform(0.5, 2.0);
    const Vector v = Vector::NullaryExpr(20, [&] { return rng.normal(); });
    const auto g = nngp::build_graph(pts, 19);
    const double a = nngp::nngp_log_density(v, 0.3, tau2, g, phi);
    const double b = dense_log_density(pts, v, 0.3, tau2, phi);
    worst = std::max(worst, std::abs(a - b));
  }
  return {"nngp_dense_equivalence", worst < 1e-6, "max_abs_diff=" + std::to_string(worst)};
}

/// Conditioning coefficients against the partitioned covariance formulas.
inline CheckResult check_schur_conditioning(std::uint64_t seed = 12) {
  Rng rng(seed);
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const int k = static_cast<int>(rng.uniform_int(1, 5));
    const int d = static_cast<int>(rng.uniform_int(1, 4));
    const Matrix pts = Matrix::NullaryExpr(k + 1, d, [&] { return rng.uniform(); });
    const double phi = rng.uniform(0.05, 2.0);
    Matrix s(k + 1, k + 1);
    for (int i = 0; i <= k; ++i)
      for (int j = 0; j <= k; ++j) s(i, j) = std::exp(-(pts.row(i) - pts.row(j)).norm() / phi);
    const Matrix s_nn = s.bottomRightCorner(k, k);
    const Vector s_in = s.block(1, 0, k, 1);
    const Vector b_ref = s_nn.fullPivLu().solve(s_in);
    const double f_ref = 1.0 - s_in.dot(b_ref);

    Vector d_to(k);
    Matrix d_among(k, k);
    for (int a = 0; a < k; ++a) {
      d_to[a] = (pts.row(0) - pts.row(a + 1)).norm();
      for (int b = 0; b < k; ++b) d_among(a, b) = (pts.row(a + 1) - pts.row(b + 1)).norm();
    }
    const auto cc = nngp::conditioning_from_distances(d_to, d_among, phi);
    worst = std::max({worst, (cc.b - b_ref).cwiseAbs().maxCoeff(), std::abs(cc.f - std::max(f_ref, 0.0))});
  }
  return {"schur_conditioning", worst < 1e-10, "max_abs_diff=" + std::to_string(worst)};
}

inline CheckResult check_geweke(FaultInjection fault = FaultInjection::none) {
  GewekeConfig cfg;
  cfg.fault = fault;
  const auto r = geweke_test(cfg);
  std::string worst = "none";
  double z = 0.0;
  for (const auto& s : r.statistics)
    if (std::abs(s.z) >= z) {
      z = std::abs(s.z);
      worst = s.name;
    }
  return {"geweke_joint_distribution", z < 4.0, "max_abs_z=" + std::to_string(z) + " (" + worst + ")"};
}

inline std::vector<CheckResult> run_all(FaultInjection fault = FaultInjection::none) {
  return {check_dense_equivalence(), check_schur_conditioning(), check_geweke(fault)};
}

}  // namespace bcs::validation
