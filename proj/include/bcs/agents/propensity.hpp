#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>

#include "bcs/core_types.hpp"
#include "bcs/error.hpp"

namespace bcs::agents {

inline constexpr double kPropensityFloor = 0.01;
inline constexpr double kPropensityCeil = 0.99;

struct PropensityModel {
  Vector coefficients;  // intercept first
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;

  Vector predict(const Matrix& x) const {
    Vector eta = (x * coefficients.tail(x.cols())).array() + coefficients[0];
    Vector p = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
    return p.cwiseMax(kPropensityFloor).cwiseMin(kPropensityCeil);
  }
};

inline Vector clip_propensity(const Vector& pi) { return pi.cwiseMax(kPropensityFloor).cwiseMin(kPropensityCeil); }

/// Logistic regression of T on [1, X] by Newton-Raphson. Fitted values are
/// clipped to [0.01, 0.99]. If `data.pi` is already present the supplied
/// values are clipped and returned without fitting.
inline std::pair<PropensityModel, Vector> estimate_propensity(const ObservedData& data) {
  if (data.pi) return {PropensityModel{}, clip_propensity(*data.pi)};

  const Eigen::Index n = data.n();
  const Eigen::Index k = data.p() + 1;
  Matrix z(n, k);
  z.col(0).setOnes();
  z.rightCols(data.p()) = data.x;
  const Vector t = data.t.cast<double>();
  if (t.sum() == 0.0 || t.sum() == static_cast<double>(n))
    throw AgentError("propensity estimation requires both treatment arms");

  PropensityModel model;
  model.coefficients = Vector::Zero(k);
  constexpr int kMaxIter = 100;
  constexpr double kTol = 1e-8;
  constexpr double kSeparationBound = 30.0;

  for (int it = 1; it <= kMaxIter; ++it) {
    const Vector eta = z * model.coefficients;
    const Vector p = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
    const Vector grad = z.transpose() * (t - p);
    model.gradient_norm = grad.norm();
    model.iterations = it - 1;
    if (model.gradient_norm < kTol) {
      model.converged = true;
      break;
    }
    const Vector w = (p.array() * (1.0 - p.array())).max(1e-12).matrix();
    const Matrix hess = z.transpose() * w.asDiagonal() * z;
    Eigen::LDLT<Matrix> ldlt(hess);
    if (ldlt.info() != Eigen::Success) throw AgentError("propensity Hessian is singular");
    model.coefficients += ldlt.solve(grad);
    model.iterations = it;
    if (model.coefficients.cwiseAbs().maxCoeff() > kSeparationBound)
      throw AgentError("complete separation in propensity model; supply a pi column instead");
  }
  if (!model.converged) {
    const Vector p = (1.0 / (1.0 + (-(z * model.coefficients).array()).exp())).matrix();
    model.gradient_norm = (z.transpose() * (t - p)).norm();
    model.converged = model.gradient_norm < kTol;
  }
  return {model, model.predict(data.x)};
}

}  // namespace bcs::agents
