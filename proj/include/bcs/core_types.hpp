#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bcs/error.hpp"

namespace bcs {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IndexVector = Eigen::VectorXi;

/// Agent standard errors below this are rejected by validation.
inline constexpr double kMinAgentSe = 1e-8;

/// Outcomes, binary treatments and encoded covariates for n units.
struct ObservedData {
  Vector y;
  IndexVector t;
  Matrix x;
  std::optional<Vector> pi;
  std::vector<std::string> covariate_names;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index p() const { return x.cols(); }
};

/// Normal approximation N(tau_hat, se^2) of one estimator's posterior at each unit.
struct AgentPosterior {
  int j = 0;
  std::string name;
  Vector tau_hat;
  Vector se;

  Vector variance() const { return se.array().square().matrix(); }
};

/// Inverse-gamma prior IG(delta/2, eta/2).
struct IgPrior {
  double delta = 2.0;
  double eta = 1.0;

  double shape() const { return delta / 2.0; }
  double scale() const { return eta / 2.0; }
  /// Prior mean when it exists, else 1.
  double initial_value() const { return delta > 2.0 ? eta / (delta - 2.0) : 1.0; }
};

struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  double width() const { return hi - lo; }
  double midpoint() const { return 0.5 * (lo + hi); }
  bool contains(double v) const { return v > lo && v < hi; }
};

struct Priors {
  Vector bar_beta;  // length J+1
  double bar_mu = 0.0;
  IgPrior ig_sigma;
  IgPrior ig_mu;
  std::vector<IgPrior> ig_beta;  // length J+1
  Interval phi_bounds_mu;
  Interval phi_bounds_beta;

  int num_agents() const { return static_cast<int>(bar_beta.size()) - 1; }

  void validate() const {
    std::vector<std::string> errors;
    auto check_ig = [&](const IgPrior& p, const std::string& name) {
      if (!(p.delta > 0.0) || !(p.eta > 0.0))
        errors.push_back("inverse-gamma prior " + name + " requires delta > 0 and eta > 0");
    };
    auto check_interval = [&](const Interval& iv, const std::string& name) {
      if (!(iv.lo > 0.0) || !(iv.hi > iv.lo))
        errors.push_back("range bounds " + name + " require 0 < lo < hi");
    };
    if (bar_beta.size() < 2) errors.push_back("bar_beta must have length J+1 >= 2");
    if (static_cast<Eigen::Index>(ig_beta.size()) != bar_beta.size())
      errors.push_back("ig_beta must have length J+1");
    check_ig(ig_sigma, "sigma");
    check_ig(ig_mu, "mu");
    for (std::size_t j = 0; j < ig_beta.size(); ++j) check_ig(ig_beta[j], "beta_" + std::to_string(j));
    check_interval(phi_bounds_mu, "mu");
    check_interval(phi_bounds_beta, "beta");
    if (!errors.empty()) throw ValidationError(std::move(errors));
  }
};

/// psi: variance and range parameters.
struct Hyperparams {
  double sigma2 = 1.0;
  double tau2_mu = 1.0;
  Vector tau2_beta;
  double phi_mu = 1.0;
  Vector phi_beta;
};

struct SamplerSettings {
  int m = 15;
  long n_iter = 2000;
  long n_burn = 500;
  long thin = 1;
  std::uint64_t seed = 1;
  /// Random-walk sd for range parameters; unset means 10% of the prior bound width.
  std::optional<double> phi_proposal_sd;

  long retained_count() const { return n_iter <= n_burn ? 0 : (n_iter - n_burn + thin - 1) / thin; }

  void validate() const {
    std::vector<std::string> errors;
    if (m < 1) errors.push_back("m must be >= 1");
    if (thin < 1) errors.push_back("thin must be >= 1");
    if (n_burn < 0) errors.push_back("n_burn must be >= 0");
    if (!(n_burn < n_iter)) errors.push_back("n_burn must be < n_iter");
    if (phi_proposal_sd && !(*phi_proposal_sd >= 0.0))
      errors.push_back("phi_proposal_sd must be nonnegative");
    if (!errors.empty()) throw ValidationError(std::move(errors));
  }
};

/// Current Gibbs values of the latent fields.
struct LatentState {
  Vector mu;    // n
  Matrix beta;  // n x (J+1)
  Matrix f;     // n x J

  /// beta_0 + sum_j beta_j f_j at every unit.
  Vector tau() const {
    Vector out = beta.col(0);
    for (Eigen::Index j = 0; j < f.cols(); ++j)
      out.array() += beta.col(j + 1).array() * f.col(j).array();
    return out;
  }
};

struct RetainedDraw {
  LatentState latent;
  Hyperparams hyper;
};

struct PosteriorDraws {
  std::vector<RetainedDraw> states;
  Matrix tau;  // draws x n

  Eigen::Index size() const { return static_cast<Eigen::Index>(states.size()); }
};

struct ValidationReport {
  Eigen::Index n = 0;
  Eigen::Index p = 0;
  int num_agents = 0;
  double treated_fraction = 0.0;
};

/// Checks every data and agent invariant; throws ValidationError listing all
/// violations at once.
inline ValidationReport validate_dataset(const ObservedData& data,
                                         const std::vector<AgentPosterior>& agents) {
  std::vector<std::string> errors;
  const Eigen::Index n = data.y.size();
  if (n < 2) errors.push_back("at least 2 observations required");
  if (data.t.size() != n) errors.push_back("length(t) != length(y)");
  if (data.x.rows() != n) errors.push_back("rows(x) != length(y)");
  if (!data.y.allFinite()) errors.push_back("nonfinite outcome");
  if (!data.x.allFinite()) errors.push_back("nonfinite covariate");

  Eigen::Index treated = 0;
  bool bad_t = false;
  for (Eigen::Index i = 0; i < data.t.size(); ++i) {
    if (data.t[i] == 1) ++treated;
    else if (data.t[i] != 0) bad_t = true;
  }
  if (bad_t) errors.push_back("treatment must be 0 or 1");
  if (data.t.size() > 0 && (treated == 0 || treated == data.t.size()))
    errors.push_back("both treatment arms required");

  if (data.pi) {
    if (data.pi->size() != n) errors.push_back("length(pi) != length(y)");
    for (Eigen::Index i = 0; i < data.pi->size(); ++i) {
      const double p = (*data.pi)[i];
      if (!(p > 0.0 && p < 1.0)) {
        errors.push_back("propensity outside (0,1) at row " + std::to_string(i));
        break;
      }
    }
  }

  for (std::size_t k = 0; k < agents.size(); ++k) {
    const auto& a = agents[k];
    const std::string tag = "agent " + std::to_string(k + 1);
    if (a.tau_hat.size() != n || a.se.size() != n) {
      errors.push_back(tag + ": length mismatch");
      continue;
    }
    if (!a.tau_hat.allFinite()) errors.push_back(tag + ": nonfinite estimate");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(a.se[i] >= kMinAgentSe) || !std::isfinite(a.se[i])) {
        errors.push_back(tag + ": nonpositive standard error at row " + std::to_string(i));
        break;
      }
    }
  }
  if (!errors.empty()) throw ValidationError(std::move(errors));

  return {n, data.x.cols(), static_cast<int>(agents.size()),
          static_cast<double>(treated) / static_cast<double>(n)};
}

/// Largest pairwise Euclidean distance between rows.
inline double max_pairwise_distance(const Matrix& points) {
  double best = 0.0;
  for (Eigen::Index a = 0; a < points.rows(); ++a)
    for (Eigen::Index b = a + 1; b < points.rows(); ++b)
      best = std::max(best, (points.row(a) - points.row(b)).squaredNorm());
  return std::sqrt(best);
}

/// Range bounds (0.05 D, 2 D) with D the point cloud diameter.
inline Interval default_phi_bounds(const Matrix& points) {
  double d = max_pairwise_distance(points);
  if (!(d > 0.0)) d = 1.0;
  return {0.05 * d, 2.0 * d};
}

inline double control_mean(const ObservedData& data) {
  double sum = 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    if (data.t[i] == 0) {
      sum += data.y[i];
      ++count;
    }
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

/// Equal-weight prior synthesis, IG(1, 1/2) variance priors, data-scaled range bounds.
inline Priors default_priors(const ObservedData& data, int num_agents, const Matrix& beta_points,
                             const Matrix& mu_points) {
  Priors p;
  p.bar_beta = Vector::Constant(num_agents + 1, 1.0 / num_agents);
  p.bar_beta[0] = 0.0;
  p.bar_mu = control_mean(data);
  p.ig_beta.assign(static_cast<std::size_t>(num_agents) + 1, IgPrior{});
  p.phi_bounds_beta = default_phi_bounds(beta_points);
  p.phi_bounds_mu = default_phi_bounds(mu_points);
  return p;
}

}  // namespace bcs
