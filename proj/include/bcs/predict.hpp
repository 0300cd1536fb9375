#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bcs/core_types.hpp"
#include "bcs/error.hpp"
#include "bcs/nngp.hpp"
#include "bcs/rng.hpp"

namespace bcs {

/// Training inputs of the varying coefficients plus the prior means and
/// neighbor count needed to extend the fields to new points.
struct PredictionContext {
  Matrix beta_points;
  Vector bar_beta;
  int m = 15;
};

struct AgentValue {
  double tau_hat = 0.0;
  double se = 0.0;
};

struct PosteriorSummary {
  double mean = 0.0;
  double sd = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
};

struct TauPrediction {
  Vector draws;
  PosteriorSummary summary;
};

/// Linear-interpolation sample quantile (Hyndman-Fan type 7).
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Mean, sd and equal-tailed 95% interval of a sample.
inline PosteriorSummary summarize(const Eigen::Ref<const Vector>& draws) {
  PosteriorSummary s;
  const auto n = static_cast<double>(draws.size());
  s.mean = draws.mean();
  s.sd = n > 1.0 ? std::sqrt((draws.array() - s.mean).square().sum() / (n - 1.0)) : 0.0;
  std::vector<double> v(draws.data(), draws.data() + draws.size());
  s.lo95 = quantile(v, 0.025);
  s.hi95 = quantile(v, 0.975);
  return s;
}

/// Draws beta_j(x0) for every retained draw from the conditional normal
/// given the field values at the m nearest training points.
/// Returns a (draws x (J+1)) matrix.
inline Matrix predict_beta_at(const Eigen::RowVectorXd& x0, const PosteriorDraws& draws,
                              const PredictionContext& ctx, Rng& rng) {
  if (x0.size() != ctx.beta_points.cols())
    throw EncodingError("prediction point has " + std::to_string(x0.size()) + " coordinates, expected " +
                        std::to_string(ctx.beta_points.cols()));
  const auto nb = nngp::nearest_points(ctx.beta_points, x0, ctx.m);
  Vector d_to(static_cast<Eigen::Index>(nb.size()));
  for (std::size_t a = 0; a < nb.size(); ++a) d_to[static_cast<Eigen::Index>(a)] = (ctx.beta_points.row(nb[a]) - x0).norm();
  const Matrix d_among = nngp::detail::pairwise_distances(ctx.beta_points, nb);

  const auto k = ctx.bar_beta.size();
  Matrix out(draws.size(), k);
  std::vector<double> cached_phi(static_cast<std::size_t>(k), -1.0);
  std::vector<nngp::ConditioningCoeffs> cached(static_cast<std::size_t>(k));
  for (Eigen::Index d = 0; d < draws.size(); ++d) {
    const auto& st = draws.states[static_cast<std::size_t>(d)];
    for (Eigen::Index j = 0; j < k; ++j) {
      const double phi = st.hyper.phi_beta[j];
      auto& cc = cached[static_cast<std::size_t>(j)];
      if (cached_phi[static_cast<std::size_t>(j)] != phi) {
        cc = nngp::conditioning_from_distances(d_to, d_among, phi);
        cached_phi[static_cast<std::size_t>(j)] = phi;
      }
      double mean = 0.0;
      for (std::size_t a = 0; a < nb.size(); ++a)
        mean += cc.b[static_cast<Eigen::Index>(a)] * (st.latent.beta(nb[a], j) - ctx.bar_beta[j]);
      out(d, j) = ctx.bar_beta[j] + mean + std::sqrt(st.hyper.tau2_beta[j] * cc.f) * rng.normal();
    }
  }
  return out;
}

/// Posterior sample of tau(x0) = beta_0(x0) + sum_j beta_j(x0) f_j(x0) with
/// f_j(x0) ~ N(tau_hat_j(x0), se_j(x0)^2).
inline TauPrediction predict_tau_at(const Eigen::RowVectorXd& x0, const std::vector<AgentValue>& agent_values,
                                    const PosteriorDraws& draws, const PredictionContext& ctx, Rng& rng) {
  const auto num_agents = static_cast<std::size_t>(ctx.bar_beta.size() - 1);
  if (agent_values.size() != num_agents) {
    std::string missing;
    for (std::size_t j = agent_values.size(); j < num_agents; ++j) missing += (missing.empty() ? "" : ", ") + std::to_string(j + 1);
    throw ValidationError({"missing agent value at prediction point for agent(s) " +
                           (missing.empty() ? std::string("(too many supplied)") : missing)});
  }
  for (std::size_t j = 0; j < num_agents; ++j)
    if (!(agent_values[j].se > 0.0) || !std::isfinite(agent_values[j].tau_hat))
      throw ValidationError({"agent " + std::to_string(j + 1) + " value at prediction point is missing or has nonpositive se"});

  const Matrix beta = predict_beta_at(x0, draws, ctx, rng);
  TauPrediction out;
  out.draws.resize(beta.rows());
  for (Eigen::Index d = 0; d < beta.rows(); ++d) {
    double tau = beta(d, 0);
    for (std::size_t j = 0; j < num_agents; ++j)
      tau += beta(d, static_cast<Eigen::Index>(j) + 1) * rng.normal(agent_values[j].tau_hat, agent_values[j].se);
    out.draws[d] = tau;
  }
  out.summary = summarize(out.draws);
  return out;
}

/// Predictions at many points; point r uses its own RNG stream derived
/// from (seed, r) so results do not depend on evaluation order.
inline std::vector<TauPrediction> predict_tau_at_points(const Matrix& points, const std::vector<AgentPosterior>& agents,
                                                        const PosteriorDraws& draws, const PredictionContext& ctx,
                                                        std::uint64_t seed) {
  std::vector<TauPrediction> out;
  out.reserve(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    std::vector<AgentValue> values;
    for (const auto& a : agents) {
      if (a.tau_hat.size() != points.rows() || a.se.size() != points.rows())
        throw ValidationError({"agent " + std::to_string(a.j) + " has no value for prediction row " + std::to_string(r)});
      values.push_back({a.tau_hat[r], a.se[r]});
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    out.push_back(predict_tau_at(points.row(r), values, draws, ctx, rng));
  }
  return out;
}

}  // namespace bcs
