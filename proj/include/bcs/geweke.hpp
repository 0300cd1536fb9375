#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bcs/core_types.hpp"
#include "bcs/nngp.hpp"
#include "bcs/rng.hpp"
#include "bcs/sampler.hpp"

namespace bcs {

/// Joint-distribution ("getting it right") test of the Gibbs sampler on a
/// small synthetic design.
struct GewekeConfig {
  int n = 10;
  int num_agents = 2;
  int m = 3;
  long draws = 5000;
  int sweeps_per_draw = 1;
  int batches = 50;
  std::uint64_t seed = 20240607;
  FaultInjection fault = FaultInjection::none;
  /// Variance priors need finite fourth moments for the z-scores to be
  /// meaningful, hence the tighter default IG(5, 5).
  IgPrior variance_prior{10.0, 10.0};
};

struct GewekeStatistic {
  std::string name;
  double mean_marginal = 0.0;
  double mean_successive = 0.0;
  double z = 0.0;
};

struct GewekeResult {
  std::vector<GewekeStatistic> statistics;

  double max_abs_z() const {
    double m = 0.0;
    for (const auto& s : statistics) m = std::max(m, std::abs(s.z));
    return m;
  }
};

namespace detail {

struct GewekeDesign {
  SynthesisProblem problem;
  Priors priors;
};

inline GewekeDesign geweke_design(const GewekeConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0));
  GewekeDesign d;
  auto& pr = d.problem;
  const Eigen::Index n = cfg.n;
  pr.y = Vector::Zero(n);
  pr.t.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) pr.t[i] = static_cast<int>(i % 2);
  pr.agent_mean.resize(n, cfg.num_agents);
  pr.agent_var.resize(n, cfg.num_agents);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < cfg.num_agents; ++j) {
      pr.agent_mean(i, j) = rng.normal(1.0, 0.5);
      pr.agent_var(i, j) = rng.uniform(0.1, 0.5);
    }
  pr.beta_points.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) pr.beta_points(i, c) = rng.uniform();
  pr.mu_points.resize(n, 3);
  pr.mu_points.leftCols(2) = pr.beta_points;
  pr.mu_points.col(2).setConstant(0.5);

  auto& p = d.priors;
  p.bar_beta = Vector::Constant(cfg.num_agents + 1, 1.0 / cfg.num_agents);
  p.bar_beta[0] = 0.0;
  p.bar_mu = 0.0;
  p.ig_sigma = cfg.variance_prior;
  p.ig_mu = cfg.variance_prior;
  p.ig_beta.assign(static_cast<std::size_t>(cfg.num_agents) + 1, cfg.variance_prior);
  p.phi_bounds_beta = default_phi_bounds(pr.beta_points);
  p.phi_bounds_mu = default_phi_bounds(pr.mu_points);
  return d;
}

struct JointDraw {
  LatentState latent;
  Hyperparams hyper;
};

inline JointDraw draw_from_prior(const GibbsSampler& s, Rng& rng) {
  const auto& pr = s.priors();
  const auto& problem = s.problem();
  const int k = problem.num_agents() + 1;
  JointDraw d;
  auto& h = d.hyper;
  h.sigma2 = rng.inverse_gamma(pr.ig_sigma.shape(), pr.ig_sigma.scale());
  h.tau2_mu = rng.inverse_gamma(pr.ig_mu.shape(), pr.ig_mu.scale());
  h.tau2_beta.resize(k);
  for (int j = 0; j < k; ++j)
    h.tau2_beta[j] = rng.inverse_gamma(pr.ig_beta[static_cast<std::size_t>(j)].shape(),
                                       pr.ig_beta[static_cast<std::size_t>(j)].scale());
  h.phi_mu = rng.uniform(pr.phi_bounds_mu.lo, pr.phi_bounds_mu.hi);
  h.phi_beta.resize(k);
  for (int j = 0; j < k; ++j) h.phi_beta[j] = rng.uniform(pr.phi_bounds_beta.lo, pr.phi_bounds_beta.hi);

  const Eigen::Index n = problem.n();
  d.latent.mu = nngp::sample_field(pr.bar_mu, h.tau2_mu, s.graph_z(), nngp::field_coeffs(s.graph_z(), h.phi_mu), rng);
  d.latent.beta.resize(n, k);
  for (int j = 0; j < k; ++j)
    d.latent.beta.col(j) =
        nngp::sample_field(pr.bar_beta[j], h.tau2_beta[j], s.graph_x(), nngp::field_coeffs(s.graph_x(), h.phi_beta[j]), rng);
  d.latent.f.resize(n, k - 1);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < k - 1; ++j)
      d.latent.f(i, j) = rng.normal(problem.agent_mean(i, j), std::sqrt(problem.agent_var(i, j)));
  return d;
}

inline Vector draw_outcome(const SynthesisProblem& problem, const LatentState& latent, double sigma2, Rng& rng) {
  const Vector tau = latent.tau();
  Vector y(problem.n());
  for (Eigen::Index i = 0; i < problem.n(); ++i)
    y[i] = latent.mu[i] + (problem.t[i] == 1 ? tau[i] : 0.0) + std::sqrt(sigma2) * rng.normal();
  return y;
}

using Monitor = std::pair<std::string, std::function<double(const LatentState&, const Hyperparams&)>>;

inline std::vector<Monitor> geweke_monitors(int num_agents) {
  std::vector<Monitor> m;
  m.emplace_back("sigma2", [](const LatentState&, const Hyperparams& h) { return h.sigma2; });
  m.emplace_back("tau2_mu", [](const LatentState&, const Hyperparams& h) { return h.tau2_mu; });
  m.emplace_back("phi_mu", [](const LatentState&, const Hyperparams& h) { return h.phi_mu; });
  for (int j = 0; j <= num_agents; ++j) {
    m.emplace_back("tau2_beta_" + std::to_string(j), [j](const LatentState&, const Hyperparams& h) { return h.tau2_beta[j]; });
    m.emplace_back("phi_beta_" + std::to_string(j), [j](const LatentState&, const Hyperparams& h) { return h.phi_beta[j]; });
    m.emplace_back("mean_beta_" + std::to_string(j), [j](const LatentState& s, const Hyperparams&) { return s.beta.col(j).mean(); });
  }
  m.emplace_back("mean_mu", [](const LatentState& s, const Hyperparams&) { return s.mu.mean(); });
  m.emplace_back("mean_tau", [](const LatentState& s, const Hyperparams&) { return s.tau().mean(); });
  m.emplace_back("mean_sq_tau", [](const LatentState& s, const Hyperparams&) { return s.tau().squaredNorm() / static_cast<double>(s.tau().size()); });
  m.emplace_back("mean_f", [](const LatentState& s, const Hyperparams&) { return s.f.mean(); });
  return m;
}

}  // namespace detail

/// Compares the marginal-conditional simulator (parameters from the prior,
/// then data) with the successive-conditional simulator (alternating Gibbs
/// sweeps and data redraws). Returns one z-score per monitored statistic,
/// using batch means for the autocorrelated successive series.
inline GewekeResult geweke_test(const GewekeConfig& cfg) {
  if (cfg.draws < 2L * cfg.batches || cfg.batches < 2) throw Error("geweke", "insufficient draws");
  auto design = detail::geweke_design(cfg);
  SamplerSettings settings;
  settings.m = cfg.m;
  settings.n_iter = 1;
  settings.n_burn = 0;
  GibbsSampler sampler(design.problem, design.priors, settings, cfg.fault);
  const auto monitors = detail::geweke_monitors(cfg.num_agents);
  const std::size_t k = monitors.size();
  const auto draws = static_cast<std::size_t>(cfg.draws);

  std::vector<std::vector<double>> marginal(k, std::vector<double>(draws));
  std::vector<std::vector<double>> successive(k, std::vector<double>(draws));

  Rng rng_mc(derive_seed(cfg.seed, 1));
  for (std::size_t s = 0; s < draws; ++s) {
    auto d = detail::draw_from_prior(sampler, rng_mc);
    for (std::size_t q = 0; q < k; ++q) marginal[q][s] = monitors[q].second(d.latent, d.hyper);
  }

  Rng rng_sc(derive_seed(cfg.seed, 2));
  {
    auto d = detail::draw_from_prior(sampler, rng_sc);
    sampler.set_state(d.latent, d.hyper);
    sampler.set_outcome(detail::draw_outcome(design.problem, d.latent, d.hyper.sigma2, rng_sc));
  }
  for (std::size_t s = 0; s < draws; ++s) {
    for (int r = 0; r < cfg.sweeps_per_draw; ++r) sampler.sweep(rng_sc, static_cast<long>(s));
    const auto latent = sampler.state();
    for (std::size_t q = 0; q < k; ++q) successive[q][s] = monitors[q].second(latent, sampler.hyper());
    sampler.set_outcome(detail::draw_outcome(design.problem, latent, sampler.hyper().sigma2, rng_sc));
  }

  GewekeResult result;
  const double nd = static_cast<double>(draws);
  const std::size_t batch = draws / static_cast<std::size_t>(cfg.batches);
  for (std::size_t q = 0; q < k; ++q) {
    const auto& a = marginal[q];
    const auto& b = successive[q];
    double ma = 0.0, mb = 0.0;
    for (std::size_t s = 0; s < draws; ++s) {
      ma += a[s];
      mb += b[s];
    }
    ma /= nd;
    mb /= nd;
    double va = 0.0;
    for (double v : a) va += (v - ma) * (v - ma);
    va /= (nd - 1.0);
    // Batch-means estimate of the long-run variance of the successive series.
    double vb = 0.0;
    const std::size_t used = batch * static_cast<std::size_t>(cfg.batches);
    double mean_used = 0.0;
    for (std::size_t s = 0; s < used; ++s) mean_used += b[s];
    mean_used /= static_cast<double>(used);
    for (int g = 0; g < cfg.batches; ++g) {
      double bm = 0.0;
      for (std::size_t s = 0; s < batch; ++s) bm += b[static_cast<std::size_t>(g) * batch + s];
      bm /= static_cast<double>(batch);
      vb += (bm - mean_used) * (bm - mean_used);
    }
    vb = vb / (cfg.batches - 1.0) * static_cast<double>(batch);
    const double se = std::sqrt(va / nd + vb / nd);
    result.statistics.push_back({monitors[q].first, ma, mb, se > 0.0 ? (ma - mb) / se : 0.0});
  }
  return result;
}

}  // namespace bcs
