#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bcs/agents/propensity.hpp"
#include "bcs/core_types.hpp"
#include "bcs/error.hpp"
#include "bcs/nngp.hpp"
#include "bcs/rng.hpp"

namespace bcs {

/// Test-only corruption of a conditional, used to show the correctness
/// checks can detect a broken sampler.
enum class FaultInjection { none, halve_sigma2_scale };

/// Everything the Gibbs sampler conditions on, in model coordinates.
struct SynthesisProblem {
  Vector y;
  IndexVector t;
  Matrix agent_mean;   // a_{ji}: n x J
  Matrix agent_var;    // b_{ji}: n x J
  Matrix beta_points;  // inputs of the varying coefficients
  Matrix mu_points;    // inputs of the prognostic term: covariates plus propensity

  Eigen::Index n() const { return y.size(); }
  int num_agents() const { return static_cast<int>(agent_mean.cols()); }
};

/// Assembles a problem from validated data. `beta_columns` selects the
/// encoded covariates driving the varying coefficients (empty: all).
inline SynthesisProblem make_problem(const ObservedData& data, const std::vector<AgentPosterior>& agents,
                                     const Vector& pi, const std::vector<int>& beta_columns = {}) {
  SynthesisProblem pr;
  const Eigen::Index n = data.n();
  pr.y = data.y;
  pr.t = data.t;
  pr.agent_mean.resize(n, static_cast<Eigen::Index>(agents.size()));
  pr.agent_var.resize(n, static_cast<Eigen::Index>(agents.size()));
  for (std::size_t j = 0; j < agents.size(); ++j) {
    pr.agent_mean.col(static_cast<Eigen::Index>(j)) = agents[j].tau_hat;
    pr.agent_var.col(static_cast<Eigen::Index>(j)) = agents[j].variance();
  }
  if (beta_columns.empty()) {
    pr.beta_points = data.x;
  } else {
    pr.beta_points.resize(n, static_cast<Eigen::Index>(beta_columns.size()));
    for (std::size_t c = 0; c < beta_columns.size(); ++c) {
      if (beta_columns[c] < 0 || beta_columns[c] >= data.p())
        throw ValidationError({"varying-coefficient column index out of range"});
      pr.beta_points.col(static_cast<Eigen::Index>(c)) = data.x.col(beta_columns[c]);
    }
  }
  pr.mu_points.resize(n, data.p() + 1);
  pr.mu_points.leftCols(data.p()) = data.x;
  pr.mu_points.col(data.p()) = pi;
  return pr;
}

struct ChainDiagnostics {
  double phi_accept_rate_mu = 0.0;
  Vector phi_accept_rate_beta;
  std::map<std::string, double> ess;
  std::vector<double> log_joint;
  long retained = 0;
};

namespace detail {

inline double ig_log_pdf(double x, double shape, double scale) {
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

}  // namespace detail

/// Effective sample size from the initial positive sequence of
/// autocorrelation pair sums; clamped to [1, N].
inline double effective_sample_size(const std::vector<double>& x) {
  const auto n = static_cast<long>(x.size());
  if (n < 4) return static_cast<double>(n);
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double c0 = 0.0;
  for (double v : x) c0 += (v - mean) * (v - mean);
  c0 /= static_cast<double>(n);
  if (!(c0 > 0.0)) return static_cast<double>(n);
  auto acf = [&](long lag) {
    double s = 0.0;
    for (long i = 0; i + lag < n; ++i) s += (x[static_cast<std::size_t>(i)] - mean) * (x[static_cast<std::size_t>(i + lag)] - mean);
    return s / static_cast<double>(n) / c0;
  };
  double sum = 0.0;
  for (long k = 0; 2 * k + 1 < n; ++k) {
    const double pair = (k == 0 ? 1.0 : acf(2 * k)) + acf(2 * k + 1);
    if (pair <= 0.0) break;
    sum += pair;
  }
  const double tau = std::max(1.0, 2.0 * sum - 1.0);
  return std::clamp(static_cast<double>(n) / tau, 1.0, static_cast<double>(n));
}

/// Systematic-scan Gibbs sampler over the latent fields and hyperparameters.
/// Fields are held internally in centered form (value minus prior mean).
class GibbsSampler {
 public:
  GibbsSampler(SynthesisProblem problem, Priors priors, SamplerSettings settings,
               FaultInjection fault = FaultInjection::none)
      : problem_(std::move(problem)), priors_(std::move(priors)), settings_(settings), fault_(fault) {
    settings_.validate();
    priors_.validate();
    if (priors_.num_agents() != problem_.num_agents())
      throw ValidationError({"prior length does not match the number of agents"});
    if (problem_.n() < 1) throw ValidationError({"empty problem"});
    graph_x_ = nngp::build_graph(problem_.beta_points, settings_.m);
    graph_z_ = nngp::build_graph(problem_.mu_points, settings_.m);
    initialize();
  }

  /// Default start: control-arm outcome mean for mu, prior means for beta,
  /// agent means for f, prior means (or 1) for variances, midpoints for ranges.
  void initialize() {
    const Eigen::Index n = problem_.n();
    const int nj = problem_.num_agents();
    double sum = 0.0;
    Eigen::Index controls = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (problem_.t[i] == 0) {
        sum += problem_.y[i];
        ++controls;
      }
    const double mu0 = controls > 0 ? sum / static_cast<double>(controls) : 0.0;
    mu_star_ = Vector::Constant(n, mu0 - priors_.bar_mu);
    beta_star_.assign(static_cast<std::size_t>(nj) + 1, Vector::Zero(n));
    f_ = problem_.agent_mean;

    hyper_.sigma2 = priors_.ig_sigma.initial_value();
    hyper_.tau2_mu = priors_.ig_mu.initial_value();
    hyper_.tau2_beta.resize(nj + 1);
    for (int j = 0; j <= nj; ++j) hyper_.tau2_beta[j] = priors_.ig_beta[static_cast<std::size_t>(j)].initial_value();
    hyper_.phi_mu = priors_.phi_bounds_mu.midpoint();
    hyper_.phi_beta = Vector::Constant(nj + 1, priors_.phi_bounds_beta.midpoint());
    refresh_coeffs();
  }

  void set_state(const LatentState& s, const Hyperparams& h) {
    mu_star_ = (s.mu.array() - priors_.bar_mu).matrix();
    for (std::size_t j = 0; j < beta_star_.size(); ++j)
      beta_star_[j] = (s.beta.col(static_cast<Eigen::Index>(j)).array() - priors_.bar_beta[static_cast<Eigen::Index>(j)]).matrix();
    f_ = s.f;
    hyper_ = h;
    refresh_coeffs();
  }

  void set_outcome(const Vector& y) { problem_.y = y; }

  LatentState state() const {
    LatentState s;
    const Eigen::Index n = problem_.n();
    s.mu = (mu_star_.array() + priors_.bar_mu).matrix();
    s.beta.resize(n, static_cast<Eigen::Index>(beta_star_.size()));
    for (std::size_t j = 0; j < beta_star_.size(); ++j)
      s.beta.col(static_cast<Eigen::Index>(j)) = (beta_star_[j].array() + priors_.bar_beta[static_cast<Eigen::Index>(j)]).matrix();
    s.f = f_;
    return s;
  }

  const Hyperparams& hyper() const { return hyper_; }
  const Priors& priors() const { return priors_; }
  const SamplerSettings& settings() const { return settings_; }
  const SynthesisProblem& problem() const { return problem_; }
  const nngp::NngpGraph& graph_x() const { return graph_x_; }
  const nngp::NngpGraph& graph_z() const { return graph_z_; }
  const nngp::FieldCoeffs& coeffs_mu() const { return coeffs_mu_; }
  const nngp::FieldCoeffs& coeffs_beta(int j) const { return coeffs_beta_[static_cast<std::size_t>(j)]; }

  long phi_accepts_mu() const { return accepts_mu_; }
  const std::vector<long>& phi_accepts_beta() const { return accepts_beta_; }
  long phi_proposals() const { return proposals_; }

  /// Full sweep in the fixed order beta, mu, f, tau2_beta, tau2_mu, phi, sigma2.
  /// Errors are rethrown as SamplerError tagged with `iteration` and the step.
  void sweep(Rng& rng, long iteration = 0) {
    run_step(iteration, "beta", [&] { step_beta(rng); });
    run_step(iteration, "mu", [&] { step_mu(rng); });
    run_step(iteration, "f", [&] { step_f(rng); });
    run_step(iteration, "tau2_beta", [&] { step_tau2_beta(rng); });
    run_step(iteration, "tau2_mu", [&] { step_tau2_mu(rng); });
    run_step(iteration, "phi", [&] { step_phi(rng); });
    run_step(iteration, "sigma2", [&] { step_sigma2(rng); });
  }

  /// Joint normal update of (beta_0i, ..., beta_Ji) for every unit.
  void step_beta(Rng& rng) {
    const Eigen::Index n = problem_.n();
    const int k = problem_.num_agents() + 1;
    Matrix a(k, k);
    Vector h(k), design(k), z(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      a.setZero();
      for (int j = 0; j < k; ++j) {
        const auto pc = nngp::prior_conditional(beta_star_[static_cast<std::size_t>(j)], hyper_.tau2_beta[j], graph_x_,
                                                coeffs_beta_[static_cast<std::size_t>(j)], static_cast<int>(i));
        a(j, j) = pc.gamma;
        h[j] = pc.linear;
      }
      if (problem_.t[i] == 1) {
        design[0] = 1.0;
        design.tail(k - 1) = f_.row(i).transpose();
        // Likelihood residual measured from the prior-mean synthesis.
        const double resid = problem_.y[i] - (mu_star_[i] + priors_.bar_mu) - design.dot(priors_.bar_beta);
        a.noalias() += design * design.transpose() / hyper_.sigma2;
        h += design * (resid / hyper_.sigma2);
      }
      Eigen::LLT<Matrix> llt(a);
      if (llt.info() != Eigen::Success) throw NumericalError("beta precision not positive definite");
      const Vector mean = llt.solve(h);
      for (int j = 0; j < k; ++j) z[j] = rng.normal();
      const Vector draw = mean + llt.matrixU().solve(z);
      for (int j = 0; j < k; ++j) beta_star_[static_cast<std::size_t>(j)][i] = draw[j];
    }
  }

  void step_mu(Rng& rng) {
    const Eigen::Index n = problem_.n();
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto pc = nngp::prior_conditional(mu_star_, hyper_.tau2_mu, graph_z_, coeffs_mu_, static_cast<int>(i));
      const double prec = 1.0 / hyper_.sigma2 + pc.gamma;
      const double ytilde = problem_.y[i] - treatment_term(i);
      const double lin = (ytilde - priors_.bar_mu) / hyper_.sigma2 + pc.linear;
      mu_star_[i] = lin / prec + rng.normal() / std::sqrt(prec);
    }
  }

  /// Latent factors; untreated units draw from the agent prior because f
  /// only enters the likelihood through T_i.
  void step_f(Rng& rng) {
    const Eigen::Index n = problem_.n();
    const int nj = problem_.num_agents();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < nj; ++j) {
        const double a = problem_.agent_mean(i, j);
        const double b = problem_.agent_var(i, j);
        double prec = 1.0 / b;
        double lin = a / b;
        if (problem_.t[i] == 1) {
          const double bj = beta(j + 1, i);
          double others = beta(0, i);
          for (int l = 0; l < nj; ++l)
            if (l != j) others += beta(l + 1, i) * f_(i, l);
          const double resid = problem_.y[i] - mu(i) - others;
          prec += bj * bj / hyper_.sigma2;
          lin += bj * resid / hyper_.sigma2;
        }
        f_(i, j) = lin / prec + rng.normal() / std::sqrt(prec);
      }
    }
  }

  void step_tau2_beta(Rng& rng) {
    const double n = static_cast<double>(problem_.n());
    for (std::size_t j = 0; j < beta_star_.size(); ++j) {
      const auto& pr = priors_.ig_beta[j];
      const double ss = nngp::scaled_residual_ss(beta_star_[j], graph_x_, coeffs_beta_[j]);
      hyper_.tau2_beta[static_cast<Eigen::Index>(j)] = rng.inverse_gamma((pr.delta + n) / 2.0, pr.eta / 2.0 + 0.5 * ss);
    }
  }

  void step_tau2_mu(Rng& rng) {
    const double n = static_cast<double>(problem_.n());
    const double ss = nngp::scaled_residual_ss(mu_star_, graph_z_, coeffs_mu_);
    hyper_.tau2_mu = rng.inverse_gamma((priors_.ig_mu.delta + n) / 2.0, priors_.ig_mu.eta / 2.0 + 0.5 * ss);
  }

  /// One reflected random-walk Metropolis step per range parameter.
  void step_phi(Rng& rng) {
    ++proposals_;
    const double sd_mu = proposal_sd(priors_.phi_bounds_mu);
    if (metropolis_phi(rng, mu_star_, hyper_.tau2_mu, graph_z_, priors_.phi_bounds_mu, sd_mu, hyper_.phi_mu, coeffs_mu_))
      ++accepts_mu_;
    const double sd_beta = proposal_sd(priors_.phi_bounds_beta);
    for (std::size_t j = 0; j < beta_star_.size(); ++j) {
      double& phi = hyper_.phi_beta[static_cast<Eigen::Index>(j)];
      if (metropolis_phi(rng, beta_star_[j], hyper_.tau2_beta[static_cast<Eigen::Index>(j)], graph_x_,
                         priors_.phi_bounds_beta, sd_beta, phi, coeffs_beta_[j]))
        ++accepts_beta_[j];
    }
  }

  void step_sigma2(Rng& rng) {
    const Eigen::Index n = problem_.n();
    double ss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = problem_.y[i] - treatment_term(i) - mu(i);
      ss += r * r;
    }
    double scale = priors_.ig_sigma.eta / 2.0 + ss / 2.0;
    if (fault_ == FaultInjection::halve_sigma2_scale) scale *= 0.5;
    hyper_.sigma2 = rng.inverse_gamma(priors_.ig_sigma.delta / 2.0 + static_cast<double>(n) / 2.0, scale);
  }

  /// Unnormalized log joint density of (psi, latent fields, y).
  double log_joint() const {
    constexpr double log2pi = 1.8378770664093454835606594728112;
    const Eigen::Index n = problem_.n();
    double lp = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = problem_.y[i] - mu(i) - treatment_term(i);
      lp += -0.5 * (log2pi + std::log(hyper_.sigma2) + r * r / hyper_.sigma2);
      for (int j = 0; j < problem_.num_agents(); ++j) {
        const double d = f_(i, j) - problem_.agent_mean(i, j);
        lp += -0.5 * (log2pi + std::log(problem_.agent_var(i, j)) + d * d / problem_.agent_var(i, j));
      }
    }
    lp += nngp::log_density(mu_star_, 0.0, hyper_.tau2_mu, graph_z_, coeffs_mu_);
    for (std::size_t j = 0; j < beta_star_.size(); ++j)
      lp += nngp::log_density(beta_star_[j], 0.0, hyper_.tau2_beta[static_cast<Eigen::Index>(j)], graph_x_, coeffs_beta_[j]);
    lp += detail::ig_log_pdf(hyper_.sigma2, priors_.ig_sigma.shape(), priors_.ig_sigma.scale());
    lp += detail::ig_log_pdf(hyper_.tau2_mu, priors_.ig_mu.shape(), priors_.ig_mu.scale());
    for (std::size_t j = 0; j < beta_star_.size(); ++j)
      lp += detail::ig_log_pdf(hyper_.tau2_beta[static_cast<Eigen::Index>(j)], priors_.ig_beta[j].shape(),
                               priors_.ig_beta[j].scale());
    lp -= std::log(priors_.phi_bounds_mu.width());
    lp -= static_cast<double>(beta_star_.size()) * std::log(priors_.phi_bounds_beta.width());
    return lp;
  }

 private:
  double beta(int j, Eigen::Index i) const {
    return beta_star_[static_cast<std::size_t>(j)][i] + priors_.bar_beta[j];
  }
  double mu(Eigen::Index i) const { return mu_star_[i] + priors_.bar_mu; }

  /// T_i (beta_0i + sum_j beta_ji f_ji).
  double treatment_term(Eigen::Index i) const {
    if (problem_.t[i] == 0) return 0.0;
    double s = beta(0, i);
    for (int j = 0; j < problem_.num_agents(); ++j) s += beta(j + 1, i) * f_(i, j);
    return s;
  }

  double proposal_sd(const Interval& bounds) const {
    return settings_.phi_proposal_sd ? *settings_.phi_proposal_sd : 0.1 * bounds.width();
  }

  static double reflect(double v, const Interval& b) {
    // Fold into [lo, hi]; a symmetric proposal stays symmetric under reflection.
    const double w = b.width();
    double u = std::fmod(v - b.lo, 2.0 * w);
    if (u < 0.0) u += 2.0 * w;
    return u <= w ? b.lo + u : b.hi - (u - w);
  }

  bool metropolis_phi(Rng& rng, const Vector& centered, double tau2, const nngp::NngpGraph& graph,
                      const Interval& bounds, double sd, double& phi, nngp::FieldCoeffs& coeffs) {
    const double proposal = reflect(phi + sd * rng.normal(), bounds);
    const double log_u = std::log(rng.uniform());
    if (!(proposal > bounds.lo && proposal < bounds.hi)) return false;
    if (proposal == phi) return true;
    auto prop_coeffs = nngp::field_coeffs(graph, proposal);
    const double current = nngp::log_density(centered, 0.0, tau2, graph, coeffs);
    const double candidate = nngp::log_density(centered, 0.0, tau2, graph, prop_coeffs);
    if (log_u < candidate - current) {
      phi = proposal;
      coeffs = std::move(prop_coeffs);
      return true;
    }
    return false;
  }

  void refresh_coeffs() {
    coeffs_mu_ = nngp::field_coeffs(graph_z_, hyper_.phi_mu);
    coeffs_beta_.clear();
    for (Eigen::Index j = 0; j < hyper_.phi_beta.size(); ++j)
      coeffs_beta_.push_back(nngp::field_coeffs(graph_x_, hyper_.phi_beta[j]));
    accepts_beta_.assign(static_cast<std::size_t>(hyper_.phi_beta.size()), 0);
    accepts_mu_ = 0;
    proposals_ = 0;
  }

  template <class F>
  void run_step(long iteration, const char* name, F&& f) {
    try {
      f();
    } catch (const SamplerError&) {
      throw;
    } catch (const std::exception& e) {
      throw SamplerError(iteration, name, e.what());
    }
  }

  SynthesisProblem problem_;
  Priors priors_;
  SamplerSettings settings_;
  FaultInjection fault_;
  nngp::NngpGraph graph_x_;
  nngp::NngpGraph graph_z_;
  nngp::FieldCoeffs coeffs_mu_;
  std::vector<nngp::FieldCoeffs> coeffs_beta_;
  Vector mu_star_;
  std::vector<Vector> beta_star_;
  Matrix f_;
  Hyperparams hyper_;
  long accepts_mu_ = 0;
  std::vector<long> accepts_beta_;
  long proposals_ = 0;
};

struct ChainResult {
  PosteriorDraws draws;
  ChainDiagnostics diagnostics;
};

/// Runs n_iter sweeps from the default start, keeping every thin-th draw after burn-in.
inline ChainResult run_chain(const SynthesisProblem& problem, const Priors& priors, const SamplerSettings& settings,
                             FaultInjection fault = FaultInjection::none) {
  GibbsSampler sampler(problem, priors, settings, fault);
  Rng rng(settings.seed);
  ChainResult out;
  const long keep = settings.retained_count();
  out.draws.states.reserve(static_cast<std::size_t>(keep));
  out.diagnostics.log_joint.reserve(static_cast<std::size_t>(settings.n_iter));

  for (long it = 0; it < settings.n_iter; ++it) {
    sampler.sweep(rng, it);
    out.diagnostics.log_joint.push_back(sampler.log_joint());
    if (it >= settings.n_burn && (it - settings.n_burn) % settings.thin == 0)
      out.draws.states.push_back({sampler.state(), sampler.hyper()});
  }

  const Eigen::Index n = problem.n();
  const auto d = static_cast<Eigen::Index>(out.draws.states.size());
  out.draws.tau.resize(d, n);
  for (Eigen::Index r = 0; r < d; ++r) out.draws.tau.row(r) = out.draws.states[static_cast<std::size_t>(r)].latent.tau().transpose();

  auto& diag = out.diagnostics;
  const double proposals = std::max<long>(1, sampler.phi_proposals());
  diag.phi_accept_rate_mu = static_cast<double>(sampler.phi_accepts_mu()) / proposals;
  diag.phi_accept_rate_beta.resize(static_cast<Eigen::Index>(sampler.phi_accepts_beta().size()));
  for (std::size_t j = 0; j < sampler.phi_accepts_beta().size(); ++j)
    diag.phi_accept_rate_beta[static_cast<Eigen::Index>(j)] = static_cast<double>(sampler.phi_accepts_beta()[j]) / proposals;
  diag.retained = d;

  auto monitor = [&](const std::string& name, const std::function<double(const RetainedDraw&)>& g) {
    std::vector<double> series;
    series.reserve(out.draws.states.size());
    for (const auto& s : out.draws.states) series.push_back(g(s));
    diag.ess[name] = effective_sample_size(series);
  };
  if (d > 0) {
    monitor("sigma2", [](const RetainedDraw& s) { return s.hyper.sigma2; });
    monitor("tau2_mu", [](const RetainedDraw& s) { return s.hyper.tau2_mu; });
    monitor("phi_mu", [](const RetainedDraw& s) { return s.hyper.phi_mu; });
    for (Eigen::Index j = 0; j <= problem.num_agents(); ++j) {
      monitor("tau2_beta_" + std::to_string(j), [j](const RetainedDraw& s) { return s.hyper.tau2_beta[j]; });
      monitor("phi_beta_" + std::to_string(j), [j](const RetainedDraw& s) { return s.hyper.phi_beta[j]; });
    }
    Eigen::Index r = 0;
    std::vector<double> mean_tau;
    for (; r < d; ++r) mean_tau.push_back(out.draws.tau.row(r).mean());
    diag.ess["mean_tau"] = effective_sample_size(mean_tau);
  }
  return out;
}

struct ChainOptions {
  std::vector<int> beta_columns;  // encoded column subset for beta inputs; empty means all
  FaultInjection fault = FaultInjection::none;
};

/// Validates inputs, estimates propensities when none are supplied, and runs the chain.
inline ChainResult run_chain(const ObservedData& data, const std::vector<AgentPosterior>& agents,
                             const Priors& priors, const SamplerSettings& settings,
                             const ChainOptions& options = {}) {
  validate_dataset(data, agents);
  if (agents.empty()) throw ValidationError({"at least one agent required"});
  const Vector pi = agents::estimate_propensity(data).second;
  return run_chain(make_problem(data, agents, pi, options.beta_columns), priors, settings, options.fault);
}

}  // namespace bcs
