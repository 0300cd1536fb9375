#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "bcs/agents/additive.hpp"
#include "bcs/agents/knn.hpp"
#include "bcs/agents/linear.hpp"
#include "bcs/config.hpp"
#include "bcs/core_types.hpp"
#include "bcs/encoding.hpp"
#include "bcs/error.hpp"
#include "bcs/predict.hpp"
#include "bcs/rng.hpp"
#include "bcs/sampler.hpp"

namespace bcs::sim {

enum class Form { A, B };
enum class Evaluation { in_sample, out_of_sample };
enum class Method { bcs, lm, am, knn, oracle };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::bcs: return "bcs";
    case Method::lm: return "lm";
    case Method::am: return "am";
    case Method::knn: return "knn";
    case Method::oracle: return "oracle";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "bcs") return Method::bcs;
  if (s == "lm") return Method::lm;
  if (s == "am") return Method::am;
  if (s == "knn") return Method::knn;
  if (s == "oracle") return Method::oracle;
  throw ConfigError("unknown method '" + s + "'");
}

struct ScenarioConfig {
  Form mu_form = Form::A;
  Form tau_form = Form::A;
  int n = 300;
  int p = 5;
  double sigma2 = 1.0;
  int n_test = 0;
  int replications = 20;
  std::uint64_t seed = 1;
  Evaluation evaluation = Evaluation::in_sample;

  void validate() const {
    if (p < 5) throw ConfigError("p must be >= 5");
    if (n < 10) throw ConfigError("n must be >= 10");
    if (replications < 1) throw ConfigError("replications must be >= 1");
    if (!(sigma2 > 0.0)) throw ConfigError("sigma2 must be positive");
    if (evaluation == Evaluation::out_of_sample && n_test < 1)
      throw ConfigError("out_of_sample evaluation requires n_test >= 1");
  }
};

/// Scenario numbering of the synthetic study: 1 = (A,A), 2 = (B,A), 3 = (A,B), 4 = (B,B)
/// as (prognostic form, effect form).
inline ScenarioConfig scenario(int id) {
  ScenarioConfig c;
  if (id < 1 || id > 4) throw ConfigError("scenario must be 1..4");
  c.mu_form = (id == 2 || id == 4) ? Form::B : Form::A;
  c.tau_form = (id >= 3) ? Form::B : Form::A;
  return c;
}

/// Covariates are indexed from zero: x[1] is X2, x[2] is X3, x[4] is X5 (level 1/2/3).
inline double mu_value(Form f, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return f == Form::A ? -7.0 + 6.0 * std::abs(x[2]) - 3.0 * x[4] : 2.0 + 2.0 * std::sin(3.0 * x[2]);
}

inline double tau_value(Form f, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  const double base = 1.0 + 2.0 * x[1] * x[4];
  return f == Form::A ? base : base + x[2] * x[2] / 2.0;
}

struct ScenarioDraw {
  Matrix raw_x;  // numeric covariates as generated (X5 as its level value)
  ObservedData data;
  Vector tau;
  EncodingReport encoding;
  Matrix test_raw_x;
  Matrix test_x;
  Vector test_tau;
};

inline RawTable raw_table(const Matrix& raw_x) {
  RawTable table;
  for (Eigen::Index c = 0; c < raw_x.cols(); ++c) {
    RawColumn col;
    col.name = "X" + std::to_string(c + 1);
    col.kind = c == 3 ? ColumnKind::binary : (c == 4 ? ColumnKind::categorical : ColumnKind::continuous);
    for (Eigen::Index i = 0; i < raw_x.rows(); ++i) {
      const double v = raw_x(i, c);
      if (col.kind == ColumnKind::continuous) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        col.cells.emplace_back(buf);
      } else {
        col.cells.push_back(std::to_string(static_cast<int>(v)));
      }
    }
    table.push_back(std::move(col));
  }
  return table;
}

namespace detail {

inline Eigen::RowVectorXd draw_covariates(int p, Rng& rng) {
  Eigen::RowVectorXd x(p);
  for (int c = 0; c < p; ++c) {
    if (c == 3) x[c] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    else if (c == 4) x[c] = static_cast<double>(rng.uniform_int(1, 3));
    else x[c] = rng.normal();
  }
  return x;
}

}  // namespace detail

/// Synthetic data for one replicate; deterministic in (cfg.seed, replicate).
/// Treatment is randomized with known propensity 1/2.
inline ScenarioDraw generate_scenario(const ScenarioConfig& cfg, int replicate) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(replicate)));
  ScenarioDraw d;
  const Eigen::Index n = cfg.n;
  d.raw_x.resize(n, cfg.p);
  d.tau.resize(n);
  d.data.y.resize(n);
  d.data.t.resize(n);
  const double noise_sd = std::sqrt(cfg.sigma2);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.raw_x.row(i) = detail::draw_covariates(cfg.p, rng);
    d.data.t[i] = rng.bernoulli(0.5) ? 1 : 0;
    d.tau[i] = tau_value(cfg.tau_form, d.raw_x.row(i));
    d.data.y[i] = mu_value(cfg.mu_form, d.raw_x.row(i)) + d.tau[i] * d.data.t[i] + noise_sd * rng.normal();
  }
  auto [x, report] = encode_covariates(raw_table(d.raw_x));
  d.data.x = std::move(x);
  d.encoding = std::move(report);
  d.data.covariate_names = d.encoding.output_names();
  d.data.pi = Vector::Constant(n, 0.5);

  if (cfg.n_test > 0) {
    d.test_raw_x.resize(cfg.n_test, cfg.p);
    d.test_tau.resize(cfg.n_test);
    for (Eigen::Index i = 0; i < cfg.n_test; ++i) {
      d.test_raw_x.row(i) = detail::draw_covariates(cfg.p, rng);
      d.test_tau[i] = tau_value(cfg.tau_form, d.test_raw_x.row(i));
    }
    d.test_x = apply_encoding(d.encoding, raw_table(d.test_raw_x));
  }
  return d;
}

struct Metrics {
  double mse = 0.0;
  std::optional<double> cp;  // percent
  std::optional<double> al;
};

struct IntervalSet {
  Vector lo;
  Vector hi;
};

inline Metrics evaluate(const Vector& tau_hat, const std::optional<IntervalSet>& intervals, const Vector& tau_true) {
  if (tau_hat.size() != tau_true.size()) throw ValidationError({"evaluate: estimate and truth lengths differ"});
  if (tau_true.size() == 0) throw ValidationError({"evaluate: empty evaluation set"});
  Metrics m;
  m.mse = (tau_hat - tau_true).squaredNorm() / static_cast<double>(tau_true.size());
  if (intervals) {
    if (intervals->lo.size() != tau_true.size() || intervals->hi.size() != tau_true.size())
      throw ValidationError({"evaluate: interval and truth lengths differ"});
    Eigen::Index covered = 0;
    for (Eigen::Index i = 0; i < tau_true.size(); ++i)
      if (intervals->lo[i] <= tau_true[i] && tau_true[i] <= intervals->hi[i]) ++covered;
    m.cp = 100.0 * static_cast<double>(covered) / static_cast<double>(tau_true.size());
    m.al = (intervals->hi - intervals->lo).mean();
  }
  return m;
}

struct AgentSettings {
  int am_bootstrap_reps = 200;
  int knn_subsample_reps = 100;
  std::optional<int> knn_k;
  double oracle_se = 0.1;
};

/// Everything needed to run a Monte Carlo study.
struct SimulationPlan {
  ScenarioConfig scenario;
  std::vector<Method> roster{Method::bcs, Method::lm, Method::am, Method::knn};
  SamplerSettings sampler;
  AgentSettings agents;
  int threads = 0;  // 0: BCS_THREADS env var, else hardware concurrency
};

struct MethodSummary {
  Method method = Method::bcs;
  double mse = 0.0;
  double rmse = 0.0;
  std::optional<double> cp;
  std::optional<double> al;
  std::vector<double> per_replicate_mse;
  std::vector<double> per_replicate_cp;
  std::vector<double> per_replicate_al;

  bool operator==(const MethodSummary&) const = default;
};

struct ReplicateFailure {
  int replicate = 0;
  std::string error;

  bool operator==(const ReplicateFailure&) const = default;
};

struct EvalReport {
  std::vector<MethodSummary> methods;
  int replications = 0;
  int completed = 0;
  std::vector<ReplicateFailure> failures;
  double wall_clock_seconds = 0.0;

  bool complete() const { return failures.empty(); }

  const MethodSummary* find(Method m) const {
    for (const auto& s : methods)
      if (s.method == m) return &s;
    return nullptr;
  }

  /// Equality on results only; wall-clock time is ignored.
  bool same_results(const EvalReport& o) const {
    return methods == o.methods && replications == o.replications && completed == o.completed && failures == o.failures;
  }
};

using ReplicateResult = std::map<Method, Metrics>;

/// Generate, fit the agents in the roster, synthesize them with BCS, and score every method.
inline ReplicateResult run_replicate(const SimulationPlan& plan, int replicate) {
  const auto& cfg = plan.scenario;
  const auto draw = generate_scenario(cfg, replicate);
  const bool oos = cfg.evaluation == Evaluation::out_of_sample;
  const Vector& truth = oos ? draw.test_tau : draw.tau;
  const std::uint64_t rep_seed = derive_seed(cfg.seed ^ 0xa5a5a5a5ULL, static_cast<std::uint64_t>(replicate));

  std::vector<std::pair<Method, AgentPosterior>> train_agents;
  std::vector<std::pair<Method, AgentPosterior>> eval_agents;
  int j = 0;
  for (Method m : plan.roster) {
    if (m == Method::bcs) continue;
    ++j;
    AgentPosterior train, eval;
    switch (m) {
      case Method::lm: {
        auto fit = agents::fit_linear_agent(draw.data, j);
        train = fit.training;
        eval = oos ? fit.evaluate(draw.test_x) : train;
        break;
      }
      case Method::am: {
        agents::AdditiveOptions opt;
        opt.bootstrap_reps = plan.agents.am_bootstrap_reps;
        opt.seed = derive_seed(rep_seed, 11);
        auto fit = agents::fit_additive_agent(draw.data, opt, j);
        train = fit.training;
        eval = oos ? fit.evaluate(draw.test_x) : train;
        break;
      }
      case Method::knn: {
        agents::KnnOptions opt;
        opt.k = plan.agents.knn_k;
        opt.subsample_reps = plan.agents.knn_subsample_reps;
        opt.seed = derive_seed(rep_seed, 12);
        auto fit = agents::fit_knn_agent(draw.data, opt, j);
        train = fit.training;
        eval = oos ? fit.evaluate(draw.test_x) : train;
        break;
      }
      case Method::oracle: {
        Rng rng(derive_seed(rep_seed, 13));
        auto make = [&](const Vector& tau) {
          AgentPosterior a;
          a.j = j;
          a.name = "oracle";
          a.tau_hat = tau;
          for (Eigen::Index i = 0; i < tau.size(); ++i) a.tau_hat[i] += plan.agents.oracle_se * rng.normal();
          a.se = Vector::Constant(tau.size(), plan.agents.oracle_se);
          return a;
        };
        train = make(draw.tau);
        eval = oos ? make(draw.test_tau) : train;
        break;
      }
      case Method::bcs: break;
    }
    train_agents.emplace_back(m, std::move(train));
    eval_agents.emplace_back(m, std::move(eval));
  }

  ReplicateResult result;
  for (const auto& [m, a] : eval_agents) {
    IntervalSet iv{(a.tau_hat - 1.959963984540054 * a.se), (a.tau_hat + 1.959963984540054 * a.se)};
    result[m] = evaluate(a.tau_hat, iv, truth);
  }

  if (std::find(plan.roster.begin(), plan.roster.end(), Method::bcs) != plan.roster.end()) {
    if (train_agents.empty()) throw ValidationError({"BCS requires at least one agent in the roster"});
    std::vector<AgentPosterior> agents;
    for (const auto& [m, a] : train_agents) agents.push_back(a);
    const Vector pi = *draw.data.pi;
    auto problem = make_problem(draw.data, agents, pi);
    const Priors priors =
        default_priors(draw.data, static_cast<int>(agents.size()), problem.beta_points, problem.mu_points);
    SamplerSettings settings = plan.sampler;
    settings.seed = derive_seed(rep_seed, 14);
    validate_dataset(draw.data, agents);
    const auto chain = run_chain(problem, priors, settings);

    Vector mean, lo, hi;
    if (!oos) {
      const Eigen::Index n = chain.draws.tau.cols();
      mean.resize(n);
      lo.resize(n);
      hi.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto s = summarize(chain.draws.tau.col(i));
        mean[i] = s.mean;
        lo[i] = s.lo95;
        hi[i] = s.hi95;
      }
    } else {
      std::vector<AgentPosterior> at_test;
      for (const auto& [m, a] : eval_agents) at_test.push_back(a);
      PredictionContext ctx{problem.beta_points, priors.bar_beta, settings.m};
      const auto preds = predict_tau_at_points(draw.test_x, at_test, chain.draws, ctx, derive_seed(rep_seed, 15));
      const auto nt = static_cast<Eigen::Index>(preds.size());
      mean.resize(nt);
      lo.resize(nt);
      hi.resize(nt);
      for (Eigen::Index i = 0; i < nt; ++i) {
        mean[i] = preds[static_cast<std::size_t>(i)].summary.mean;
        lo[i] = preds[static_cast<std::size_t>(i)].summary.lo95;
        hi[i] = preds[static_cast<std::size_t>(i)].summary.hi95;
      }
    }
    result[Method::bcs] = evaluate(mean, IntervalSet{lo, hi}, truth);
  }
  return result;
}

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("BCS_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs all replicates (concurrently when threads > 1) and averages the metrics.
inline EvalReport run_replications(const SimulationPlan& plan) {
  plan.scenario.validate();
  plan.sampler.validate();
  if (plan.roster.empty()) throw ConfigError("method roster is empty");
  const auto start = std::chrono::steady_clock::now();
  const int reps = plan.scenario.replications;
  std::vector<std::optional<ReplicateResult>> results(static_cast<std::size_t>(reps));
  std::vector<std::string> errors(static_cast<std::size_t>(reps));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next++; r < reps; r = next++) {
      try {
        results[static_cast<std::size_t>(r)] = run_replicate(plan, r);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(r)] = e.what();
      }
    }
  };
  const int threads = std::min(resolve_threads(plan.threads), reps);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  EvalReport report;
  report.replications = reps;
  for (Method m : plan.roster) {
    MethodSummary s;
    s.method = m;
    report.methods.push_back(s);
  }
  for (int r = 0; r < reps; ++r) {
    const auto& res = results[static_cast<std::size_t>(r)];
    if (!res) {
      report.failures.push_back({r, errors[static_cast<std::size_t>(r)]});
      continue;
    }
    ++report.completed;
    for (auto& s : report.methods) {
      const auto& mt = res->at(s.method);
      s.per_replicate_mse.push_back(mt.mse);
      if (mt.cp) s.per_replicate_cp.push_back(*mt.cp);
      if (mt.al) s.per_replicate_al.push_back(*mt.al);
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
  };
  for (auto& s : report.methods) {
    s.mse = mean(s.per_replicate_mse);
    s.rmse = std::sqrt(s.mse);
    if (!s.per_replicate_cp.empty()) s.cp = mean(s.per_replicate_cp);
    if (!s.per_replicate_al.empty()) s.al = mean(s.per_replicate_al);
  }
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Config files and report output

inline const std::vector<std::string>& plan_keys() {
  static const std::vector<std::string> keys{
      "scenario", "mu_form", "tau_form", "n", "p", "sigma2", "n_test", "replications", "seed", "evaluation",
      "methods", "m", "n_iter", "n_burn", "thin", "phi_proposal_sd", "am_bootstrap_reps", "knn_subsample_reps",
      "knn_k", "oracle_se", "threads"};
  return keys;
}

inline SimulationPlan plan_from_config(const KeyValueConfig& kv) {
  kv.require_known(plan_keys());
  SimulationPlan plan;
  auto& sc = plan.scenario;
  auto line_of = [&](const std::string& k) {
    const auto* e = kv.find(k);
    return e ? e->line : 0;
  };
  int id = 0;
  if (kv.get("scenario", id)) {
    try {
      const auto base = scenario(id);
      sc.mu_form = base.mu_form;
      sc.tau_form = base.tau_form;
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), line_of("scenario"));
    }
  }
  auto form = [&](const std::string& key, Form& out) {
    std::string v;
    if (!kv.get(key, v)) return;
    if (v == "A") out = Form::A;
    else if (v == "B") out = Form::B;
    else throw ConfigError(key + " must be A or B", line_of(key));
  };
  form("mu_form", sc.mu_form);
  form("tau_form", sc.tau_form);
  kv.get("n", sc.n);
  kv.get("p", sc.p);
  kv.get("sigma2", sc.sigma2);
  kv.get("n_test", sc.n_test);
  kv.get("replications", sc.replications);
  kv.get("seed", sc.seed);
  std::string ev;
  if (kv.get("evaluation", ev)) {
    if (ev == "in_sample") sc.evaluation = Evaluation::in_sample;
    else if (ev == "out_of_sample") sc.evaluation = Evaluation::out_of_sample;
    else throw ConfigError("evaluation must be in_sample or out_of_sample", line_of("evaluation"));
  }
  if (kv.find("methods")) {
    plan.roster.clear();
    for (const auto& m : kv.get_list("methods")) {
      try {
        plan.roster.push_back(method_from_string(m));
      } catch (const ConfigError& e) {
        throw ConfigError(e.what(), line_of("methods"));
      }
    }
    if (plan.roster.empty()) throw ConfigError("methods list is empty", line_of("methods"));
  }
  auto& s = plan.sampler;
  kv.get("m", s.m);
  kv.get("n_iter", s.n_iter);
  kv.get("n_burn", s.n_burn);
  kv.get("thin", s.thin);
  double sd = 0.0;
  if (kv.get("phi_proposal_sd", sd)) s.phi_proposal_sd = sd;
  kv.get("am_bootstrap_reps", plan.agents.am_bootstrap_reps);
  kv.get("knn_subsample_reps", plan.agents.knn_subsample_reps);
  int k = 0;
  if (kv.get("knn_k", k)) plan.agents.knn_k = k;
  kv.get("oracle_se", plan.agents.oracle_se);
  kv.get("threads", plan.threads);

  auto field_check = [&](bool ok, const std::string& key, const std::string& msg) {
    if (!ok) throw ConfigError(msg, line_of(key));
  };
  field_check(sc.replications >= 1, "replications", "replications must be >= 1");
  field_check(sc.p >= 5, "p", "p must be >= 5");
  field_check(sc.n >= 10, "n", "n must be >= 10");
  field_check(sc.sigma2 > 0.0, "sigma2", "sigma2 must be positive");
  field_check(sc.evaluation == Evaluation::in_sample || sc.n_test >= 1, "n_test",
              "out_of_sample evaluation requires n_test >= 1");
  field_check(s.m >= 1, "m", "m must be >= 1");
  field_check(s.thin >= 1, "thin", "thin must be >= 1");
  field_check(s.n_burn >= 0 && s.n_burn < s.n_iter, "n_burn", "n_burn must satisfy 0 <= n_burn < n_iter");
  field_check(plan.agents.am_bootstrap_reps >= 1, "am_bootstrap_reps", "am_bootstrap_reps must be >= 1");
  field_check(plan.agents.knn_subsample_reps >= 2, "knn_subsample_reps", "knn_subsample_reps must be >= 2");
  field_check(plan.agents.oracle_se > 0.0, "oracle_se", "oracle_se must be positive");
  return plan;
}

inline nlohmann::json report_to_json(const EvalReport& r, const SimulationPlan& plan) {
  using nlohmann::json;
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  const auto& sc = plan.scenario;
  json methods = json::array();
  for (const auto& s : r.methods) {
    methods.push_back({{"method", to_string(s.method)},
                       {"mse", s.mse},
                       {"rmse", s.rmse},
                       {"cp", opt(s.cp)},
                       {"al", opt(s.al)},
                       {"per_replicate_mse", s.per_replicate_mse},
                       {"per_replicate_cp", s.per_replicate_cp},
                       {"per_replicate_al", s.per_replicate_al}});
  }
  json failures = json::array();
  for (const auto& f : r.failures) failures.push_back({{"replicate", f.replicate}, {"error", f.error}});
  return {{"schema", "bcs.eval_report/1"},
          {"scenario",
           {{"mu_form", sc.mu_form == Form::A ? "A" : "B"},
            {"tau_form", sc.tau_form == Form::A ? "A" : "B"},
            {"n", sc.n},
            {"p", sc.p},
            {"sigma2", sc.sigma2},
            {"n_test", sc.n_test},
            {"evaluation", sc.evaluation == Evaluation::in_sample ? "in_sample" : "out_of_sample"},
            {"seed", sc.seed}}},
          {"replications", r.replications},
          {"completed", r.completed},
          {"complete", r.complete()},
          {"failures", failures},
          {"wall_clock_seconds", r.wall_clock_seconds},
          {"methods", methods}};
}

inline std::string report_to_csv(const EvalReport& r) {
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };
  std::string out = "method,mse,rmse,cp,al,completed,failed\n";
  for (const auto& s : r.methods) {
    out += to_string(s.method) + "," + num(s.mse) + "," + num(s.rmse) + "," + (s.cp ? num(*s.cp) : "") + "," +
           (s.al ? num(*s.al) : "") + "," + std::to_string(r.completed) + "," + std::to_string(r.failures.size()) + "\n";
  }
  return out;
}

}  // namespace bcs::sim
