// Command-line front end: synthesize, predict, simulate, validate.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bcs/agents/additive.hpp"
#include "bcs/agents/knn.hpp"
#include "bcs/agents/linear.hpp"
#include "bcs/agents/propensity.hpp"
#include "bcs/chain_io.hpp"
#include "bcs/config.hpp"
#include "bcs/csv_io.hpp"
#include "bcs/predict.hpp"
#include "bcs/sampler.hpp"
#include "bcs/simbench.hpp"
#include "bcs/validation_suite.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitEncoding = 3;

void emit_error(const std::string& kind, const std::string& message, json extra = json::object()) {
  json j{{"error", kind}, {"message", message}};
  j.update(extra);
  std::cerr << j.dump() << std::endl;
}

int report_exception(const std::exception& e, int default_code = kExitFailure) {
  if (const auto* ce = dynamic_cast<const bcs::ConfigError*>(&e)) {
    json extra = json::object();
    if (ce->line() > 0) extra["line"] = ce->line();
    emit_error("config", e.what(), extra);
    return kExitUsage;
  }
  if (const auto* ve = dynamic_cast<const bcs::ValidationError*>(&e)) {
    emit_error("validation", e.what(), {{"items", ve->items()}});
    return default_code;
  }
  if (const auto* se = dynamic_cast<const bcs::SamplerError*>(&e)) {
    emit_error("sampler", e.what(), {{"iteration", se->iteration()}, {"step", se->step()}});
    return default_code;
  }
  if (const auto* be = dynamic_cast<const bcs::Error*>(&e)) {
    emit_error(be->kind(), e.what());
    return default_code;
  }
  emit_error("internal", e.what());
  return default_code;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = bcs::KeyValueConfig::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---------------------------------------------------------------------------
// synthesize

struct SynthesizeArgs {
  std::string data;
  std::string agents;
  std::string fit_agents;
  std::string categorical;
  std::string beta_columns;
  std::string pi_column = "pi";
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "bcs_out";
};

const std::vector<std::string>& synthesize_keys() {
  static const std::vector<std::string> keys{
      "m", "n_iter", "n_burn", "thin", "seed", "phi_proposal_sd", "sigma_delta", "sigma_eta", "mu_delta", "mu_eta",
      "beta_delta", "beta_eta", "bar_beta", "am_bootstrap_reps", "knn_subsample_reps", "knn_k", "categorical",
      "beta_columns"};
  return keys;
}

struct SynthesizeConfig {
  bcs::SamplerSettings settings;
  bcs::agents::AdditiveOptions am;
  bcs::agents::KnnOptions knn;
  bcs::KeyValueConfig kv;
};

SynthesizeConfig load_synthesize_config(const std::string& path) {
  SynthesizeConfig c;
  if (path.empty()) return c;
  c.kv = bcs::KeyValueConfig::load(path);
  c.kv.require_known(synthesize_keys());
  c.kv.get("m", c.settings.m);
  c.kv.get("n_iter", c.settings.n_iter);
  c.kv.get("n_burn", c.settings.n_burn);
  c.kv.get("thin", c.settings.thin);
  c.kv.get("seed", c.settings.seed);
  double sd = 0.0;
  if (c.kv.get("phi_proposal_sd", sd)) c.settings.phi_proposal_sd = sd;
  c.kv.get("am_bootstrap_reps", c.am.bootstrap_reps);
  c.kv.get("knn_subsample_reps", c.knn.subsample_reps);
  int k = 0;
  if (c.kv.get("knn_k", k)) c.knn.k = k;
  try {
    c.settings.validate();
  } catch (const bcs::ValidationError& e) {
    throw bcs::ConfigError(e.what());
  }
  return c;
}

void apply_prior_overrides(const bcs::KeyValueConfig& kv, bcs::Priors& p) {
  auto ig = [&](const std::string& prefix, bcs::IgPrior& g) {
    kv.get(prefix + "_delta", g.delta);
    kv.get(prefix + "_eta", g.eta);
  };
  ig("sigma", p.ig_sigma);
  ig("mu", p.ig_mu);
  for (auto& g : p.ig_beta) ig("beta", g);
  if (kv.find("bar_beta")) {
    const auto items = kv.get_list("bar_beta");
    const int line = kv.find("bar_beta")->line;
    if (static_cast<Eigen::Index>(items.size()) != p.bar_beta.size())
      throw bcs::ConfigError("bar_beta needs " + std::to_string(p.bar_beta.size()) + " values (J+1)", line);
    for (std::size_t j = 0; j < items.size(); ++j) {
      try {
        p.bar_beta[static_cast<Eigen::Index>(j)] = bcs::parse_number(items[j], "bar_beta");
      } catch (const bcs::EncodingError& e) {
        throw bcs::ConfigError(e.what(), line);
      }
    }
  }
  try {
    p.validate();
  } catch (const bcs::ValidationError& e) {
    throw bcs::ConfigError(e.what());
  }
}

int cmd_synthesize(const SynthesizeArgs& a) {
  auto cfg = load_synthesize_config(a.config);
  if (a.seed) cfg.settings.seed = *a.seed;
  std::vector<std::string> categorical = split_list(a.categorical);
  for (const auto& c : cfg.kv.get_list("categorical")) categorical.push_back(c);
  std::vector<std::string> beta_names = split_list(a.beta_columns);
  for (const auto& c : cfg.kv.get_list("beta_columns")) beta_names.push_back(c);

  auto loaded = bcs::csv::load_data(bcs::csv::read(a.data), categorical, a.pi_column);
  const auto& data = loaded.data;

  std::vector<bcs::AgentPosterior> agents;
  if (!a.agents.empty()) {
    agents = bcs::csv::load_agents(bcs::csv::read(a.agents), data.n());
  } else {
    int j = 0;
    for (const auto& name : split_list(a.fit_agents)) {
      ++j;
      cfg.am.seed = bcs::derive_seed(cfg.settings.seed, 100 + static_cast<std::uint64_t>(j));
      cfg.knn.seed = bcs::derive_seed(cfg.settings.seed, 200 + static_cast<std::uint64_t>(j));
      if (name == "lm") agents.push_back(bcs::agents::fit_linear_agent(data, j).training);
      else if (name == "am") agents.push_back(bcs::agents::fit_additive_agent(data, cfg.am, j).training);
      else if (name == "knn") agents.push_back(bcs::agents::fit_knn_agent(data, cfg.knn, j).training);
      else throw bcs::ConfigError("unknown agent '" + name + "' (expected lm, am or knn)");
    }
  }
  bcs::validate_dataset(data, agents);

  const std::vector<int> beta_columns = beta_names.empty() ? std::vector<int>{} : loaded.encoding.output_indices(beta_names);
  const bcs::Vector pi = bcs::agents::estimate_propensity(data).second;
  const auto problem = bcs::make_problem(data, agents, pi, beta_columns);
  auto priors = bcs::default_priors(data, static_cast<int>(agents.size()), problem.beta_points, problem.mu_points);
  apply_prior_overrides(cfg.kv, priors);

  const auto result = bcs::run_chain(problem, priors, cfg.settings);
  const auto& draws = result.draws;
  if (draws.size() == 0) throw bcs::ValidationError({"no retained draws"});

  const fs::path out(a.out);
  fs::create_directories(out);
  const Eigen::Index n = data.n();
  const Eigen::Index k = priors.bar_beta.size();
  bcs::Matrix summary(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto s = bcs::summarize(draws.tau.col(i));
    summary.row(i) << s.mean, s.sd, s.lo95, s.hi95;
  }
  bcs::csv::write((out / "tau_summary.csv").string(), {"mean", "sd", "lo95", "hi95"}, summary);

  bcs::Matrix coef = bcs::Matrix::Zero(n, k);
  for (const auto& st : draws.states) coef += st.latent.beta;
  coef /= static_cast<double>(draws.size());
  std::vector<std::string> coef_header;
  for (Eigen::Index j = 0; j < k; ++j) coef_header.push_back("beta_" + std::to_string(j));
  bcs::csv::write((out / "coefficients.csv").string(), coef_header, coef);

  const auto& d = result.diagnostics;
  json diag{{"retained_draws", draws.size()},
            {"phi_accept_rate_mu", d.phi_accept_rate_mu},
            {"phi_accept_rate_beta", std::vector<double>(d.phi_accept_rate_beta.data(),
                                                         d.phi_accept_rate_beta.data() + d.phi_accept_rate_beta.size())},
            {"ess", d.ess},
            {"log_joint_last", d.log_joint.empty() ? 0.0 : d.log_joint.back()},
            {"agents", json::array()}};
  for (const auto& ag : agents) diag["agents"].push_back(ag.name);
  std::ofstream(out / "chain_diagnostics.json", std::ios::binary) << diag.dump(2) << '\n';

  bcs::StoredChain stored;
  stored.draws = draws;
  stored.priors = priors;
  stored.settings = cfg.settings;
  stored.encoding = loaded.encoding;
  stored.beta_columns = beta_columns;
  for (const auto& ag : agents) stored.agent_names.push_back(ag.name);
  stored.beta_points = problem.beta_points;
  bcs::save_chain(out / "chain", stored);

  if (a.agents.empty()) bcs::csv::write_agents((out / "agents.csv").string(), agents);
  std::cout << "wrote " << (out / "tau_summary.csv").string() << ", " << (out / "coefficients.csv").string() << ", "
            << (out / "chain_diagnostics.json").string() << ", " << (out / "chain").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  std::string chain;
  std::string points;
  std::string out = "predictions.csv";
  std::uint64_t seed = 1;
};

int cmd_predict(const PredictArgs& a) {
  const auto stored = bcs::load_chain(a.chain);
  const auto table = bcs::csv::read(a.points);
  bcs::Matrix x;
  std::vector<bcs::AgentPosterior> agents;
  try {
    std::tie(x, agents) = bcs::csv::load_points(table, stored.encoding);
  } catch (const bcs::EncodingError& e) {
    emit_error("encoding", e.what());
    return kExitEncoding;
  }
  bcs::Matrix bx = x;
  if (!stored.beta_columns.empty()) {
    bx.resize(x.rows(), static_cast<Eigen::Index>(stored.beta_columns.size()));
    for (std::size_t c = 0; c < stored.beta_columns.size(); ++c)
      bx.col(static_cast<Eigen::Index>(c)) = x.col(stored.beta_columns[c]);
  }
  if (static_cast<Eigen::Index>(agents.size()) != stored.priors.num_agents())
    throw bcs::ValidationError({"points file supplies " + std::to_string(agents.size()) + " agents, chain has " +
                                std::to_string(stored.priors.num_agents())});
  bcs::PredictionContext ctx{stored.beta_points, stored.priors.bar_beta, stored.settings.m};
  const auto preds = bcs::predict_tau_at_points(bx, agents, stored.draws, ctx, a.seed);
  bcs::Matrix out(static_cast<Eigen::Index>(preds.size()), 3);
  for (std::size_t r = 0; r < preds.size(); ++r) {
    const auto& s = preds[r].summary;
    out.row(static_cast<Eigen::Index>(r)) << s.mean, s.lo95, s.hi95;
  }
  bcs::csv::write(a.out, {"mean", "lo95", "hi95"}, out);
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string scenario;
  std::string out = "sim_out";
  int threads = 0;
};

int cmd_simulate(const SimulateArgs& a) {
  auto plan = bcs::sim::plan_from_config(bcs::KeyValueConfig::load(a.scenario));
  if (a.threads > 0) plan.threads = a.threads;
  const auto report = bcs::sim::run_replications(plan);
  const fs::path out(a.out);
  fs::create_directories(out);
  std::ofstream(out / "report.csv", std::ios::binary) << bcs::sim::report_to_csv(report);
  std::ofstream(out / "report.json", std::ios::binary) << bcs::sim::report_to_json(report, plan).dump(2) << '\n';
  std::cout << bcs::sim::report_to_csv(report);
  if (!report.complete()) {
    emit_error("incomplete", std::to_string(report.failures.size()) + " of " + std::to_string(report.replications) +
                                 " replicates failed; first: " + report.failures.front().error);
    return kExitFailure;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// validate

int cmd_validate(const std::string& fault_name) {
  bcs::FaultInjection fault = bcs::FaultInjection::none;
  if (fault_name == "sigma2-scale") fault = bcs::FaultInjection::halve_sigma2_scale;
  else if (!fault_name.empty()) throw bcs::ConfigError("unknown fault '" + fault_name + "'");
  bool ok = true;
  std::string failing;
  for (const auto& r : bcs::validation::run_all(fault)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.statistic << "\n";
    if (!r.passed && ok) failing = r.name + ": " + r.statistic;
    ok = ok && r.passed;
  }
  if (!ok) {
    emit_error("oracle", failing);
    return kExitFailure;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian synthesis of heterogeneous treatment effect estimates"};
  app.require_subcommand(1);

  SynthesizeArgs syn;
  auto* s = app.add_subcommand("synthesize", "Run the synthesis sampler on a data set");
  s->add_option("--data", syn.data, "Data CSV (y, t, optional pi, covariates)")->required();
  auto* agents_opt = s->add_option("--agents", syn.agents, "Agent CSV with tau_hat_j, se_j columns");
  auto* fit_opt = s->add_option("--fit-agents", syn.fit_agents, "Built-in agents to fit, e.g. lm,am,knn");
  agents_opt->excludes(fit_opt);
  s->add_option("--categorical", syn.categorical, "Comma-separated categorical covariate names");
  s->add_option("--beta-columns", syn.beta_columns, "Covariates driving the varying coefficients (default all)");
  s->add_option("--pi-column", syn.pi_column, "Propensity column name")->capture_default_str();
  s->add_option("--config", syn.config, "YAML config file");
  s->add_option("--seed", syn.seed, "Random seed (overrides config)");
  s->add_option("--out", syn.out, "Output directory")->capture_default_str();

  PredictArgs pre;
  auto* p = app.add_subcommand("predict", "Predict treatment effects at new points from a saved chain");
  p->add_option("--chain", pre.chain, "Chain directory written by synthesize")->required();
  p->add_option("--points", pre.points, "CSV with covariates and tau_hat_j, se_j columns")->required();
  p->add_option("--out", pre.out, "Output CSV")->capture_default_str();
  p->add_option("--seed", pre.seed, "Random seed")->capture_default_str();

  SimulateArgs sim;
  auto* m = app.add_subcommand("simulate", "Run a Monte Carlo study from a scenario config");
  m->add_option("--scenario", sim.scenario, "Scenario config file")->required();
  m->add_option("--out", sim.out, "Output directory")->capture_default_str();
  m->add_option("--threads", sim.threads, "Worker threads (default: BCS_THREADS or hardware)");

  std::string fault;
  auto* v = app.add_subcommand("validate", "Run the built-in correctness checks");
  v->add_option("--inject-fault", fault)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("usage", e.what());
    return kExitUsage;
  }

  try {
    if (s->parsed()) {
      if (syn.agents.empty() && syn.fit_agents.empty()) {
        emit_error("usage", "one of --agents or --fit-agents is required");
        return kExitUsage;
      }
      return cmd_synthesize(syn);
    }
    if (p->parsed()) return cmd_predict(pre);
    if (m->parsed()) return cmd_simulate(sim);
    if (v->parsed()) return cmd_validate(fault);
  } catch (const bcs::EncodingError& e) {
    emit_error("encoding", e.what());
    return p->parsed() ? kExitEncoding : kExitFailure;
  } catch (const std::exception& e) {
    return report_exception(e);
  }
  return kExitUsage;
}
