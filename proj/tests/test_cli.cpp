#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "bcs/rng.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "bcs_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run run(const std::string& args) {
  const auto out = work_dir() / "stdout.txt";
  const auto err = work_dir() / "stderr.txt";
  const std::string cmd = std::string(BCS_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

// Checks the single-line JSON diagnostic and returns its "error" field.
std::string error_kind(const Run& r) {
  EXPECT_EQ(count_lines(r.err), 1) << r.err;
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_TRUE(j.contains("message"));
  return j.at("error").get<std::string>();
}

// 20 rows, two covariates, linear effect.
fs::path toy_data() {
  const auto path = work_dir() / "toy.csv";
  if (fs::exists(path)) return path;
  bcs::Rng rng(5);
  std::ofstream f(path);
  f << "y,t,x1,x2\n";
  for (int i = 0; i < 20; ++i) {
    const double x1 = rng.normal(), x2 = rng.uniform();
    const int t = i % 2;
    f << x2 + t * (1.0 + x1) + 0.3 * rng.normal() << ',' << t << ',' << x1 << ',' << x2 << '\n';
  }
  return path;
}

fs::path small_config() {
  const auto path = work_dir() / "small.cfg";
  std::ofstream f(path);
  f << "m: 5\nn_iter: 300\nn_burn: 100\n";
  return path;
}

std::string synth_args(const std::string& out) {
  return "synthesize --data " + toy_data().string() + " --fit-agents lm --config " + small_config().string() +
         " --seed 3 --out " + (work_dir() / out).string();
}

}  // namespace

TEST(Cli, HelpExitsZero) {
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("synthesize"), std::string::npos);
  EXPECT_EQ(run("validate --help").code, 0);
}

TEST(Cli, MissingDataIsUsageError) {
  const auto r = run("synthesize --fit-agents lm");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(error_kind(r), "usage");
}

TEST(Cli, AgentsAndFitAgentsAreExclusive) {
  const auto r = run("synthesize --data " + toy_data().string() + " --agents a.csv --fit-agents lm");
  EXPECT_EQ(r.code, 2);
  error_kind(r);
}

TEST(Cli, SynthesizeWritesOutputsDeterministically) {
  const auto a = run(synth_args("syn_a"));
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = run(synth_args("syn_b"));
  ASSERT_EQ(b.code, 0) << b.err;
  const auto da = work_dir() / "syn_a", db = work_dir() / "syn_b";
  for (const char* f : {"tau_summary.csv", "coefficients.csv", "chain_diagnostics.json", "agents.csv"}) {
    ASSERT_TRUE(fs::exists(da / f)) << f;
    EXPECT_EQ(slurp(da / f), slurp(db / f)) << f;
  }
  for (const auto& e : fs::directory_iterator(da / "chain"))
    EXPECT_EQ(slurp(e.path()), slurp(db / "chain" / e.path().filename())) << e.path();
  const auto summary = slurp(da / "tau_summary.csv");
  EXPECT_EQ(summary.substr(0, summary.find('\n')), "mean,sd,lo95,hi95");
  EXPECT_EQ(count_lines(summary), 21);
  EXPECT_EQ(count_lines(slurp(da / "coefficients.csv")), 21);
  const auto diag = nlohmann::json::parse(slurp(da / "chain_diagnostics.json"));
  EXPECT_EQ(diag.at("retained_draws").get<int>(), 200);
}

TEST(Cli, SuppliedAgentFileIsUsed) {
  ASSERT_EQ(run(synth_args("syn_src")).code, 0);
  const auto agents = work_dir() / "syn_src" / "agents.csv";
  const auto r = run("synthesize --data " + toy_data().string() + " --agents " + agents.string() + " --config " +
                     small_config().string() + " --out " + (work_dir() / "syn_plug").string());
  EXPECT_EQ(r.code, 0) << r.err;

  std::ofstream(work_dir() / "short_agents.csv") << "tau_hat_1,se_1\n1,0.1\n";
  const auto bad = run("synthesize --data " + toy_data().string() + " --agents " +
                       (work_dir() / "short_agents.csv").string() + " --out " + (work_dir() / "syn_bad").string());
  EXPECT_NE(bad.code, 0);
  EXPECT_EQ(error_kind(bad), "validation");
}

TEST(Cli, BadConfigNamesLine) {
  std::ofstream(work_dir() / "bad.cfg") << "m: 5\nwhatever: 1\n";
  const auto r = run("synthesize --data " + toy_data().string() + " --fit-agents lm --config " +
                     (work_dir() / "bad.cfg").string() + " --out " + (work_dir() / "syn_cfg").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(error_kind(r), "config");
  EXPECT_EQ(nlohmann::json::parse(r.err).at("line").get<int>(), 2);
}

TEST(Cli, PredictAndEncodingMismatch) {
  ASSERT_EQ(run(synth_args("syn_pred")).code, 0);
  const auto chain = (work_dir() / "syn_pred" / "chain").string();
  std::ofstream(work_dir() / "points.csv") << "x1,x2,tau_hat_1,se_1\n0.1,0.5,1.1,0.2\n3,0.5,4,0.5\n";
  const auto out = (work_dir() / "pred.csv").string();
  const auto ok = run("predict --chain " + chain + " --points " + (work_dir() / "points.csv").string() + " --out " + out);
  ASSERT_EQ(ok.code, 0) << ok.err;
  const auto text = slurp(out);
  EXPECT_EQ(text.substr(0, text.find('\n')), "mean,lo95,hi95");
  EXPECT_EQ(count_lines(text), 3);
  const auto again = run("predict --chain " + chain + " --points " + (work_dir() / "points.csv").string() + " --out " +
                         (work_dir() / "pred2.csv").string());
  EXPECT_EQ(slurp(out), slurp(work_dir() / "pred2.csv"));

  std::ofstream(work_dir() / "bad_points.csv") << "x1,tau_hat_1,se_1\n0.1,1.1,0.2\n";
  const auto bad = run("predict --chain " + chain + " --points " + (work_dir() / "bad_points.csv").string() +
                       " --out " + out);
  EXPECT_EQ(bad.code, 3);
  EXPECT_EQ(error_kind(bad), "encoding");
}

TEST(Cli, SimulateRejectsZeroReplications) {
  std::ofstream(work_dir() / "zero.cfg") << "scenario: 1\nreplications: 0\n";
  const auto r = run("simulate --scenario " + (work_dir() / "zero.cfg").string() + " --out " +
                     (work_dir() / "sim_zero").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(error_kind(r), "config");
  EXPECT_EQ(nlohmann::json::parse(r.err).at("line").get<int>(), 2);
}

TEST(Cli, SimulateWritesReports) {
  std::ofstream(work_dir() / "tiny.cfg") << "scenario: 2\nn: 60\nreplications: 2\nmethods: [bcs, lm, knn]\n"
                                            "n_iter: 200\nn_burn: 50\nknn_subsample_reps: 10\n";
  const auto dir = work_dir() / "sim_tiny";
  const auto r = run("simulate --scenario " + (work_dir() / "tiny.cfg").string() + " --out " + dir.string() +
                     " --threads 2");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(slurp(dir / "report.csv")), 4);
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_TRUE(j.at("complete").get<bool>());
}

TEST(Cli, ValidatePassesAndCatchesFault) {
  const auto ok = run("validate");
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_EQ(count_lines(ok.out), 3);
  EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);
  const auto bad = run("validate --inject-fault sigma2-scale");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("FAIL geweke_joint_distribution"), std::string::npos) << bad.out;
}
