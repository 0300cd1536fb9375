#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "bcs/chain_io.hpp"
#include "bcs/csv_io.hpp"
#include "bcs/sampler.hpp"

using namespace bcs;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("bcs_test_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Csv, QuotedFieldsAndBlankLines) {
  const auto t = csv::parse("a,b,c\n1,\"x, y\",\"say \"\"hi\"\"\"\n\n 2 ,3,4\r\n");
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], "x, y");
  EXPECT_EQ(t.rows[0][2], "say \"hi\"");
  EXPECT_EQ(t.rows[1][0], "2");
  EXPECT_EQ(t.rows[1][2], "4");
  EXPECT_EQ(*t.column("c"), 2u);
  EXPECT_FALSE(t.column("d").has_value());
}

TEST(Csv, RaggedLineNamesLine) {
  try {
    csv::parse("a,b\n1,2\n3\n", "f.csv");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("f.csv line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(csv::parse("\n\n"), ValidationError);
}

TEST(Csv, FormatRoundTripsExactly) {
  for (double v : {0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 0.0}) EXPECT_EQ(std::stod(csv::format(v)), v);
}

TEST(Csv, LoadDataSplitsColumns) {
  const auto t = csv::parse("y,t,x1,colour,pi\n1.5,1,0.2,red,0.4\n2.5,0,0.3,blue,0.6\n0.5,1,0.1,red,0.5\n");
  const auto d = csv::load_data(t, {"colour"});
  EXPECT_EQ(d.data.n(), 3);
  EXPECT_EQ(d.data.t[1], 0);
  ASSERT_TRUE(d.data.pi.has_value());
  EXPECT_DOUBLE_EQ((*d.data.pi)[1], 0.6);
  // x1 plus one indicator for the non-reference colour level
  EXPECT_EQ(d.data.x.cols(), 2);
}

TEST(Csv, LoadDataReportsAllProblems) {
  try {
    csv::load_data(csv::parse("a,b\n1,2\n"), {"z"});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.items().size(), 3u);
  }
  EXPECT_THROW(csv::load_data(csv::parse("y,t,x\n1,2,3\n")), ValidationError);
}

TEST(Csv, AgentFilesRoundTrip) {
  const auto dir = scratch_dir("agents");
  AgentPosterior a{1, "lm", Vector(Eigen::Vector3d(1.0, 2.0, 3.0)), Vector(Eigen::Vector3d(0.1, 0.2, 0.3))};
  AgentPosterior b{2, "am", Vector(Eigen::Vector3d(-1.0, 0.5, 1e-7)), Vector(Eigen::Vector3d(1.0, 1.0, 2.0))};
  csv::write_agents((dir / "a.csv").string(), {a, b});
  const auto back = csv::load_agents(csv::read((dir / "a.csv").string()), 3);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].tau_hat, a.tau_hat);
  EXPECT_EQ(back[1].se, b.se);
  EXPECT_THROW(csv::load_agents(csv::read((dir / "a.csv").string()), 4), ValidationError);
  EXPECT_THROW(csv::load_agents(csv::parse("tau_hat_1\n1\n")), ValidationError);
  EXPECT_THROW(csv::load_agents(csv::parse("x\n1\n")), ValidationError);
}

TEST(Csv, PointsNeedEveryTrainingColumn) {
  const auto train = csv::load_data(csv::parse("y,t,x1,colour\n1,1,0.2,red\n2,0,0.3,blue\n"), {"colour"});
  const auto ok = csv::load_points(csv::parse("x1,colour,tau_hat_1,se_1\n0.5,blue,1,0.1\n"), train.encoding);
  EXPECT_EQ(ok.first.rows(), 1);
  EXPECT_EQ(ok.second.size(), 1u);
  EXPECT_THROW(csv::load_points(csv::parse("x1,tau_hat_1,se_1\n0.5,1,0.1\n"), train.encoding), EncodingError);
  EXPECT_THROW(csv::load_points(csv::parse("x1,colour,tau_hat_1,se_1\n0.5,green,1,0.1\n"), train.encoding),
               EncodingError);
}

namespace {

StoredChain small_chain() {
  Rng rng(1);
  SynthesisProblem p;
  const int n = 12;
  p.y = Vector::NullaryExpr(n, [&] { return rng.normal(); });
  p.t = IndexVector(n);
  for (int i = 0; i < n; ++i) p.t[i] = i % 2;
  p.agent_mean = Matrix::NullaryExpr(n, 2, [&] { return rng.normal(); });
  p.agent_var = Matrix::Constant(n, 2, 0.1);
  p.beta_points = Matrix::NullaryExpr(n, 2, [&] { return rng.uniform(); });
  p.mu_points = p.beta_points;
  Priors pr;
  pr.bar_beta = Vector(Eigen::Vector3d(0.0, 0.5, 0.5));
  pr.ig_beta.assign(3, IgPrior{});
  pr.phi_bounds_mu = {0.1, 1.0};
  pr.phi_bounds_beta = {0.1, 1.0};
  SamplerSettings s;
  s.m = 3;
  s.n_iter = 40;
  s.n_burn = 10;
  s.thin = 2;
  s.phi_proposal_sd = 0.05;
  StoredChain c;
  c.draws = run_chain(p, pr, s).draws;
  c.priors = pr;
  c.settings = s;
  c.beta_columns = {0, 1};
  c.agent_names = {"lm", "knn"};
  c.beta_points = p.beta_points;
  return c;
}

}  // namespace

TEST(ChainIo, RoundTripIsExact) {
  const auto dir = scratch_dir("chain");
  const auto c = small_chain();
  save_chain(dir, c);
  const auto back = load_chain(dir);
  ASSERT_EQ(back.draws.size(), c.draws.size());
  EXPECT_EQ(back.draws.tau, c.draws.tau);
  EXPECT_EQ(back.beta_points, c.beta_points);
  EXPECT_EQ(back.priors.bar_beta, c.priors.bar_beta);
  EXPECT_EQ(back.settings.thin, 2);
  EXPECT_EQ(*back.settings.phi_proposal_sd, 0.05);
  EXPECT_EQ(back.agent_names, c.agent_names);
  EXPECT_EQ(back.beta_columns, c.beta_columns);
  for (std::size_t d = 0; d < c.draws.states.size(); ++d) {
    const auto& a = c.draws.states[d];
    const auto& b = back.draws.states[d];
    EXPECT_EQ(a.latent.beta, b.latent.beta);
    EXPECT_EQ(a.latent.f, b.latent.f);
    EXPECT_EQ(a.latent.mu, b.latent.mu);
    EXPECT_EQ(a.hyper.sigma2, b.hyper.sigma2);
    EXPECT_EQ(a.hyper.tau2_beta, b.hyper.tau2_beta);
    EXPECT_EQ(a.hyper.phi_beta, b.hyper.phi_beta);
  }
}

TEST(ChainIo, DamagedFilesAreRejected) {
  const auto dir = scratch_dir("damaged");
  save_chain(dir, small_chain());
  fs::resize_file(dir / "tau.f64", fs::file_size(dir / "tau.f64") - 8);
  EXPECT_THROW(load_chain(dir), ValidationError);

  save_chain(dir, small_chain());
  {
    std::ofstream f(dir / "mu.f64", std::ios::app | std::ios::binary);
    f << "x";
  }
  EXPECT_THROW(load_chain(dir), ValidationError);

  save_chain(dir, small_chain());
  {
    std::ofstream f(dir / "manifest.json");
    f << "{\"schema\": \"other\"}";
  }
  EXPECT_THROW(load_chain(dir), ValidationError);
  EXPECT_THROW(load_chain(dir / "missing"), ValidationError);
}
