#include <gtest/gtest.h>

#include <cmath>

#include "bcs/agents/additive.hpp"
#include "bcs/agents/knn.hpp"
#include "bcs/agents/linear.hpp"
#include "bcs/agents/propensity.hpp"

using namespace bcs;
using namespace bcs::agents;

namespace {

// y = g(x) + t * (c0 + c1 x1) + noise * e, with t ~ Ber(0.5).
ObservedData linear_data(int n, int p, double noise, Rng& rng, double c0 = 1.0, double c1 = 0.5) {
  ObservedData d;
  d.x = Matrix::NullaryExpr(n, p, [&] { return rng.normal(); });
  d.t = IndexVector(n);
  d.y = Vector(n);
  for (int i = 0; i < n; ++i) {
    d.t[i] = rng.bernoulli(0.5) ? 1 : 0;
    d.y[i] = 0.3 + d.x(i, 0) - 0.5 * d.x(i, p - 1) + d.t[i] * (c0 + c1 * d.x(i, 0)) + noise * rng.normal();
  }
  return d;
}

void expect_valid(const AgentPosterior& a, Eigen::Index n) {
  ASSERT_EQ(a.tau_hat.size(), n);
  ASSERT_EQ(a.se.size(), n);
  EXPECT_TRUE(a.tau_hat.allFinite());
  EXPECT_GT(a.se.minCoeff(), 0.0);
}

}  // namespace

TEST(LinearAgent, ConstantEffectRecovered) {
  Rng rng(1);
  ObservedData d;
  d.x = Matrix::NullaryExpr(200, 3, [&] { return rng.normal(); });
  d.t = IndexVector(200);
  d.y = Vector(200);
  for (int i = 0; i < 200; ++i) {
    d.t[i] = i % 2;
    d.y[i] = 2.0 * d.t[i] + 1e-6 * rng.normal();
  }
  const auto fit = fit_linear_agent(d);
  expect_valid(fit.training, 200);
  EXPECT_LT((fit.training.tau_hat.array() - 2.0).abs().maxCoeff(), 1e-5);
  EXPECT_LT(fit.training.se.maxCoeff(), 1e-5);
}

TEST(LinearAgent, MatchesNormalEquations) {
  Rng rng(2);
  const auto d = linear_data(80, 3, 1.0, rng);
  const auto fit = fit_linear_agent(d);
  const Eigen::Index n = 80, p = 3;
  Matrix z(n, 2 * p + 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = d.t[i];
    z(i, 0) = 1.0;
    z(i, p + 1) = t;
    for (Eigen::Index k = 0; k < p; ++k) {
      z(i, 1 + k) = d.x(i, k);
      z(i, p + 2 + k) = t * d.x(i, k);
    }
  }
  const Matrix ztz_inv = (z.transpose() * z).inverse();
  const Vector coef = ztz_inv * z.transpose() * d.y;
  const double s2 = (d.y - z * coef).squaredNorm() / static_cast<double>(n - z.cols());
  EXPECT_NEAR(fit.sigma2_hat, s2, 1e-10);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector e = Vector::Zero(z.cols());
    e[p + 1] = 1.0;
    e.tail(p) = d.x.row(i).transpose();
    EXPECT_NEAR(fit.training.tau_hat[i], e.dot(coef), 1e-9);
    EXPECT_NEAR(fit.training.se[i], std::sqrt(s2 * e.dot(ztz_inv * e)), 1e-9);
  }
}

TEST(LinearAgent, TooFewRowsIsRankError) {
  Rng rng(3);
  const auto d = linear_data(8, 4, 1.0, rng);
  try {
    fit_linear_agent(d);
    FAIL();
  } catch (const AgentError& e) {
    EXPECT_NE(std::string(e.what()).find("rank deficient"), std::string::npos);
  }
}

TEST(LinearAgent, DuplicateColumnIsNamed) {
  Rng rng(4);
  auto d = linear_data(60, 3, 1.0, rng);
  d.x.col(2) = d.x.col(1);
  d.covariate_names = {"a", "b", "c"};
  try {
    fit_linear_agent(d);
    FAIL();
  } catch (const AgentError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("dependent columns"), std::string::npos);
    EXPECT_TRUE(msg.find("b") != std::string::npos || msg.find("c") != std::string::npos) << msg;
  }
}

TEST(LinearAgent, WaldIntervalsAreCalibrated) {
  Rng rng(5);
  int covered = 0;
  const int reps = 500;
  for (int r = 0; r < reps; ++r) {
    const auto d = linear_data(100, 2, 1.0, rng);
    const auto fit = fit_linear_agent(d);
    const double se = std::sqrt(fit.effect_cov(0, 0));
    covered += std::abs(fit.effect_coef[0] - 1.0) <= 1.96 * se;
  }
  const double cp = 100.0 * covered / reps;
  EXPECT_GE(cp, 90.0);
  EXPECT_LE(cp, 99.0);
}

TEST(AdditiveAgent, ZeroBootstrapIsError) {
  Rng rng(6);
  const auto d = linear_data(50, 2, 1.0, rng);
  AdditiveOptions opt;
  opt.bootstrap_reps = 0;
  try {
    fit_additive_agent(d, opt);
    FAIL();
  } catch (const AgentError& e) {
    EXPECT_NE(std::string(e.what()).find("se requires replications"), std::string::npos);
  }
}

TEST(AdditiveAgent, TooFewRowsIsError) {
  Rng rng(7);
  const auto d = linear_data(19, 2, 1.0, rng);
  EXPECT_THROW(fit_additive_agent(d), AgentError);
}

TEST(AdditiveAgent, LinearTruthAgreesWithLinearAgent) {
  Rng rng(8);
  const auto d = linear_data(2000, 2, 0.5, rng);
  AdditiveOptions opt;
  opt.bootstrap_reps = 5;
  const auto am = fit_additive_agent(d, opt);
  const auto lm = fit_linear_agent(d);
  expect_valid(am.training, 2000);
  // Compare on the central 95% of x1, where the splines have data on both arms.
  double worst = 0.0;
  for (Eigen::Index i = 0; i < 2000; ++i)
    if (std::abs(d.x(i, 0)) < 1.96) worst = std::max(worst, std::abs(am.training.tau_hat[i] - lm.training.tau_hat[i]));
  EXPECT_LT(worst, 0.35);
}

TEST(AdditiveAgent, PureNoiseIntervalsCoverZero) {
  Rng rng(9);
  AdditiveOptions opt;
  opt.bootstrap_reps = 40;
  long covered = 0, total = 0;
  for (int r = 0; r < 10; ++r) {
    ObservedData d;
    d.x = Matrix::NullaryExpr(150, 2, [&] { return rng.uniform(); });
    d.t = IndexVector(150);
    d.y = Vector::NullaryExpr(150, [&] { return rng.normal(); });
    for (int i = 0; i < 150; ++i) d.t[i] = rng.bernoulli(0.5) ? 1 : 0;
    opt.seed = static_cast<std::uint64_t>(r + 1);
    const auto am = fit_additive_agent(d, opt);
    expect_valid(am.training, 150);
    for (Eigen::Index i = 0; i < 150; ++i) covered += std::abs(am.training.tau_hat[i]) <= 1.96 * am.training.se[i];
    total += 150;
  }
  const double cp = 100.0 * static_cast<double>(covered) / static_cast<double>(total);
  EXPECT_GE(cp, 80.0);
  EXPECT_LE(cp, 100.0);
}

TEST(KnnAgent, NoiselessConstantEffectIsExact) {
  Rng rng(10);
  ObservedData d;
  d.x = Matrix::NullaryExpr(100, 2, [&] { return rng.normal(); });
  d.t = IndexVector(100);
  d.y = Vector(100);
  for (int i = 0; i < 100; ++i) {
    d.t[i] = i % 2;
    d.y[i] = 1.0 + 2.0 * d.t[i];
  }
  const auto fit = fit_knn_agent(d);
  expect_valid(fit.training, 100);
  EXPECT_LT((fit.training.tau_hat.array() - 2.0).abs().maxCoeff(), 1e-12);
}

TEST(KnnAgent, FullArmGivesDifferenceOfMeans) {
  Rng rng(11);
  const auto d = linear_data(60, 2, 1.0, rng);
  double sum1 = 0.0, sum0 = 0.0;
  int n1 = 0, n0 = 0;
  for (int i = 0; i < 60; ++i) (d.t[i] ? (sum1 += d.y[i], ++n1) : (sum0 += d.y[i], ++n0));
  KnnOptions opt;
  opt.k = std::min(n1, n0);
  // Only an exact reduction when both arms have k points.
  ObservedData bal = d;
  if (n1 != n0) {
    const int k = *opt.k;
    std::vector<int> keep;
    int c1 = 0, c0 = 0;
    for (int i = 0; i < 60; ++i)
      if (d.t[i] ? c1++ < k : c0++ < k) keep.push_back(i);
    bal.x = d.x(keep, Eigen::all);
    bal.y = d.y(keep);
    bal.t = d.t(keep);
  }
  double m1 = 0.0, m0 = 0.0;
  for (Eigen::Index i = 0; i < bal.n(); ++i) (bal.t[i] ? m1 : m0) += bal.y[i] / *opt.k;
  const auto fit = fit_knn_agent(bal, opt);
  EXPECT_LT((fit.training.tau_hat.array() - (m1 - m0)).abs().maxCoeff(), 1e-12);
}

TEST(KnnAgent, SmallArmIsError) {
  Rng rng(12);
  auto d = linear_data(50, 2, 1.0, rng);
  d.t.setZero();
  d.t[0] = d.t[1] = 1;
  EXPECT_THROW(fit_knn_agent(d), AgentError);
}

TEST(Propensity, IndependentAssignmentIsFlat) {
  Rng rng(13);
  const auto d = linear_data(5000, 3, 1.0, rng);
  const auto [model, pi] = estimate_propensity(d);
  EXPECT_TRUE(model.converged);
  EXPECT_LT(model.gradient_norm, 1e-8);
  // se of each coefficient is about 2 / sqrt(n)
  const double se = 2.0 / std::sqrt(5000.0);
  for (Eigen::Index k = 0; k < model.coefficients.size(); ++k) EXPECT_LT(std::abs(model.coefficients[k]), 3.0 * se);
  // Mean fitted value equals the treated share; allow 3 Monte Carlo ses.
  EXPECT_NEAR(pi.mean(), 0.5, 3.0 * 0.5 / std::sqrt(5000.0));
}

TEST(Propensity, SeparableDataIsError) {
  ObservedData d;
  d.x = Matrix(20, 1);
  d.t = IndexVector(20);
  d.y = Vector::Zero(20);
  for (int i = 0; i < 20; ++i) {
    d.x(i, 0) = i;
    d.t[i] = i >= 10;
  }
  try {
    estimate_propensity(d);
    FAIL();
  } catch (const AgentError& e) {
    EXPECT_NE(std::string(e.what()).find("separation"), std::string::npos);
  }
}

TEST(Propensity, SuppliedValuesAreClippedPassThrough) {
  Rng rng(14);
  auto d = linear_data(5, 1, 1.0, rng);
  d.pi = Vector(5);
  *d.pi << 0.0, 0.005, 0.5, 0.999, 1.0;
  const auto [model, pi] = estimate_propensity(d);
  EXPECT_EQ(model.iterations, 0);
  Vector expect(5);
  expect << 0.01, 0.01, 0.5, 0.99, 0.99;
  EXPECT_EQ(pi, expect);
}

TEST(Propensity, FittedValuesStayClipped) {
  Rng rng(15);
  ObservedData d;
  d.x = Matrix::NullaryExpr(400, 1, [&] { return rng.normal(); });
  d.t = IndexVector(400);
  d.y = Vector::Zero(400);
  for (int i = 0; i < 400; ++i) d.t[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-4.0 * d.x(i, 0)))) ? 1 : 0;
  const auto [model, pi] = estimate_propensity(d);
  EXPECT_GE(pi.minCoeff(), 0.01);
  EXPECT_LE(pi.maxCoeff(), 0.99);
  EXPECT_NEAR(model.coefficients[1], 4.0, 1.5);
}
