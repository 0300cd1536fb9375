#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "bcs/nngp.hpp"
#include "bcs/rng.hpp"

using namespace bcs;
using namespace bcs::nngp;

namespace {

Matrix random_points(Rng& rng, int n, int d) {
  return Matrix::NullaryExpr(n, d, [&] { return rng.uniform(); });
}

Matrix exp_cov(const Matrix& pts, double phi, double tau2) {
  const auto n = pts.rows();
  Matrix c(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < n; ++k) c(i, k) = tau2 * std::exp(-(pts.row(i) - pts.row(k)).norm() / phi);
  return c;
}

// Dense MVN log density via full-pivot LU, independent of the library path.
double dense_mvn_logpdf(const Vector& v, double mean, const Matrix& cov) {
  Eigen::FullPivLU<Matrix> lu(cov);
  const Vector r = v.array() - mean;
  const double logdet = std::log(std::abs(lu.determinant()));
  return -0.5 * (static_cast<double>(v.size()) * std::log(2.0 * std::numbers::pi) + logdet + r.dot(lu.solve(r)));
}

}  // namespace

TEST(Correlation, ClosedForms) {
  EXPECT_DOUBLE_EQ(correlation(0.0, 0.7), 1.0);
  EXPECT_NEAR(correlation(2.0, 2.0), 0.36787944117144233, 1e-15);
  EXPECT_THROW(correlation(1.0, 0.0), std::domain_error);
  EXPECT_THROW(correlation(-1.0, 1.0), std::domain_error);
}

TEST(Correlation, StrictlyDecreasingInDistance) {
  Rng rng(1);
  for (int k = 0; k < 500; ++k) {
    const double a = rng.uniform(0.0, 5.0), b = rng.uniform(0.0, 5.0), phi = rng.uniform(0.1, 3.0);
    if (a < b) {
      EXPECT_GT(correlation(a, phi), correlation(b, phi));
    }
  }
}

TEST(Graph, SinglePoint) {
  const auto g = build_graph(Matrix::Zero(1, 2), 5);
  EXPECT_TRUE(g.neighbors[0].empty());
  EXPECT_DOUBLE_EQ(conditioning(0, g, 1.0).f, 1.0);
}

TEST(Graph, CollinearWithOneNeighbor) {
  Matrix pts(3, 1);
  pts << 2.0, 0.0, 1.0;  // stored out of order on purpose
  const auto g = build_graph(pts, 1);
  EXPECT_EQ(g.order, (std::vector<int>{1, 2, 0}));
  EXPECT_TRUE(g.neighbors[1].empty());
  EXPECT_EQ(g.neighbors[2], std::vector<int>{1});
  EXPECT_EQ(g.neighbors[0], std::vector<int>{2});
}

TEST(Graph, SaturatedNeighborSetsAreAllPredecessors) {
  Rng rng(2);
  const auto pts = random_points(rng, 12, 3);
  const auto g = build_graph(pts, 11);
  for (int r = 0; r < 12; ++r) {
    auto nb = g.neighbors[static_cast<std::size_t>(g.order[static_cast<std::size_t>(r)])];
    std::sort(nb.begin(), nb.end());
    std::vector<int> pred(g.order.begin(), g.order.begin() + r);
    std::sort(pred.begin(), pred.end());
    EXPECT_EQ(nb, pred);
  }
}

TEST(Graph, StructuralInvariantsOnRandomSets) {
  Rng rng(3);
  for (int rep = 0; rep < 30; ++rep) {
    const int n = rng.uniform_int(2, 60), d = rng.uniform_int(1, 4), m = rng.uniform_int(1, 8);
    const auto pts = random_points(rng, n, d);
    const auto g = build_graph(pts, m);
    std::set<std::pair<int, int>> edges, reverse;
    for (int i = 0; i < n; ++i) {
      const auto& nb = g.neighbors[static_cast<std::size_t>(i)];
      const int rank = g.rank[static_cast<std::size_t>(i)];
      EXPECT_EQ(static_cast<int>(nb.size()), std::min(m, rank));
      for (std::size_t a = 0; a < nb.size(); ++a) {
        EXPECT_LT(g.rank[static_cast<std::size_t>(nb[a])], rank);
        edges.insert({i, nb[a]});
      }
      // nearest: no predecessor outside N(i) is strictly closer than the farthest member
      double worst = 0.0;
      for (int v : nb) worst = std::max(worst, (pts.row(i) - pts.row(v)).norm());
      for (int r = 0; r < rank; ++r) {
        const int q = g.order[static_cast<std::size_t>(r)];
        if (std::find(nb.begin(), nb.end(), q) == nb.end()) {
          EXPECT_GE((pts.row(i) - pts.row(q)).norm(), worst);
        }
      }
      for (const auto& link : g.children[static_cast<std::size_t>(i)]) {
        reverse.insert({link.child, i});
        EXPECT_EQ(g.neighbors[static_cast<std::size_t>(link.child)][static_cast<std::size_t>(link.position)], i);
      }
    }
    EXPECT_EQ(edges, reverse);
  }
}

TEST(Conditioning, EmptyNeighborSet) {
  const auto c = conditioning_from_distances(Vector(), Matrix(), 1.0);
  EXPECT_EQ(c.b.size(), 0);
  EXPECT_DOUBLE_EQ(c.f, 1.0);
}

TEST(Conditioning, SingleNeighborClosedForm) {
  Vector d(1);
  d << 1.0;
  Matrix dd = Matrix::Zero(1, 1);
  const auto c = conditioning_from_distances(d, dd, 1.0);
  EXPECT_NEAR(c.b[0], 0.36787944117144233, 1e-15);
  EXPECT_NEAR(c.f, 0.8646647167633873, 1e-15);
}

TEST(Conditioning, MatchesSchurComplement) {
  Rng rng(4);
  for (int rep = 0; rep < 300; ++rep) {
    const int k = rng.uniform_int(1, 5);
    const auto pts = random_points(rng, k + 1, rng.uniform_int(1, 3));
    const double phi = rng.uniform(0.05, 2.0);
    Matrix cov = exp_cov(pts, phi, 1.0);
    const Matrix cnn = cov.bottomRightCorner(k, k);
    const Vector cin = cov.block(1, 0, k, 1);
    const Vector b_ref = cnn.fullPivLu().solve(cin);
    const double f_ref = cov(0, 0) - cin.dot(b_ref);
    Vector dt(k);
    Matrix da(k, k);
    for (int a = 0; a < k; ++a) {
      dt[a] = (pts.row(0) - pts.row(a + 1)).norm();
      for (int b = 0; b < k; ++b) da(a, b) = (pts.row(a + 1) - pts.row(b + 1)).norm();
    }
    const auto c = conditioning_from_distances(dt, da, phi);
    EXPECT_LT((c.b - b_ref).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(c.f, f_ref, 1e-10);
    EXPECT_GT(c.f, 0.0);
    EXPECT_LE(c.f, 1.0);
  }
}

TEST(Conditioning, CloserNeighborGivesSmallerF) {
  Matrix dd = Matrix::Zero(1, 1);
  Vector near(1), far(1);
  near << 0.2;
  far << 0.9;
  EXPECT_LT(conditioning_from_distances(near, dd, 1.0).f, conditioning_from_distances(far, dd, 1.0).f);
}

TEST(Conditioning, DuplicatePointsStayFinite) {
  Matrix pts = Matrix::Zero(4, 2);
  const auto g = build_graph(pts, 3);
  const auto fc = field_coeffs(g, 1.0);
  for (int i = 0; i < 4; ++i) {
    EXPECT_TRUE(std::isfinite(fc.f[i]));
    EXPECT_GT(fc.f[i], 0.0);
  }
}

TEST(LogDensity, SinglePointIsUnivariateNormal) {
  const auto g = build_graph(Matrix::Zero(1, 1), 3);
  Vector v(1);
  v << 1.7;
  const double expected = -0.5 * std::log(2.0 * std::numbers::pi * 2.5) - 0.5 * (1.7 - 0.2) * (1.7 - 0.2) / 2.5;
  EXPECT_NEAR(nngp_log_density(v, 0.2, 2.5, g, 1.0), expected, 1e-12);
}

TEST(LogDensity, FullConditioningEqualsDenseGaussian) {
  Rng rng(5);
  for (int d : {1, 3, 5}) {
    for (int rep = 0; rep < 5; ++rep) {
      const auto pts = random_points(rng, 20, d);
      const double phi = rng.uniform(0.1, 1.5), tau2 = rng.uniform(0.3, 3.0);
      const Vector v = Vector::NullaryExpr(20, [&] { return rng.normal(); });
      const auto g = build_graph(pts, 19);
      Matrix cov = exp_cov(pts, phi, tau2);
      EXPECT_NEAR(nngp_log_density(v, 0.4, tau2, g, phi), dense_mvn_logpdf(v, 0.4, cov), 1e-6);
    }
  }
}

TEST(LogDensity, TranslationInvariance) {
  Rng rng(6);
  const auto pts = random_points(rng, 30, 2);
  const auto g = build_graph(pts, 5);
  const Vector v = Vector::NullaryExpr(30, [&] { return rng.normal(); });
  const double a = nngp_log_density(v, 0.1, 1.3, g, 0.4);
  const double b = nngp_log_density((v.array() + 7.5).matrix(), 7.6, 1.3, g, 0.4);
  EXPECT_NEAR(a, b, 1e-10);
}

TEST(PriorConditional, MatchesQuadraticOfJointDensity) {
  // log p(v) is quadratic in v_i: a finite second difference gives -gamma and
  // the slope at zero gives the linear term.
  Rng rng(7);
  const auto pts = random_points(rng, 40, 2);
  const auto g = build_graph(pts, 4);
  const auto fc = field_coeffs(g, 0.3);
  Vector v = Vector::NullaryExpr(40, [&] { return rng.normal(); });
  const double tau2 = 0.8;
  for (int i = 0; i < 40; ++i) {
    const auto pc = prior_conditional(v, tau2, g, fc, i);
    auto at = [&](double x) {
      Vector w = v;
      w[i] = x;
      return log_density(w, 0.0, tau2, g, fc);
    };
    const double h = 0.5;
    const double second = (at(h) - 2.0 * at(0.0) + at(-h)) / (h * h);
    const double first = (at(h) - at(-h)) / (2.0 * h);
    EXPECT_NEAR(-second, pc.gamma, 1e-6 * pc.gamma);
    EXPECT_NEAR(first, pc.linear, 1e-6 * std::max(1.0, std::abs(pc.linear)));
  }
}

TEST(SampleField, EmpiricalCovarianceMatchesDenseKernel) {
  Rng rng(8);
  const auto pts = random_points(rng, 5, 2);
  const auto g = build_graph(pts, 4);
  const auto fc = field_coeffs(g, 0.5);
  const Matrix cov = exp_cov(pts, 0.5, 2.0);
  Matrix acc = Matrix::Zero(5, 5);
  const int draws = 40000;
  for (int s = 0; s < draws; ++s) {
    const Vector v = sample_field(1.0, 2.0, g, fc, rng);
    const Vector c = v.array() - 1.0;
    acc += c * c.transpose();
  }
  acc /= draws;
  EXPECT_LT((acc - cov).cwiseAbs().maxCoeff(), 0.08);
}

TEST(NearestPoints, UnrestrictedAndTieBrokenByIndex) {
  Matrix pts(4, 1);
  pts << 1.0, -1.0, 3.0, 0.5;
  Eigen::RowVectorXd x(1);
  x << 0.0;
  EXPECT_EQ(nearest_points(pts, x, 3), (std::vector<int>{3, 0, 1}));
}
