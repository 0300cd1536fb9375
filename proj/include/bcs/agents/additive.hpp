#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "bcs/agents/common.hpp"
#include "bcs/core_types.hpp"
#include "bcs/error.hpp"
#include "bcs/rng.hpp"

namespace bcs::agents {

struct AdditiveOptions {
  int bootstrap_reps = 200;
  std::uint64_t seed = 1;
  /// Backfitting cycles used to choose smoothing parameters by GCV.
  int select_cycles = 10;
  int interior_knots = 8;
  /// Columns with at most this many distinct values get a group-means smoother.
  int max_discrete_levels = 5;
};

/// Cubic B-spline basis on [lo, hi] with equally spaced interior knots.
/// Inputs outside the range are clamped to the boundary.
class CubicBSplineBasis {
 public:
  CubicBSplineBasis() = default;
  CubicBSplineBasis(double lo, double hi, int interior) : lo_(lo), hi_(hi) {
    for (int r = 0; r < 4; ++r) knots_.push_back(lo);
    for (int k = 1; k <= interior; ++k) knots_.push_back(lo + (hi - lo) * k / (interior + 1));
    for (int r = 0; r < 4; ++r) knots_.push_back(hi);
  }

  int size() const { return static_cast<int>(knots_.size()) - 4; }

  Vector operator()(double x) const {
    x = std::clamp(x, lo_, hi_);
    const int q = size();
    // Locate span s with knots_[s] <= x < knots_[s+1] (last span closed).
    int s = 3;
    while (s < q - 1 && x >= knots_[static_cast<std::size_t>(s + 1)]) ++s;
    // de Boor / Cox recursion for the four nonzero cubic basis functions.
    double left[4], right[4], nb[4];
    nb[0] = 1.0;
    for (int d = 1; d <= 3; ++d) {
      left[d] = x - knots_[static_cast<std::size_t>(s + 1 - d)];
      right[d] = knots_[static_cast<std::size_t>(s + d)] - x;
      double saved = 0.0;
      for (int r = 0; r < d; ++r) {
        const double denom = right[r + 1] + left[d - r];
        const double temp = denom > 0.0 ? nb[r] / denom : 0.0;
        nb[r] = saved + right[r + 1] * temp;
        saved = left[d - r] * temp;
      }
      nb[d] = saved;
    }
    Vector out = Vector::Zero(q);
    for (int r = 0; r <= 3; ++r) out[s - 3 + r] = nb[r];
    return out;
  }

  /// Second-order difference penalty D'D.
  Matrix penalty() const {
    const int q = size();
    Matrix d = Matrix::Zero(q - 2, q);
    for (int r = 0; r < q - 2; ++r) {
      d(r, r) = 1.0;
      d(r, r + 1) = -2.0;
      d(r, r + 2) = 1.0;
    }
    return d.transpose() * d;
  }

 private:
  double lo_ = 0.0;
  double hi_ = 1.0;
  std::vector<double> knots_;
};

namespace detail {

inline constexpr double kRidge = 1e-8;

/// Smoother for one covariate: either a penalized spline or group means.
struct Smoother {
  Eigen::Index column = 0;
  bool discrete = false;
  CubicBSplineBasis basis;
  std::vector<double> levels;
  Matrix penalty;
  Matrix design;  // training rows x basis size

  Vector row(double x) const {
    if (!discrete) return basis(x);
    Vector out = Vector::Zero(static_cast<Eigen::Index>(levels.size()));
    for (std::size_t l = 0; l < levels.size(); ++l)
      if (levels[l] == x) out[static_cast<Eigen::Index>(l)] = 1.0;
    return out;
  }
};

struct ComponentFit {
  Vector coef;
  double center = 0.0;
  double lambda = 0.0;

  double value(const Vector& basis_row) const { return basis_row.dot(coef) - center; }
};

inline const std::vector<double>& lambda_grid() {
  static const std::vector<double> grid = [] {
    std::vector<double> g;
    for (int e = -3; e <= 5; ++e) {
      g.push_back(std::pow(10.0, e));
      g.push_back(3.0 * std::pow(10.0, e));
    }
    return g;
  }();
  return grid;
}

}  // namespace detail

/// Additive model Y = f1(X) + T f2(X) fitted by backfitting; the effect
/// estimate is f2. Standard errors are pointwise sds over refits with
/// iid Exp(1) observation weights, reusing the smoothing parameters chosen
/// by GCV on the unweighted fit.
class AdditiveAgentFit {
 public:
  AgentPosterior training;

  AdditiveAgentFit(const ObservedData& data, const AdditiveOptions& opt, int j) : opt_(opt) {
    const Eigen::Index n = data.n();
    if (n < 20) throw AgentError("additive agent requires n >= 20");
    if (opt.bootstrap_reps < 1) throw AgentError("se requires replications (bootstrap_reps >= 1)");
    if (opt.select_cycles < 1) throw AgentError("additive agent requires select_cycles >= 1");
    t_ = treated_mask(data);
    if (t_.sum() < 2.0 || t_.sum() > static_cast<double>(n) - 2.0)
      throw AgentError("additive agent requires at least two units per arm");

    // The effect components only see treated rows, so their bases span the treated range.
    const Vector all = Vector::Ones(n);
    for (Eigen::Index c = 0; c < data.p(); ++c) {
      smoothers_.push_back(make_smoother(data.x.col(c), c, all));
      effect_smoothers_.push_back(make_smoother(data.x.col(c), c, t_));
    }

    const Vector unit = Vector::Ones(n);
    base_ = backfit(data.y, unit, nullptr);
    std::vector<double> lambdas1, lambdas2;
    for (const auto& g : base_.g1) lambdas1.push_back(g.lambda);
    for (const auto& g : base_.g2) lambdas2.push_back(g.lambda);

    Rng rng(opt.seed);
    for (int r = 0; r < opt.bootstrap_reps; ++r) {
      Vector w(n);
      for (Eigen::Index i = 0; i < n; ++i) w[i] = rng.exponential();
      Fixed fixed{lambdas1, lambdas2};
      boot_.push_back(backfit(data.y, w, &fixed));
    }
    training.j = j;
    training.name = "am";
    training = evaluate(data.x);
  }

  AgentPosterior evaluate(const Matrix& x) const {
    AgentPosterior out;
    out.j = training.j;
    out.name = training.name;
    const Eigen::Index n = x.rows();
    out.tau_hat.resize(n);
    out.se.resize(n);
    std::vector<Vector> rows(effect_smoothers_.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < effect_smoothers_.size(); ++k)
        rows[k] = effect_smoothers_[k].row(x(i, effect_smoothers_[k].column));
      out.tau_hat[i] = effect(base_, rows);
      double mean = 0.0, sq = 0.0;
      for (const auto& b : boot_) {
        const double v = effect(b, rows);
        mean += v;
        sq += v * v;
      }
      const double reps = static_cast<double>(boot_.size());
      mean /= reps;
      out.se[i] = reps > 1.0 ? std::sqrt(std::max(0.0, (sq - reps * mean * mean) / (reps - 1.0))) : 0.0;
    }
    out.se = floor_se(out.se);
    return out;
  }

 private:
  struct State {
    double alpha1 = 0.0;
    double alpha2 = 0.0;
    std::vector<detail::ComponentFit> g1;
    std::vector<detail::ComponentFit> g2;
  };

  struct Fixed {
    std::vector<double> lambda1;
    std::vector<double> lambda2;
  };

  detail::Smoother make_smoother(const Vector& col, Eigen::Index c, const Vector& mask) const {
    detail::Smoother s;
    s.column = c;
    std::vector<double> uniq;
    for (Eigen::Index i = 0; i < col.size(); ++i)
      if (mask[i] > 0.0) uniq.push_back(col[i]);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    s.discrete = static_cast<int>(uniq.size()) <= opt_.max_discrete_levels;
    if (s.discrete) {
      s.levels = uniq;
      s.penalty = Matrix::Zero(static_cast<Eigen::Index>(uniq.size()), static_cast<Eigen::Index>(uniq.size()));
    } else {
      s.basis = CubicBSplineBasis(uniq.front(), uniq.back(), opt_.interior_knots);
      s.penalty = s.basis.penalty();
    }
    const Eigen::Index q = s.discrete ? static_cast<Eigen::Index>(uniq.size()) : s.basis.size();
    s.design.resize(col.size(), q);
    for (Eigen::Index i = 0; i < col.size(); ++i) s.design.row(i) = s.row(col[i]).transpose();
    return s;
  }

  double effect(const State& s, const std::vector<Vector>& rows) const {
    double v = s.alpha2;
    for (std::size_t k = 0; k < effect_smoothers_.size(); ++k) v += s.g2[k].value(rows[k]);
    return v;
  }

  /// Penalized weighted fit of partial residual r on one smoother over the
  /// rows with positive weight. Chooses lambda by GCV unless `fixed_lambda` >= 0.
  detail::ComponentFit fit_component(const detail::Smoother& s, const Matrix& gram, const Vector& r,
                                     const Vector& w, double fixed_lambda) const {
    const Vector rhs = s.design.transpose() * (w.array() * r.array()).matrix();
    const double wsum = w.sum();
    auto solve = [&](double lambda, double* edf) {
      Matrix a = gram + lambda * s.penalty;
      a.diagonal().array() += detail::kRidge * std::max(1.0, gram.diagonal().maxCoeff());
      Eigen::LLT<Matrix> llt(a);
      if (edf) *edf = llt.solve(gram).trace();
      return Vector(llt.solve(rhs));
    };
    detail::ComponentFit fit;
    if (s.discrete) {
      fit.coef = solve(0.0, nullptr);
    } else if (fixed_lambda >= 0.0) {
      fit.lambda = fixed_lambda;
      fit.coef = solve(fixed_lambda, nullptr);
    } else {
      const double rows = (w.array() > 0.0).cast<double>().sum();
      double best = std::numeric_limits<double>::infinity();
      for (double lambda : detail::lambda_grid()) {
        double edf = 0.0;
        Vector c = solve(lambda, &edf);
        const double rss = (w.array() * (r - s.design * c).array().square()).sum() / wsum;
        const double denom = 1.0 - edf / rows;
        const double gcv = denom > 0.0 ? rss / (denom * denom) : std::numeric_limits<double>::infinity();
        if (gcv < best) {
          best = gcv;
          fit.lambda = lambda;
          fit.coef = std::move(c);
        }
      }
    }
    fit.center = (w.array() * (s.design * fit.coef).array()).sum() / wsum;
    return fit;
  }

  /// GCV picks each smoother's lambda over a few backfitting cycles; the
  /// components are then the backfitting fixed point for those lambdas,
  /// computed by one joint penalized solve. Plain backfitting reaches the
  /// same point but can need hundreds of cycles when covariates are concurve.
  State backfit(const Vector& y, const Vector& w, const Fixed* fixed) const {
    if (fixed) return joint_fit(y, w, fixed->lambda1, fixed->lambda2);
    const Eigen::Index n = y.size();
    const std::size_t p = smoothers_.size();
    const Vector w1 = w;
    const Vector w2 = (w.array() * t_.array()).matrix();
    std::vector<Matrix> gram1(p), gram2(p);
    for (std::size_t k = 0; k < p; ++k) {
      gram1[k] = smoothers_[k].design.transpose() * w1.asDiagonal() * smoothers_[k].design;
      gram2[k] = effect_smoothers_[k].design.transpose() * w2.asDiagonal() * effect_smoothers_[k].design;
    }

    State s;
    s.g1.assign(p, {});
    s.g2.assign(p, {});
    std::vector<Vector> v1(p, Vector::Zero(n)), v2(p, Vector::Zero(n));
    s.alpha1 = (w1.array() * y.array()).sum() / w1.sum();
    Vector fitted = Vector::Constant(n, s.alpha1);
    for (int cycle = 0; cycle < opt_.select_cycles; ++cycle) {
      fitted.array() -= s.alpha1;
      s.alpha1 = (w1.array() * (y - fitted).array()).sum() / w1.sum();
      fitted.array() += s.alpha1;
      for (std::size_t k = 0; k < p; ++k) {
        const Vector r = y - fitted + v1[k];
        s.g1[k] = fit_component(smoothers_[k], gram1[k], r, w1, -1.0);
        Vector nv = (smoothers_[k].design * s.g1[k].coef).array() - s.g1[k].center;
        fitted += nv - v1[k];
        v1[k] = std::move(nv);
      }

      fitted -= s.alpha2 * t_;
      s.alpha2 = (w2.array() * (y - fitted).array()).sum() / w2.sum();
      fitted += s.alpha2 * t_;
      for (std::size_t k = 0; k < p; ++k) {
        const Vector r = y - fitted + v2[k];
        s.g2[k] = fit_component(effect_smoothers_[k], gram2[k], r, w2, -1.0);
        Vector nv = (((effect_smoothers_[k].design * s.g2[k].coef).array() - s.g2[k].center) * t_.array()).matrix();
        fitted += nv - v2[k];
        v2[k] = std::move(nv);
      }
    }
    std::vector<double> lambda1, lambda2;
    for (const auto& g : s.g1) lambda1.push_back(g.lambda);
    for (const auto& g : s.g2) lambda2.push_back(g.lambda);
    return joint_fit(y, w, lambda1, lambda2);
  }

  /// Weighted penalized least squares on [1, B1_1..B1_p, T, T*B2_1..T*B2_p].
  State joint_fit(const Vector& y, const Vector& w, const std::vector<double>& lambda1,
                  const std::vector<double>& lambda2) const {
    const Eigen::Index n = y.size();
    const std::size_t p = smoothers_.size();
    std::vector<Eigen::Index> off1(p), off2(p);
    Eigen::Index q = 1;
    for (std::size_t k = 0; k < p; ++k) {
      off1[k] = q;
      q += smoothers_[k].design.cols();
    }
    const Eigen::Index at2 = q++;
    for (std::size_t k = 0; k < p; ++k) {
      off2[k] = q;
      q += effect_smoothers_[k].design.cols();
    }

    Matrix z(n, q);
    z.col(0).setOnes();
    z.col(at2) = t_;
    for (std::size_t k = 0; k < p; ++k) {
      z.middleCols(off1[k], smoothers_[k].design.cols()) = smoothers_[k].design;
      z.middleCols(off2[k], effect_smoothers_[k].design.cols()) = t_.asDiagonal() * effect_smoothers_[k].design;
    }
    Matrix a = z.transpose() * w.asDiagonal() * z;
    const Vector rhs = z.transpose() * (w.array() * y.array()).matrix();
    // Same per-block penalty and ridge as the single-smoother fits.
    auto penalize = [&](Eigen::Index off, const detail::Smoother& sm, double lambda) {
      const Eigen::Index b = sm.design.cols();
      auto block = a.block(off, off, b, b);
      const double ridge = detail::kRidge * std::max(1.0, block.diagonal().maxCoeff());
      if (!sm.discrete) block += lambda * sm.penalty;
      block.diagonal().array() += ridge;
    };
    for (std::size_t k = 0; k < p; ++k) {
      penalize(off1[k], smoothers_[k], lambda1[k]);
      penalize(off2[k], effect_smoothers_[k], lambda2[k]);
    }
    Eigen::LDLT<Matrix> ldlt(a);
    if (ldlt.info() != Eigen::Success) throw AgentError("additive agent normal equations could not be factored");
    const Vector coef = ldlt.solve(rhs);
    if (!coef.allFinite()) throw AgentError("additive agent fit produced non-finite coefficients");

    State s;
    s.alpha1 = coef[0];
    s.alpha2 = coef[at2];
    s.g1.resize(p);
    s.g2.resize(p);
    const Vector w2 = (w.array() * t_.array()).matrix();
    for (std::size_t k = 0; k < p; ++k) {
      auto& g1 = s.g1[k];
      g1.coef = coef.segment(off1[k], smoothers_[k].design.cols());
      g1.lambda = lambda1[k];
      g1.center = (w.array() * (smoothers_[k].design * g1.coef).array()).sum() / w.sum();
      s.alpha1 += g1.center;
      auto& g2 = s.g2[k];
      g2.coef = coef.segment(off2[k], effect_smoothers_[k].design.cols());
      g2.lambda = lambda2[k];
      g2.center = (w2.array() * (effect_smoothers_[k].design * g2.coef).array()).sum() / w2.sum();
      s.alpha2 += g2.center;
    }
    return s;
  }

  AdditiveOptions opt_;
  Vector t_;
  std::vector<detail::Smoother> smoothers_;
  std::vector<detail::Smoother> effect_smoothers_;
  State base_;
  std::vector<State> boot_;
};

inline AdditiveAgentFit fit_additive_agent(const ObservedData& data, const AdditiveOptions& opt = {}, int j = 2) {
  return AdditiveAgentFit(data, opt, j);
}

}  // namespace bcs::agents
