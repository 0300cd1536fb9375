#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <numeric>
#include <string>
#include <vector>

#include "bcs/core_types.hpp"
#include "bcs/error.hpp"

namespace bcs::nngp {

/// Diagonal jitter added to neighbor correlation matrices before factorization.
inline constexpr double kJitter = 1e-10;

/// Exponential correlation exp(-d / phi).
inline double correlation(double d, double phi) {
  if (!(phi > 0.0)) throw std::domain_error("correlation range must be positive");
  if (d < 0.0) throw std::domain_error("distance must be nonnegative");
  return std::exp(-d / phi);
}

struct ChildLink {
  int child;     // t with i in N(t)
  int position;  // index of i inside N(t)
};

/// Ordered nearest-neighbor conditioning structure over a fixed point set.
/// Indices everywhere are original row indices of the input points.
struct NngpGraph {
  std::vector<int> order;                    // order[r] = point with rank r
  std::vector<int> rank;                     // inverse of order
  std::vector<std::vector<int>> neighbors;   // N(i), nearest first
  std::vector<std::vector<ChildLink>> children;
  std::vector<Vector> dist_to_neighbors;     // |x_i - x_N(i)|
  std::vector<Matrix> dist_among_neighbors;  // pairwise distances within N(i)
  int m = 0;

  int size() const { return static_cast<int>(neighbors.size()); }
};

/// B (regression on neighbors) and F (residual variance fraction).
struct ConditioningCoeffs {
  Vector b;
  double f = 1.0;
};

/// Conditioning coefficients of every point in a graph at one range value.
struct FieldCoeffs {
  std::vector<Vector> b;
  Vector f;
  double phi = 0.0;
};

namespace detail {

/// Sum of per-column standardized coordinates; zero-variance columns contribute nothing.
inline Vector ordering_key(const Matrix& points) {
  Vector key = Vector::Zero(points.rows());
  for (Eigen::Index c = 0; c < points.cols(); ++c) {
    const double mean = points.col(c).mean();
    const double sd = std::sqrt((points.col(c).array() - mean).square().mean());
    if (sd > 0.0) key.array() += (points.col(c).array() - mean) / sd;
  }
  return key;
}

/// The k candidates nearest to `target`, ties broken by smaller index.
inline std::vector<int> nearest_of(const Matrix& points, const Eigen::RowVectorXd& target,
                                   const std::vector<int>& candidates, int k) {
  std::vector<std::pair<double, int>> scored;
  scored.reserve(candidates.size());
  for (int c : candidates) scored.emplace_back((points.row(c) - target).squaredNorm(), c);
  const auto take = static_cast<std::ptrdiff_t>(std::min<std::size_t>(static_cast<std::size_t>(k), scored.size()));
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end());
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(take));
  for (std::ptrdiff_t a = 0; a < take; ++a) out.push_back(scored[static_cast<std::size_t>(a)].second);
  return out;
}

inline Matrix pairwise_distances(const Matrix& points, const std::vector<int>& idx) {
  const auto k = static_cast<Eigen::Index>(idx.size());
  Matrix d(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    d(a, a) = 0.0;
    for (Eigen::Index b = a + 1; b < k; ++b)
      d(a, b) = d(b, a) = (points.row(idx[static_cast<std::size_t>(a)]) - points.row(idx[static_cast<std::size_t>(b)])).norm();
  }
  return d;
}

}  // namespace detail

/// Builds the ordered m-nearest-predecessor graph. Order is the ascending
/// coordinate-sum of standardized columns with ties broken by index.
inline NngpGraph build_graph(const Matrix& points, int m) {
  const auto n = static_cast<int>(points.rows());
  if (n < 1) throw std::invalid_argument("build_graph requires at least one point");
  if (m < 1) throw std::invalid_argument("build_graph requires m >= 1");

  NngpGraph g;
  g.m = m;
  const Vector key = detail::ordering_key(points);
  g.order.resize(static_cast<std::size_t>(n));
  std::iota(g.order.begin(), g.order.end(), 0);
  std::stable_sort(g.order.begin(), g.order.end(), [&](int a, int b) { return key[a] < key[b]; });
  g.rank.assign(static_cast<std::size_t>(n), 0);
  for (int r = 0; r < n; ++r) g.rank[static_cast<std::size_t>(g.order[static_cast<std::size_t>(r)])] = r;

  g.neighbors.assign(static_cast<std::size_t>(n), {});
  g.children.assign(static_cast<std::size_t>(n), {});
  g.dist_to_neighbors.assign(static_cast<std::size_t>(n), Vector());
  g.dist_among_neighbors.assign(static_cast<std::size_t>(n), Matrix());

  std::vector<int> predecessors;
  predecessors.reserve(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    const int i = g.order[static_cast<std::size_t>(r)];
    auto nb = detail::nearest_of(points, points.row(i), predecessors, m);
    Vector d(static_cast<Eigen::Index>(nb.size()));
    for (std::size_t a = 0; a < nb.size(); ++a) d[static_cast<Eigen::Index>(a)] = (points.row(i) - points.row(nb[a])).norm();
    g.dist_to_neighbors[static_cast<std::size_t>(i)] = std::move(d);
    g.dist_among_neighbors[static_cast<std::size_t>(i)] = detail::pairwise_distances(points, nb);
    for (std::size_t a = 0; a < nb.size(); ++a)
      g.children[static_cast<std::size_t>(nb[a])].push_back({i, static_cast<int>(a)});
    g.neighbors[static_cast<std::size_t>(i)] = std::move(nb);
    predecessors.push_back(i);
  }
  return g;
}

/// Conditioning of a point on a neighbor set given the distances involved.
inline ConditioningCoeffs conditioning_from_distances(const Vector& d_to, const Matrix& d_among, double phi,
                                                      int point = -1) {
  ConditioningCoeffs out;
  const auto k = d_to.size();
  if (k == 0) return out;
  if (!(phi > 0.0)) throw std::domain_error("correlation range must be positive");
  Matrix c_nn = (-d_among.array() / phi).exp().matrix();
  const Vector c_in = (-d_to.array() / phi).exp().matrix();
  Eigen::LLT<Matrix> llt(c_nn);
  // Jitter only (near-)singular neighbor sets such as duplicated points, so
  // distinct points keep the exact Gaussian conditionals.
  if (llt.info() != Eigen::Success || llt.matrixLLT().diagonal().array().square().minCoeff() <= kJitter) {
    c_nn.diagonal().array() += kJitter;
    llt.compute(c_nn);
  }
  if (llt.info() != Eigen::Success)
    throw NumericalError("neighbor correlation matrix is singular at point " + std::to_string(point));
  out.b = llt.solve(c_in);
  const double f = 1.0 - c_in.dot(out.b);
  out.f = std::clamp(f, std::numeric_limits<double>::epsilon(), 1.0);
  return out;
}

inline ConditioningCoeffs conditioning(int i, const NngpGraph& graph, double phi) {
  return conditioning_from_distances(graph.dist_to_neighbors[static_cast<std::size_t>(i)],
                                     graph.dist_among_neighbors[static_cast<std::size_t>(i)], phi, i);
}

inline FieldCoeffs field_coeffs(const NngpGraph& graph, double phi) {
  FieldCoeffs fc;
  fc.phi = phi;
  fc.b.resize(static_cast<std::size_t>(graph.size()));
  fc.f.resize(graph.size());
  for (int i = 0; i < graph.size(); ++i) {
    auto c = conditioning(i, graph, phi);
    fc.b[static_cast<std::size_t>(i)] = std::move(c.b);
    fc.f[i] = c.f;
  }
  return fc;
}

/// v*_i - B_i v*_N(i) for centered values v*.
inline double conditional_residual(const Eigen::Ref<const Vector>& centered, const NngpGraph& graph, const FieldCoeffs& coeffs,
                                   int i) {
  const auto& nb = graph.neighbors[static_cast<std::size_t>(i)];
  const auto& b = coeffs.b[static_cast<std::size_t>(i)];
  double pred = 0.0;
  for (std::size_t a = 0; a < nb.size(); ++a) pred += b[static_cast<Eigen::Index>(a)] * centered[nb[a]];
  return centered[i] - pred;
}

/// Sum over points of (v*_i - B_i v*_N(i))^2 / F_i.
inline double scaled_residual_ss(const Eigen::Ref<const Vector>& centered, const NngpGraph& graph, const FieldCoeffs& coeffs) {
  double ss = 0.0;
  for (int i = 0; i < graph.size(); ++i) {
    const double r = conditional_residual(centered, graph, coeffs, i);
    ss += r * r / coeffs.f[i];
  }
  return ss;
}

/// Product-of-conditionals log density using precomputed coefficients.
inline double log_density(const Eigen::Ref<const Vector>& values, double mean, double tau2, const NngpGraph& graph,
                          const FieldCoeffs& coeffs) {
  if (!(tau2 > 0.0)) throw std::domain_error("tau2 must be positive");
  const Vector centered = values.array() - mean;
  constexpr double log2pi = 1.8378770664093454835606594728112;
  double total = 0.0;
  for (int i = 0; i < graph.size(); ++i) {
    const double r = conditional_residual(centered, graph, coeffs, i);
    const double var = tau2 * coeffs.f[i];
    total += -0.5 * (log2pi + std::log(var) + r * r / var);
  }
  return total;
}

inline double nngp_log_density(const Vector& values, double mean, double tau2, const NngpGraph& graph,
                               double phi) {
  return log_density(values, mean, tau2, graph, field_coeffs(graph, phi));
}

/// Prior full-conditional pieces for the single value at point i given the
/// rest of its field: precision gamma and linear term m, both in centered
/// units, so that v*_i | rest ~ N(m / gamma, 1 / gamma).
struct PriorConditional {
  double gamma = 0.0;
  double linear = 0.0;
};

inline PriorConditional prior_conditional(const Eigen::Ref<const Vector>& centered, double tau2, const NngpGraph& graph,
                                          const FieldCoeffs& coeffs, int i) {
  PriorConditional pc;
  const auto ui = static_cast<std::size_t>(i);
  const double own_prec = 1.0 / (tau2 * coeffs.f[i]);
  pc.gamma = own_prec;
  const auto& nb = graph.neighbors[ui];
  const auto& b = coeffs.b[ui];
  double pred = 0.0;
  for (std::size_t a = 0; a < nb.size(); ++a) pred += b[static_cast<Eigen::Index>(a)] * centered[nb[a]];
  pc.linear = pred * own_prec;

  for (const auto& link : graph.children[ui]) {
    const auto ut = static_cast<std::size_t>(link.child);
    const auto& bt = coeffs.b[ut];
    const auto& nt = graph.neighbors[ut];
    const double w = bt[link.position];
    const double prec_t = 1.0 / (tau2 * coeffs.f[link.child]);
    double others = 0.0;
    for (std::size_t s = 0; s < nt.size(); ++s)
      if (static_cast<int>(s) != link.position) others += bt[static_cast<Eigen::Index>(s)] * centered[nt[s]];
    pc.gamma += w * w * prec_t;
    pc.linear += w * prec_t * (centered[link.child] - others);
  }
  return pc;
}

/// Draws a field from the NNGP prior by sampling points in graph order.
template <class RngT>
Vector sample_field(double mean, double tau2, const NngpGraph& graph, const FieldCoeffs& coeffs, RngT& rng) {
  Vector centered = Vector::Zero(graph.size());
  for (int i : graph.order) {
    const auto& nb = graph.neighbors[static_cast<std::size_t>(i)];
    const auto& b = coeffs.b[static_cast<std::size_t>(i)];
    double pred = 0.0;
    for (std::size_t a = 0; a < nb.size(); ++a) pred += b[static_cast<Eigen::Index>(a)] * centered[nb[a]];
    centered[i] = pred + std::sqrt(tau2 * coeffs.f[i]) * rng.normal();
  }
  return (centered.array() + mean).matrix();
}

/// Unrestricted m nearest rows of `points` to `target` (nearest first, ties by index).
inline std::vector<int> nearest_points(const Matrix& points, const Eigen::RowVectorXd& target, int m) {
  std::vector<int> all(static_cast<std::size_t>(points.rows()));
  std::iota(all.begin(), all.end(), 0);
  return detail::nearest_of(points, target, all, m);
}

}  // namespace bcs::nngp
