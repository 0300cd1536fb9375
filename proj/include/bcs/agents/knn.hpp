#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "bcs/agents/common.hpp"
#include "bcs/core_types.hpp"
#include "bcs/error.hpp"
#include "bcs/rng.hpp"

namespace bcs::agents {

struct KnnOptions {
  std::optional<int> k;  // default ceil(n^0.6)
  int subsample_reps = 100;
  std::uint64_t seed = 1;
};

/// T-learner with k-nearest-neighbor outcome regressions in each arm.
/// Standard errors come from half-sampling: each replicate keeps half of
/// each arm with k/2 neighbors, and var(full) is taken as var(half) / 2.
class KnnAgentFit {
 public:
  AgentPosterior training;

  KnnAgentFit(const ObservedData& data, const KnnOptions& opt, int j) : y_(data.y), k_(0) {
    const Eigen::Index n = data.n();
    k_ = opt.k ? *opt.k : static_cast<int>(std::ceil(std::pow(static_cast<double>(n), 0.6)));
    if (k_ < 1) throw AgentError("knn agent requires k >= 1");
    if (opt.subsample_reps < 2) throw AgentError("knn agent requires at least 2 subsample replications");
    for (Eigen::Index i = 0; i < n; ++i) (data.t[i] == 1 ? treated_ : control_).push_back(static_cast<int>(i));
    if (static_cast<int>(treated_.size()) < k_ || static_cast<int>(control_.size()) < k_)
      throw AgentError("knn agent: an arm has fewer than k=" + std::to_string(k_) + " points");

    center_.resize(data.p());
    scale_.resize(data.p());
    for (Eigen::Index c = 0; c < data.p(); ++c) {
      center_[c] = data.x.col(c).mean();
      const double sd = std::sqrt((data.x.col(c).array() - center_[c]).square().mean());
      scale_[c] = sd > 0.0 ? sd : 1.0;
    }
    points_ = standardize(data.x);

    Rng rng(opt.seed);
    const int half_k = std::max(1, (k_ + 1) / 2);
    for (int r = 0; r < opt.subsample_reps; ++r) {
      halves_.push_back({half_sample(treated_, half_k, rng), half_sample(control_, half_k, rng)});
    }
    half_k_ = half_k;
    training.j = j;
    training.name = "knn";
    training = evaluate(data.x);
  }

  int k() const { return k_; }

  AgentPosterior evaluate(const Matrix& x) const {
    AgentPosterior out;
    out.j = training.j;
    out.name = training.name;
    const Matrix q = standardize(x);
    const Eigen::Index n = q.rows();
    out.tau_hat.resize(n);
    out.se.resize(n);
    std::vector<double> reps(halves_.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::RowVectorXd target = q.row(i);
      out.tau_hat[i] = arm_mean(target, treated_, k_) - arm_mean(target, control_, k_);
      double mean = 0.0;
      for (std::size_t r = 0; r < halves_.size(); ++r) {
        reps[r] = arm_mean(target, halves_[r].first, half_k_) - arm_mean(target, halves_[r].second, half_k_);
        mean += reps[r];
      }
      mean /= static_cast<double>(reps.size());
      double var = 0.0;
      for (double v : reps) var += (v - mean) * (v - mean);
      var /= static_cast<double>(reps.size() - 1);
      out.se[i] = std::sqrt(var / 2.0);
    }
    out.se = floor_se(out.se);
    return out;
  }

 private:
  Matrix standardize(const Matrix& x) const {
    return ((x.rowwise() - center_.transpose()).array().rowwise() / scale_.transpose().array()).matrix();
  }

  static std::vector<int> half_sample(const std::vector<int>& arm, int min_size, Rng& rng) {
    std::vector<int> idx = arm;
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    const auto size = std::max<std::size_t>(static_cast<std::size_t>(min_size), arm.size() / 2);
    idx.resize(std::min(size, arm.size()));
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  double arm_mean(const Eigen::RowVectorXd& target, const std::vector<int>& arm, int k) const {
    std::vector<std::pair<double, int>> d;
    d.reserve(arm.size());
    for (int a : arm) d.emplace_back((points_.row(a) - target).squaredNorm(), a);
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), d.size());
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(take), d.end());
    double s = 0.0;
    for (std::size_t a = 0; a < take; ++a) s += y_[d[a].second];
    return s / static_cast<double>(take);
  }

  Vector y_;
  Matrix points_;
  Vector center_;
  Vector scale_;
  std::vector<int> treated_;
  std::vector<int> control_;
  std::vector<std::pair<std::vector<int>, std::vector<int>>> halves_;
  int k_;
  int half_k_ = 1;
};

inline KnnAgentFit fit_knn_agent(const ObservedData& data, const KnnOptions& opt = {}, int j = 3) {
  return KnnAgentFit(data, opt, j);
}

}  // namespace bcs::agents
