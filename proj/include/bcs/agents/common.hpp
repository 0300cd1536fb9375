#pragma once

#include <string>

#include "bcs/core_types.hpp"

namespace bcs::agents {

/// Built-in agents report at least this standard error so their output
/// always passes validation (zero-noise fits would otherwise give se = 0).
inline constexpr double kSeFloor = 1e-6;

inline std::string covariate_name(const ObservedData& data, Eigen::Index k) {
  if (static_cast<std::size_t>(k) < data.covariate_names.size()) return data.covariate_names[static_cast<std::size_t>(k)];
  return "x" + std::to_string(k + 1);
}

inline Vector floor_se(Vector se) { return se.cwiseMax(kSeFloor); }

inline Vector treated_mask(const ObservedData& data) { return data.t.cast<double>(); }

}  // namespace bcs::agents
