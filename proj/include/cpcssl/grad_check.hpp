#pragma once

#include <functional>
#include <string>

#include "cpcssl/parameters.hpp"

namespace cpcssl {

/// Builds a scalar on the given graph. Must be deterministic: any randomness
/// comes from an RngState the closure copies on every call.
using ScalarObjective = std::function<Var(Graph&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  /// Coordinates checked per parameter tensor; 0 checks every coordinate.
  Index max_coords_per_param = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  double worst_autodiff = 0.0;
  double worst_finite_diff = 0.0;
  Index coordinates = 0;
};

/// Central-difference comparison of the autodiff gradient, per coordinate:
/// |g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|), maximised over coordinates.
GradCheckResult grad_check(const ScalarObjective& fn, const ParameterStore& params,
                           const GradCheckOptions& options = {});

}  // namespace cpcssl
