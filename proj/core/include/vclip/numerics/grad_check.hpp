#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vclip/numerics/graph.hpp"

namespace vclip {

struct GradCheckOptions {
  /// Central-difference step.
  double step = 1e-5;
  /// Coordinates probed per tensor; tensors at or below this size are probed fully.
  std::size_t coords_per_tensor = 64;
  std::uint64_t seed = 0;
  /// Lower bound of the relative-error denominator, multiplied by max(1, |f|).
  /// Coordinates with vanishing gradients are then compared on a scale the
  /// difference quotient can resolve.
  double denominator_floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using ScalarFn = std::function<double(const std::vector<Tensor<double>>& params)>;
using GraphScalarFn = std::function<Var(Graph<double>& g, std::span<const Var> params)>;

/// Compares `analytic` gradients with central differences of `loss` around `params`.
GradCheckResult grad_check(const ScalarFn& loss, const std::vector<Tensor<double>>& params,
                           const std::vector<Tensor<double>>& analytic,
                           const GradCheckOptions& options = {});

/// Builds the scalar with `build` on leaves bound to `params`; the analytic
/// gradient comes from Graph::backward.
GradCheckResult grad_check(const GraphScalarFn& build, const std::vector<Tensor<double>>& params,
                           const GradCheckOptions& options = {});

}  // namespace vclip
