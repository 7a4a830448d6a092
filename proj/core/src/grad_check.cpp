#include "vclip/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "vclip/errors.hpp"
#include "vclip/rng.hpp"

namespace vclip {

GradCheckResult grad_check(const ScalarFn& loss, const std::vector<Tensor<double>>& params,
                           const std::vector<Tensor<double>>& analytic,
                           const GradCheckOptions& options) {
  if (analytic.size() != params.size()) {
    throw ShapeError("grad_check: analytic gradient count differs from parameter count");
  }
  GradCheckResult result;
  std::vector<Tensor<double>> probe = params;
  // Roundoff in the central difference grows with |f|, so the floor does too.
  const double floor = options.denominator_floor * std::max(1.0, std::abs(loss(params)));
  Rng rng(options.seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (analytic[t].dims() != params[t].dims()) {
      throw ShapeError("grad_check: analytic gradient dims differ for tensor " + std::to_string(t));
    }
    const std::size_t n = params[t].numel();
    std::vector<std::size_t> coords;
    if (n <= options.coords_per_tensor) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      coords = rng.sample_without_replacement(n, options.coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double original = probe[t][i];
      probe[t][i] = original + options.step;
      const double up = loss(probe);
      probe[t][i] = original - options.step;
      const double down = loss(probe);
      probe[t][i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double exact = analytic[t][i];
      const double denom = std::max({std::abs(exact), std::abs(numeric), floor});
      const double rel = std::abs(exact - numeric) / denom;
      ++result.coords_checked;
      if (rel > result.max_rel_error || !std::isfinite(rel)) {
        result.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        result.worst_tensor = t;
        result.worst_index = i;
        result.worst_analytic = exact;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const GraphScalarFn& build, const std::vector<Tensor<double>>& params,
                           const GradCheckOptions& options) {
  auto evaluate = [&](const std::vector<Tensor<double>>& ps, std::vector<Tensor<double>>* grads) {
    Graph<double> g;
    std::vector<Var> leaves;
    leaves.reserve(ps.size());
    for (const auto& p : ps) leaves.push_back(g.bind(p, grads != nullptr));
    const Var out = build(g, leaves);
    if (g.value(out).numel() != 1) throw ShapeError("grad_check: function is not scalar");
    if (grads) {
      g.backward(out);
      for (Var v : leaves) grads->push_back(g.grad(v));
    }
    return g.value(out)[0];
  };
  std::vector<Tensor<double>> analytic;
  evaluate(params, &analytic);
  return grad_check([&](const std::vector<Tensor<double>>& ps) { return evaluate(ps, nullptr); },
                    params, analytic, options);
}

}  // namespace vclip
