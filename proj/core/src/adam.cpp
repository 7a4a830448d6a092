#include "vclip/numerics/adam.hpp"

#include <algorithm>
#include <cmath>

#include "vclip/errors.hpp"

namespace vclip {

void AdamConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("adam: lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("adam: epsilon must be > 0");
  if (warmup_steps < 0 || total_steps < 0) throw ConfigError("adam: step counts must be >= 0");
  if (!(end_lr >= 0.0)) throw ConfigError("adam: end_lr must be >= 0");
  if (!(decay_power > 0.0)) throw ConfigError("adam: decay_power must be > 0");
}

double learning_rate_at(const AdamConfig& c, std::int64_t step) {
  if (c.warmup_steps > 0 && step <= c.warmup_steps) {
    return c.lr * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  }
  if (c.total_steps <= c.warmup_steps) return c.lr;
  const double span = static_cast<double>(c.total_steps - c.warmup_steps);
  const double progress =
      std::clamp(static_cast<double>(step - c.warmup_steps) / span, 0.0, 1.0);
  const double lr = (c.lr - c.end_lr) * std::pow(1.0 - progress, c.decay_power) + c.end_lr;
  return std::max(lr, 0.0);
}

template <typename T>
AdamState<T> AdamState<T>::init(const AdamConfig& config, std::span<const Tensor<T>> params) {
  config.validate();
  AdamState s;
  s.config = config;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.dims());
    s.second_moment.emplace_back(p.dims());
  }
  return s;
}

template <typename T>
AdamStepReport adam_step(std::span<Tensor<T>> params, std::span<Tensor<T>> grads,
                         std::span<const std::string> names, AdamState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].dims() != params[i].dims() || state.first_moment[i].dims() != params[i].dims()) {
      throw ShapeError("adam_step: tensor " + std::to_string(i) + " dims mismatch");
    }
    if (!grads[i].all_finite()) {
      const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
      throw TrainingError("non-finite gradient in tensor '" + name + "'");
    }
    for (T g : grads[i].values()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  AdamStepReport report;
  report.grad_norm = std::sqrt(sq);
  const auto& c = state.config;
  if (c.clip_norm > 0.0 && report.grad_norm > c.clip_norm) {
    report.clip_scale = c.clip_norm / report.grad_norm;
    for (auto& g : grads)
      for (T& v : g.values()) v = static_cast<T>(v * report.clip_scale);
  }

  state.step += 1;
  report.lr = learning_rate_at(c, state.step);
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T step_size = static_cast<T>(report.lr / bias1);
  const T inv_sqrt_bias2 = static_cast<T>(1.0 / std::sqrt(bias2));
  const T eps = static_cast<T>(c.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i].data();
    const T* g = grads[i].data();
    T* m = state.first_moment[i].data();
    T* v = state.second_moment[i].data();
    for (std::size_t j = 0; j < params[i].numel(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      p[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bias2 + eps);
    }
  }
  return report;
}

template struct AdamState<float>;
template struct AdamState<double>;
template AdamStepReport adam_step<float>(std::span<Tensor<float>>, std::span<Tensor<float>>,
                                         std::span<const std::string>, AdamState<float>&);
template AdamStepReport adam_step<double>(std::span<Tensor<double>>, std::span<Tensor<double>>,
                                          std::span<const std::string>, AdamState<double>&);

}  // namespace vclip
