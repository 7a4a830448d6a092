#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vclip/numerics/tensor.hpp"

namespace vclip {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
  /// Linear warm-up from 0 to lr over this many steps.
  std::int64_t warmup_steps = 0;
  /// Step at which the polynomial decay reaches end_lr; 0 keeps lr constant after warm-up.
  std::int64_t total_steps = 0;
  double end_lr = 0.0;
  double decay_power = 1.0;
  /// Global L2 gradient-norm clip; <= 0 disables clipping.
  double clip_norm = 2.0;

  void validate() const;
};

/// Learning rate applied on optimizer step `step` (1-based).
double learning_rate_at(const AdamConfig& config, std::int64_t step);

template <typename T>
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;

  static AdamState init(const AdamConfig& config, std::span<const Tensor<T>> params);
};

struct AdamStepReport {
  double lr = 0.0;
  double grad_norm = 0.0;
  /// Factor applied to gradients by clipping (1 when not clipped).
  double clip_scale = 1.0;
};

/// One bias-corrected Adam update with global-norm clipping. Gradients are
/// scaled in place by the clip factor. Throws TrainingError naming the first
/// tensor holding a non-finite gradient; parameters are untouched in that case.
template <typename T>
AdamStepReport adam_step(std::span<Tensor<T>> params, std::span<Tensor<T>> grads,
                         std::span<const std::string> names, AdamState<T>& state);

extern template struct AdamState<float>;
extern template struct AdamState<double>;

}  // namespace vclip
