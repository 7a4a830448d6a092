#pragma once

#include <cstddef>

#include <nlohmann/json.hpp>

#include "vclip/numerics/graph.hpp"

namespace vclip {

struct ObjectiveConfig {
  double temperature = 1.0;
  /// Unit-normalize embeddings before the dot product. Off by default: the
  /// contrastive score is the raw dot product.
  bool l2_normalize = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const ObjectiveConfig& c);
void from_json(const nlohmann::json& j, ObjectiveConfig& c);

struct LossReport {
  std::size_t batch = 0;
  /// Summed over pairs and both directions.
  double total = 0.0;
  /// Mean over pairs of the video->text and text->video terms.
  double video_to_text = 0.0;
  double text_to_video = 0.0;
  /// Off-diagonal similarity statistics (0 when N = 1).
  double offdiag_mean = 0.0;
  double offdiag_max = 0.0;

  double mean_per_pair() const { return batch ? total / double(batch) : 0.0; }
  double mean_per_pair_per_direction() const { return batch ? total / (2.0 * double(batch)) : 0.0; }
};

void to_json(nlohmann::json& j, const LossReport& r);

/// [N, N] with entry (i, j) = z_v(i) . z_t(j). Throws ShapeError on count mismatch.
template <typename T>
Var similarity(Graph<T>& g, Var video, Var text, const ObjectiveConfig& config);
template <typename T>
Tensor<T> similarity(const Tensor<T>& video, const Tensor<T>& text);

template <typename T>
struct InfoNce {
  /// Summed loss, shape [1].
  Var total;
  LossReport report;
};

/// Symmetric InfoNCE over a square similarity matrix: diagonal entries are the
/// positives, every other entry of the row (video->text) or column
/// (text->video) is an in-batch negative. Throws TrainingError when the
/// matrix holds non-finite values.
template <typename T>
InfoNce<T> info_nce(Graph<T>& g, Var sim, double temperature);

/// Forward-only convenience over a plain matrix.
template <typename T>
LossReport info_nce(const Tensor<T>& sim, double temperature);

/// Off-diagonal mean and max of a square matrix.
template <typename T>
std::pair<double, double> offdiag_stats(const Tensor<T>& sim);

}  // namespace vclip
