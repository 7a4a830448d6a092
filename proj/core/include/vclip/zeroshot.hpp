#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vclip/corpus.hpp"
#include "vclip/encoder.hpp"
#include "vclip/tasks.hpp"

namespace vclip {

// Ties go to the lowest index everywhere in this module.

/// Candidate order for one query, best first.
std::vector<std::size_t> rank_by_score(std::span<const double> scores);
std::size_t argmax_lowest(std::span<const double> scores);

struct RecallAtK {
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  std::size_t queries = 0;
};

/// Recall from query embeddings [Q, d], candidate embeddings [C, d] and gold
/// candidate indices.
RecallAtK recall_at_k(const Tensor<float>& queries, const Tensor<float>& candidates,
                      std::span<const std::size_t> gold);

RecallAtK eval_retrieval(const RetrievalTask& task, const Corpus& corpus,
                         const EncoderParams<float>& params);

/// Fraction of items whose gold answer scores highest against the video.
double eval_qa(const QATask& task, const Corpus& corpus, const EncoderParams<float>& params);

struct LabelSet {
  /// [n_labels, d_model]
  Tensor<float> embeddings;
  /// max over distinct label pairs of their dot product.
  double gamma = 0.0;
};

/// Throws InputError for fewer than two labels.
double estimate_gamma(const Tensor<float>& label_embeddings);
LabelSet make_label_set(std::span<const std::vector<int>> labels,
                        const EncoderParams<float>& params);

struct WindowOptions {
  double window_s = 32.0;
  double stride_s = 16.0;
};

/// Window start times covering [0, duration): 0, stride, 2*stride, ... plus a
/// final window flush with the end when the regular ones fall short.
std::vector<double> window_starts(double duration_s, const WindowOptions& options);

/// Logits [T, n] of every second's token state against `queries` ([n, d]).
/// Windows slide over the video; seconds covered by several windows average
/// their logits.
Tensor<float> second_logits(std::size_t video, const Corpus& corpus,
                            const EncoderParams<float>& params, const Tensor<float>& queries,
                            const WindowOptions& options = {});

/// argmax label per row when the row max exceeds gamma, else kOutside.
std::vector<int> reject_decode(const Tensor<float>& logits, double gamma);

std::vector<int> segment_video(std::size_t video, const Corpus& corpus, const LabelSet& labels,
                               const EncoderParams<float>& params,
                               const WindowOptions& options = {});

/// Row-wise softmax of step logits, computed in double.
Tensor<float> step_distribution(const Tensor<float>& logits);

/// [T, n_steps] probabilities of each second belonging to each step.
Tensor<float> localize_steps(std::size_t video, const Corpus& corpus,
                             std::span<const std::vector<int>> steps,
                             const EncoderParams<float>& params,
                             const WindowOptions& options = {});

/// Second with the highest probability for each step.
std::vector<std::size_t> predicted_step_times(const Tensor<float>& distribution);

/// Correct seconds over counted seconds. include_outside = false skips
/// seconds whose gold is kOutside. Returns 0 when nothing is counted.
double frame_accuracy(std::span<const int> gold, std::span<const int> pred, bool include_outside);

/// Fraction of gold-kOutside seconds predicted kOutside (0 when there are none).
double outside_recall(std::span<const int> gold, std::span<const int> pred);

/// Per video: fraction of annotated steps whose predicted second lies inside
/// that step's gold seconds; then averaged over videos.
double average_step_recall(std::span<const std::vector<int>> gold,
                           std::span<const std::vector<std::size_t>> predicted_times);

inline constexpr const char* kStepRecallDefinition = "per-video-mean-of-step-hits/v1";

struct SegmentationMetrics {
  double frame_accuracy = 0.0;
  /// Accuracy restricted to seconds with a labelled gold topic.
  double seen_accuracy = 0.0;
  /// Share of held-out (gold Outside) seconds predicted Outside.
  double outside_recall = 0.0;
  double gamma = 0.0;
};

SegmentationMetrics eval_segmentation(const SegmentationTask& task, const Corpus& corpus,
                                      const EncoderParams<float>& params);

double eval_localization(const StepTask& task, const Corpus& corpus,
                         const EncoderParams<float>& params);

/// metrics.json: a list of {task, metric, value, config_hash, checkpoint_hash}.
nlohmann::json metrics_document(const std::string& task, const std::map<std::string, double>& values,
                                const std::string& config_hash, const std::string& checkpoint_hash);

}  // namespace vclip
