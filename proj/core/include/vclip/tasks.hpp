#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vclip/corpus.hpp"

namespace vclip {

/// Outside / unannotated marker in per-second gold and predictions.
inline constexpr int kOutside = -1;

struct TaskSpan {
  std::string video_id;
  double start_s = 0.0;
  double end_s = 0.0;

  friend bool operator==(const TaskSpan&, const TaskSpan&) = default;
};

struct RetrievalQuery {
  TaskSpan span;
  std::vector<int> tokens;
  std::size_t gold = 0;

  friend bool operator==(const RetrievalQuery&, const RetrievalQuery&) = default;
};

struct RetrievalTask {
  std::vector<RetrievalQuery> queries;
  std::vector<TaskSpan> candidates;

  void validate() const;
  friend bool operator==(const RetrievalTask&, const RetrievalTask&) = default;
};

struct QAItem {
  TaskSpan video;
  std::vector<std::vector<int>> answers;
  std::size_t gold = 0;

  friend bool operator==(const QAItem&, const QAItem&) = default;
};

struct QATask {
  std::vector<QAItem> items;

  void validate() const;
  friend bool operator==(const QATask&, const QATask&) = default;
};

struct SegmentationVideo {
  std::string video_id;
  /// Label index per second, or kOutside.
  std::vector<int> gold;

  friend bool operator==(const SegmentationVideo&, const SegmentationVideo&) = default;
};

struct SegmentationTask {
  std::vector<std::vector<int>> labels;
  std::vector<SegmentationVideo> videos;

  void validate() const;
  friend bool operator==(const SegmentationTask&, const SegmentationTask&) = default;
};

struct StepVideo {
  std::string video_id;
  std::vector<std::vector<int>> steps;
  /// Step index per second, or kOutside.
  std::vector<int> gold;

  friend bool operator==(const StepVideo&, const StepVideo&) = default;
};

struct StepTask {
  std::vector<StepVideo> videos;

  void validate() const;
  friend bool operator==(const StepTask&, const StepTask&) = default;
};

struct TaskOptions {
  std::size_t retrieval_queries = 100;
  std::size_t query_min_tokens = 16;
  std::size_t query_max_tokens = 40;
  std::size_t qa_items = 200;
  std::size_t qa_answers = 5;
  /// Tokens in each topic's label / step / answer text.
  std::size_t label_tokens = 12;
  /// The last `held_out_topics` topics get no label; their seconds are gold Outside.
  std::size_t held_out_topics = 1;
  std::size_t segmentation_videos = 50;
  std::size_t step_videos = 50;
  std::uint64_t seed = 0;
};

struct TaskSet {
  RetrievalTask retrieval;
  QATask qa;
  SegmentationTask segmentation;
  StepTask steps;
};

/// Builds the four evaluation tasks from planted topics.
TaskSet make_tasks(const Corpus& corpus, const TopicAnnotations& truth, const TaskOptions& options);

// retrieval.jsonl: lines of kind "query" {tokens, gold, span} or "candidate" {span}.
// qa.jsonl: one item per line. labels.json: {labels, videos}. steps.jsonl: one video per line.
void save_tasks(const TaskSet& tasks, const std::filesystem::path& dir);

RetrievalTask load_retrieval_task(const std::filesystem::path& file);
QATask load_qa_task(const std::filesystem::path& file);
SegmentationTask load_segmentation_task(const std::filesystem::path& file);
StepTask load_step_task(const std::filesystem::path& file);

}  // namespace vclip
