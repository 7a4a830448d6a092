#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vclip/numerics/tensor.hpp"

namespace vclip {

/// Parameters of the synthetic corpus. Each video walks through a few latent
/// topics; speech about a topic runs `speech_lag_s` seconds ahead of the
/// video seconds that show it.
struct CorpusConfig {
  std::size_t n_videos = 200;
  std::size_t n_topics = 8;
  std::size_t d_feat = 64;
  std::size_t vocab_size = 256;
  std::size_t tokens_per_topic = 32;
  double mean_duration_s = 60.0;
  /// Durations are uniform in mean * [1 - spread, 1 + spread].
  double duration_spread = 0.5;
  std::size_t topics_per_video = 3;
  std::size_t segment_min_s = 4;
  std::size_t segment_max_s = 10;
  double token_rate = 2.4;
  double utterance_min_s = 1.5;
  double utterance_max_s = 4.0;
  double utterance_gap_max_s = 1.0;
  double speech_lag_s = 4.0;
  double feature_noise = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);

struct VideoRecord {
  std::string video_id;
  double duration_s = 0.0;
  /// [T, D_feat], one token per second, T = floor(duration_s).
  Tensor<float> features;

  std::size_t token_count() const noexcept { return features.rows(); }
};

struct Utterance {
  std::string video_id;
  double start_s = 0.0;
  double end_s = 0.0;
  std::vector<int> tokens;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

/// Videos and transcripts, without any planted ground truth. Immutable once built.
class Corpus {
 public:
  Corpus(std::size_t d_feat, std::size_t vocab_size, nlohmann::json config_echo = {});

  /// Validates invariants (dims, sorted non-overlapping utterances, token range).
  void add_video(VideoRecord video, std::vector<Utterance> utterances);

  std::size_t size() const noexcept { return videos_.size(); }
  std::size_t d_feat() const noexcept { return d_feat_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  const VideoRecord& video(std::size_t i) const { return videos_.at(i); }
  const std::vector<VideoRecord>& videos() const noexcept { return videos_; }
  const std::vector<Utterance>& utterances(std::size_t i) const { return transcripts_.at(i); }
  std::optional<std::size_t> index_of(std::string_view video_id) const;
  const nlohmann::json& config_echo() const noexcept { return config_echo_; }
  std::size_t total_tokens() const;

  friend bool operator==(const Corpus& a, const Corpus& b);

 private:
  std::size_t d_feat_;
  std::size_t vocab_size_;
  nlohmann::json config_echo_;
  std::vector<VideoRecord> videos_;
  std::vector<std::vector<Utterance>> transcripts_;
};

/// Planted topics for one video. Evaluation only.
struct VideoTruth {
  std::string video_id;
  /// Topic shown at each second.
  std::vector<int> topic_track;
  /// Distinct topics in order of appearance.
  std::vector<int> steps;
  /// Topic each utterance talks about, aligned with the transcript.
  std::vector<int> utterance_topics;

  friend bool operator==(const VideoTruth&, const VideoTruth&) = default;
};

/// Ground truth kept apart from Corpus so the trainer cannot read it.
struct TopicAnnotations {
  std::size_t n_topics = 0;
  std::size_t tokens_per_topic = 0;
  double speech_lag_s = 0.0;
  std::vector<VideoTruth> videos;

  /// Vocabulary ids [first, first + count) belonging to `topic`.
  std::pair<int, int> topic_vocabulary(int topic) const;

  friend bool operator==(const TopicAnnotations&, const TopicAnnotations&) = default;
};

struct GeneratedCorpus {
  Corpus corpus;
  TopicAnnotations truth;
};

/// Deterministic given config.seed.
GeneratedCorpus generate_corpus(const CorpusConfig& config);

// Directory layout: manifest.json, features.bin, transcript.jsonl, topics.jsonl.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);
void save_annotations(const TopicAnnotations& truth, const std::filesystem::path& dir);
TopicAnnotations load_annotations(const std::filesystem::path& dir);

/// Fingerprint of the persisted corpus files.
std::string corpus_hash(const std::filesystem::path& dir);

}  // namespace vclip
