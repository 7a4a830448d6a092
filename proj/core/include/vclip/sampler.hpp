#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "vclip/corpus.hpp"
#include "vclip/rng.hpp"

namespace vclip {

enum class OverlapMode {
  /// Video clip grown around a random center inside the text clip.
  overlapped,
  /// Video clip shares the text clip's start/end timestamps.
  exact_aligned,
};

struct SamplerConfig {
  std::size_t pairs_per_video = 16;
  double min_video_s = 3.0;
  double max_video_s = 32.0;
  std::size_t min_text_tokens = 8;
  std::size_t max_text_tokens = 61;
  OverlapMode overlap_mode = OverlapMode::overlapped;

  void validate() const;
};

void to_json(nlohmann::json& j, const SamplerConfig& c);
void from_json(const nlohmann::json& j, SamplerConfig& c);
OverlapMode parse_overlap_mode(const std::string& s);
std::string to_string(OverlapMode m);

struct TextSpan {
  std::size_t video = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  std::vector<int> tokens;

  friend bool operator==(const TextSpan&, const TextSpan&) = default;
};

struct VideoSpan {
  std::size_t video = 0;
  double start_s = 0.0;
  double end_s = 0.0;

  double length() const noexcept { return end_s - start_s; }
  friend bool operator==(const VideoSpan&, const VideoSpan&) = default;
};

struct ClipPair {
  VideoSpan video;
  TextSpan text;
};

/// Videos whose clips form one training batch.
struct VideoCluster {
  std::vector<std::size_t> videos;
  /// Video the cluster was retrieved around (random mode: the first member).
  std::size_t seed_video = 0;
};

/// True when the two intervals share a point of positive length.
bool spans_overlap(const VideoSpan& v, const TextSpan& t) noexcept;

/// Grows a text clip from a random utterance by whole neighbouring utterances
/// (alternating later/earlier) until a random target length is reached.
/// Returns nullopt when the video has no utterances (skip-video signal).
std::optional<TextSpan> sample_text_span(const Corpus& corpus, std::size_t video,
                                         const SamplerConfig& config, Rng& rng);

/// Centers a clip of `duration` at `center`, shifted into [0, video_duration];
/// truncated to the whole video only when the video is shorter than `duration`.
VideoSpan place_video_span(std::size_t video, double center, double duration,
                           double video_duration);

/// Random center inside the text clip, random duration in [min_video_s, max_video_s].
VideoSpan sample_video_span(const TextSpan& text, double video_duration,
                            const SamplerConfig& config, Rng& rng);

/// pairs_per_video pairs from every cluster video that has a transcript.
std::vector<ClipPair> assemble_batch(const VideoCluster& cluster, const Corpus& corpus,
                                     const SamplerConfig& config, Rng& rng);

}  // namespace vclip
