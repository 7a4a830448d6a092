#include "vclip/sampler.hpp"

#include <algorithm>

#include "vclip/errors.hpp"

namespace vclip {

void SamplerConfig::validate() const {
  if (pairs_per_video == 0) throw ConfigError("sampler: pairs_per_video must be >= 1");
  if (!(min_video_s > 0.0 && min_video_s <= max_video_s)) {
    throw ConfigError("sampler: need 0 < min_video_s <= max_video_s");
  }
  if (min_text_tokens == 0 || min_text_tokens > max_text_tokens) {
    throw ConfigError("sampler: need 1 <= min_text_tokens <= max_text_tokens");
  }
}

OverlapMode parse_overlap_mode(const std::string& s) {
  if (s == "overlapped") return OverlapMode::overlapped;
  if (s == "exact_aligned") return OverlapMode::exact_aligned;
  throw ConfigError("unknown overlap mode '" + s + "'");
}

std::string to_string(OverlapMode m) {
  return m == OverlapMode::overlapped ? "overlapped" : "exact_aligned";
}

void to_json(nlohmann::json& j, const SamplerConfig& c) {
  j = nlohmann::json{{"pairs_per_video", c.pairs_per_video},
                     {"min_video_s", c.min_video_s},
                     {"max_video_s", c.max_video_s},
                     {"min_text_tokens", c.min_text_tokens},
                     {"max_text_tokens", c.max_text_tokens},
                     {"overlap_mode", to_string(c.overlap_mode)}};
}

void from_json(const nlohmann::json& j, SamplerConfig& c) {
  const SamplerConfig d;
  c.pairs_per_video = j.value("pairs_per_video", d.pairs_per_video);
  c.min_video_s = j.value("min_video_s", d.min_video_s);
  c.max_video_s = j.value("max_video_s", d.max_video_s);
  c.min_text_tokens = j.value("min_text_tokens", d.min_text_tokens);
  c.max_text_tokens = j.value("max_text_tokens", d.max_text_tokens);
  c.overlap_mode = parse_overlap_mode(j.value("overlap_mode", to_string(d.overlap_mode)));
}

bool spans_overlap(const VideoSpan& v, const TextSpan& t) noexcept {
  return std::max(v.start_s, t.start_s) < std::min(v.end_s, t.end_s);
}

std::optional<TextSpan> sample_text_span(const Corpus& corpus, std::size_t video,
                                         const SamplerConfig& config, Rng& rng) {
  const auto& utts = corpus.utterances(video);
  if (utts.empty()) return std::nullopt;
  const auto n = static_cast<std::int64_t>(utts.size());
  const auto seed_idx = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
  const auto target = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(config.min_text_tokens),
                      static_cast<std::int64_t>(config.max_text_tokens)));

  std::size_t lo = seed_idx, hi = seed_idx;
  std::size_t count = utts[seed_idx].tokens.size();
  bool prefer_later = true;
  while (count < target) {
    const bool can_later =
        hi + 1 < utts.size() && count + utts[hi + 1].tokens.size() <= config.max_text_tokens;
    const bool can_earlier =
        lo > 0 && count + utts[lo - 1].tokens.size() <= config.max_text_tokens;
    if (!can_later && !can_earlier) break;
    if ((prefer_later && can_later) || !can_earlier) {
      ++hi;
      count += utts[hi].tokens.size();
    } else {
      --lo;
      count += utts[lo].tokens.size();
    }
    prefer_later = !prefer_later;
  }

  TextSpan span;
  span.video = video;
  span.start_s = utts[lo].start_s;
  span.end_s = utts[hi].end_s;
  for (std::size_t i = lo; i <= hi; ++i) {
    span.tokens.insert(span.tokens.end(), utts[i].tokens.begin(), utts[i].tokens.end());
  }
  // Only a single utterance longer than the limit can get here.
  if (span.tokens.size() > config.max_text_tokens) span.tokens.resize(config.max_text_tokens);
  return span;
}

VideoSpan place_video_span(std::size_t video, double center, double duration,
                           double video_duration) {
  if (duration >= video_duration) return {video, 0.0, video_duration};
  double start = center - 0.5 * duration;
  if (start < 0.0) start = 0.0;
  if (start + duration > video_duration) start = video_duration - duration;
  return {video, start, start + duration};
}

VideoSpan sample_video_span(const TextSpan& text, double video_duration,
                            const SamplerConfig& config, Rng& rng) {
  const double center = rng.uniform(text.start_s, text.end_s);
  const double duration = rng.uniform(config.min_video_s, config.max_video_s);
  return place_video_span(text.video, center, duration, video_duration);
}

std::vector<ClipPair> assemble_batch(const VideoCluster& cluster, const Corpus& corpus,
                                     const SamplerConfig& config, Rng& rng) {
  if (cluster.videos.empty()) throw InputError("assemble_batch: empty cluster");
  std::vector<ClipPair> batch;
  batch.reserve(cluster.videos.size() * config.pairs_per_video);
  for (std::size_t v : cluster.videos) {
    if (v >= corpus.size()) throw InputError("assemble_batch: video index out of range");
    const double duration = corpus.video(v).duration_s;
    for (std::size_t p = 0; p < config.pairs_per_video; ++p) {
      auto text = sample_text_span(corpus, v, config, rng);
      if (!text) break;
      VideoSpan video = config.overlap_mode == OverlapMode::exact_aligned
                            ? VideoSpan{v, text->start_s, text->end_s}
                            : sample_video_span(*text, duration, config, rng);
      batch.push_back({video, std::move(*text)});
    }
  }
  return batch;
}

}  // namespace vclip
