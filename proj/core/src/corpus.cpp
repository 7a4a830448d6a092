#include "vclip/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "vclip/errors.hpp"
#include "vclip/rng.hpp"

namespace vclip {

void CorpusConfig::validate() const {
  if (n_videos == 0) throw ConfigError("corpus: n_videos must be >= 1");
  if (n_topics == 0) throw ConfigError("corpus: n_topics must be >= 1");
  if (d_feat == 0) throw ConfigError("corpus: d_feat must be >= 1");
  if (tokens_per_topic == 0) throw ConfigError("corpus: tokens_per_topic must be >= 1");
  if (n_topics * tokens_per_topic > vocab_size) {
    throw ConfigError("corpus: " + std::to_string(n_topics) + " topics x " +
                      std::to_string(tokens_per_topic) + " tokens exceed vocab size " +
                      std::to_string(vocab_size));
  }
  if (topics_per_video == 0 || topics_per_video > n_topics) {
    throw ConfigError("corpus: topics_per_video must lie in [1, n_topics]");
  }
  if (!(mean_duration_s >= 1.0)) throw ConfigError("corpus: mean_duration_s must be >= 1");
  if (!(duration_spread >= 0.0 && duration_spread < 1.0)) {
    throw ConfigError("corpus: duration_spread must lie in [0, 1)");
  }
  if (segment_min_s == 0 || segment_min_s > segment_max_s) {
    throw ConfigError("corpus: need 1 <= segment_min_s <= segment_max_s");
  }
  if (!(token_rate > 0.0)) throw ConfigError("corpus: token_rate must be > 0");
  if (!(utterance_min_s > 0.0 && utterance_min_s <= utterance_max_s)) {
    throw ConfigError("corpus: need 0 < utterance_min_s <= utterance_max_s");
  }
  if (!(utterance_gap_max_s >= 0.0)) throw ConfigError("corpus: utterance_gap_max_s must be >= 0");
  if (!(speech_lag_s >= 0.0)) throw ConfigError("corpus: speech_lag_s must be >= 0");
  if (!(feature_noise >= 0.0)) throw ConfigError("corpus: feature_noise must be >= 0");
}

void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = nlohmann::json{{"n_videos", c.n_videos},
                     {"n_topics", c.n_topics},
                     {"d_feat", c.d_feat},
                     {"vocab_size", c.vocab_size},
                     {"tokens_per_topic", c.tokens_per_topic},
                     {"mean_duration_s", c.mean_duration_s},
                     {"duration_spread", c.duration_spread},
                     {"topics_per_video", c.topics_per_video},
                     {"segment_min_s", c.segment_min_s},
                     {"segment_max_s", c.segment_max_s},
                     {"token_rate", c.token_rate},
                     {"utterance_min_s", c.utterance_min_s},
                     {"utterance_max_s", c.utterance_max_s},
                     {"utterance_gap_max_s", c.utterance_gap_max_s},
                     {"speech_lag_s", c.speech_lag_s},
                     {"feature_noise", c.feature_noise},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CorpusConfig& c) {
  const CorpusConfig d;
  c.n_videos = j.value("n_videos", d.n_videos);
  c.n_topics = j.value("n_topics", d.n_topics);
  c.d_feat = j.value("d_feat", d.d_feat);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.tokens_per_topic = j.value("tokens_per_topic", d.tokens_per_topic);
  c.mean_duration_s = j.value("mean_duration_s", d.mean_duration_s);
  c.duration_spread = j.value("duration_spread", d.duration_spread);
  c.topics_per_video = j.value("topics_per_video", d.topics_per_video);
  c.segment_min_s = j.value("segment_min_s", d.segment_min_s);
  c.segment_max_s = j.value("segment_max_s", d.segment_max_s);
  c.token_rate = j.value("token_rate", d.token_rate);
  c.utterance_min_s = j.value("utterance_min_s", d.utterance_min_s);
  c.utterance_max_s = j.value("utterance_max_s", d.utterance_max_s);
  c.utterance_gap_max_s = j.value("utterance_gap_max_s", d.utterance_gap_max_s);
  c.speech_lag_s = j.value("speech_lag_s", d.speech_lag_s);
  c.feature_noise = j.value("feature_noise", d.feature_noise);
  c.seed = j.value("seed", d.seed);
}

Corpus::Corpus(std::size_t d_feat, std::size_t vocab_size, nlohmann::json config_echo)
    : d_feat_(d_feat), vocab_size_(vocab_size), config_echo_(std::move(config_echo)) {
  if (d_feat == 0 || vocab_size == 0) throw ConfigError("corpus: d_feat and vocab must be >= 1");
}

void Corpus::add_video(VideoRecord video, std::vector<Utterance> utterances) {
  const auto& id = video.video_id;
  if (index_of(id)) throw InputError("duplicate video id " + id);
  if (!(video.duration_s >= 1.0)) throw InputError(id + ": duration must be >= 1 s");
  const auto expected_t = static_cast<std::size_t>(std::floor(video.duration_s));
  if (video.features.rank() != 2 || video.features.rows() != expected_t ||
      video.features.cols() != d_feat_) {
    throw ShapeError(id + ": features " + shape_string(video.features.dims()) + ", expected [" +
                     std::to_string(expected_t) + "," + std::to_string(d_feat_) + "]");
  }
  double last_end = 0.0;
  for (const auto& u : utterances) {
    if (u.video_id != id) throw InputError(id + ": utterance tagged " + u.video_id);
    if (!(u.start_s >= 0.0 && u.start_s < u.end_s && u.end_s <= video.duration_s)) {
      throw InputError(id + ": utterance times out of range");
    }
    if (u.start_s < last_end) throw InputError(id + ": utterances overlap or are unsorted");
    last_end = u.end_s;
    for (int t : u.tokens) {
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size_) {
        throw InputError(id + ": token " + std::to_string(t) + " outside vocabulary");
      }
    }
  }
  videos_.push_back(std::move(video));
  transcripts_.push_back(std::move(utterances));
}

std::optional<std::size_t> Corpus::index_of(std::string_view video_id) const {
  for (std::size_t i = 0; i < videos_.size(); ++i) {
    if (videos_[i].video_id == video_id) return i;
  }
  return std::nullopt;
}

std::size_t Corpus::total_tokens() const {
  std::size_t n = 0;
  for (const auto& tr : transcripts_)
    for (const auto& u : tr) n += u.tokens.size();
  return n;
}

bool operator==(const Corpus& a, const Corpus& b) {
  if (a.d_feat_ != b.d_feat_ || a.vocab_size_ != b.vocab_size_ || a.size() != b.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& va = a.videos_[i];
    const auto& vb = b.videos_[i];
    if (va.video_id != vb.video_id || va.duration_s != vb.duration_s ||
        !(va.features == vb.features)) {
      return false;
    }
    if (a.transcripts_[i] != b.transcripts_[i]) return false;
  }
  return true;
}

std::pair<int, int> TopicAnnotations::topic_vocabulary(int topic) const {
  return {topic * static_cast<int>(tokens_per_topic), static_cast<int>(tokens_per_topic)};
}

namespace {

std::string make_video_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "v%05zu", i);
  return buf;
}

struct Segment {
  std::size_t begin;
  std::size_t end;
  int topic;
};

}  // namespace

GeneratedCorpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  GeneratedCorpus out{Corpus(config.d_feat, config.vocab_size, nlohmann::json(config)), {}};
  out.truth.n_topics = config.n_topics;
  out.truth.tokens_per_topic = config.tokens_per_topic;
  out.truth.speech_lag_s = config.speech_lag_s;

  Rng proto_rng(derive_seed(config.seed, {stream_id("prototypes")}));
  std::vector<Tensor<float>> prototypes;
  for (std::size_t k = 0; k < config.n_topics; ++k) {
    Tensor<float> p(Shape{config.d_feat});
    for (auto& v : p.values()) v = static_cast<float>(proto_rng.normal());
    prototypes.push_back(std::move(p));
  }

  const double mean_len = 0.5 * (config.utterance_min_s + config.utterance_max_s);
  const double mean_gap = 0.5 * config.utterance_gap_max_s;
  // Token rate while speaking, so that the long-run rate matches token_rate.
  const double speaking_rate = config.token_rate * (mean_len + mean_gap) / mean_len;
  const auto lo_dur = std::max<std::int64_t>(
      1, std::llround(config.mean_duration_s * (1.0 - config.duration_spread)));
  const auto hi_dur = std::max<std::int64_t>(
      lo_dur, std::llround(config.mean_duration_s * (1.0 + config.duration_spread)));

  for (std::size_t v = 0; v < config.n_videos; ++v) {
    Rng rng(derive_seed(config.seed, {stream_id("video"), v}));
    VideoTruth truth;
    truth.video_id = make_video_id(v);
    const auto duration = static_cast<std::size_t>(rng.uniform_int(lo_dur, hi_dur));

    for (auto t : rng.sample_without_replacement(config.n_topics, config.topics_per_video)) {
      truth.steps.push_back(static_cast<int>(t));
    }
    std::vector<Segment> segments;
    for (std::size_t t = 0, j = 0; t < duration; ++j) {
      const auto len = static_cast<std::size_t>(rng.uniform_int(
          static_cast<std::int64_t>(config.segment_min_s),
          static_cast<std::int64_t>(config.segment_max_s)));
      const std::size_t end = std::min(duration, t + len);
      segments.push_back({t, end, truth.steps[j % truth.steps.size()]});
      t = end;
    }
    truth.steps.resize(std::min(truth.steps.size(), segments.size()));
    truth.topic_track.resize(duration);
    for (const auto& s : segments)
      for (std::size_t t = s.begin; t < s.end; ++t) truth.topic_track[t] = s.topic;

    VideoRecord record;
    record.video_id = truth.video_id;
    record.duration_s = static_cast<double>(duration);
    record.features = Tensor<float>::matrix(duration, config.d_feat);
    for (std::size_t t = 0; t < duration; ++t) {
      const auto& proto = prototypes[static_cast<std::size_t>(truth.topic_track[t])];
      for (std::size_t c = 0; c < config.d_feat; ++c) {
        record.features.at(t, c) =
            proto[c] + static_cast<float>(config.feature_noise * rng.normal());
      }
    }

    // Speech about a segment [a, b) happens during [a - lag, b - lag).
    std::vector<Utterance> utterances;
    for (const auto& s : segments) {
      const double window_begin = std::max(0.0, static_cast<double>(s.begin) - config.speech_lag_s);
      const double window_end = static_cast<double>(s.end) - config.speech_lag_s;
      double t = window_begin + rng.uniform(0.0, config.utterance_gap_max_s);
      while (window_end - t >= config.utterance_min_s) {
        const double end =
            std::min(window_end, t + rng.uniform(config.utterance_min_s, config.utterance_max_s));
        const auto n_tokens = std::max<std::int64_t>(1, rng.poisson(speaking_rate * (end - t)));
        const int first = s.topic * static_cast<int>(config.tokens_per_topic);
        Utterance u;
        u.video_id = record.video_id;
        u.start_s = t;
        u.end_s = end;
        for (std::int64_t i = 0; i < n_tokens; ++i) {
          u.tokens.push_back(first + static_cast<int>(rng.uniform_int(
                                         0, static_cast<std::int64_t>(config.tokens_per_topic) - 1)));
        }
        utterances.push_back(std::move(u));
        truth.utterance_topics.push_back(s.topic);
        t = end + rng.uniform(0.0, config.utterance_gap_max_s);
      }
    }
    out.corpus.add_video(std::move(record), std::move(utterances));
    out.truth.videos.push_back(std::move(truth));
  }
  return out;
}

}  // namespace vclip
