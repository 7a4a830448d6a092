#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "vclip/corpus.hpp"
#include "vclip/errors.hpp"
#include "vclip/sampler.hpp"

using namespace vclip;

namespace {

Utterance utt(const std::string& id, double start, double end, std::size_t n_tokens, int first = 0) {
  Utterance u{id, start, end, {}};
  for (std::size_t i = 0; i < n_tokens; ++i) u.tokens.push_back(first + static_cast<int>(i % 50));
  return u;
}

// One video per entry of `transcripts`, each `duration` seconds long.
Corpus hand_corpus(double duration, std::vector<std::vector<Utterance>> transcripts) {
  Corpus c(2, 64);
  for (std::size_t i = 0; i < transcripts.size(); ++i) {
    const std::string id = "h" + std::to_string(i);
    for (auto& u : transcripts[i]) u.video_id = id;
    c.add_video({id, duration, Tensor<float>::matrix(static_cast<std::size_t>(duration), 2)},
                std::move(transcripts[i]));
  }
  return c;
}

Corpus reference_corpus() {
  CorpusConfig c;
  c.n_videos = 60;
  return generate_corpus(c).corpus;
}

}  // namespace

TEST(SamplerConfig, ValidatesRanges) {
  SamplerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.min_video_s = 40.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.min_text_tokens = 70;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.pairs_per_video = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SamplerConfig, JsonRoundTripAndModeNames) {
  SamplerConfig c;
  c.pairs_per_video = 5;
  c.overlap_mode = OverlapMode::exact_aligned;
  const auto back = nlohmann::json(c).get<SamplerConfig>();
  EXPECT_EQ(back.pairs_per_video, 5u);
  EXPECT_EQ(back.overlap_mode, OverlapMode::exact_aligned);
  EXPECT_EQ(parse_overlap_mode("overlapped"), OverlapMode::overlapped);
  EXPECT_EQ(to_string(OverlapMode::exact_aligned), "exact_aligned");
  EXPECT_THROW(parse_overlap_mode("sideways"), ConfigError);
}

TEST(SampleTextSpan, SingleUtteranceIsTakenExactly) {
  const Corpus c = hand_corpus(20.0, {{utt("", 5.0, 9.0, 10)}});
  SamplerConfig cfg;
  cfg.min_text_tokens = 10;
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto span = sample_text_span(c, 0, cfg, rng);
    ASSERT_TRUE(span.has_value());
    EXPECT_EQ(span->start_s, 5.0);
    EXPECT_EQ(span->end_s, 9.0);
    EXPECT_EQ(span->tokens, c.utterances(0)[0].tokens);
  }
}

TEST(SampleTextSpan, NeverSplitsAnUtteranceBelowTheLimit) {
  const Corpus c = hand_corpus(
      40.0, {{utt("", 1.0, 5.0, 12), utt("", 6.0, 10.0, 12, 12), utt("", 11.0, 15.0, 12, 24)}});
  SamplerConfig cfg;
  cfg.min_text_tokens = 8;
  cfg.max_text_tokens = 8;
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto span = sample_text_span(c, 0, cfg, rng);
    ASSERT_TRUE(span.has_value());
    // Target 8 is below the first utterance's 12 tokens, but the limit of 8 is
    // as well; a single over-long utterance is the only case that gets cut.
    EXPECT_EQ(span->tokens.size(), 8u);
  }
  cfg.max_text_tokens = 20;
  for (int i = 0; i < 50; ++i) {
    const auto span = sample_text_span(c, 0, cfg, rng);
    ASSERT_TRUE(span.has_value());
    EXPECT_EQ(span->tokens.size(), 12u);
    const bool matches_one = std::any_of(c.utterances(0).begin(), c.utterances(0).end(),
                                         [&](const Utterance& u) {
                                           return u.start_s == span->start_s && u.end_s == span->end_s &&
                                                  u.tokens == span->tokens;
                                         });
    EXPECT_TRUE(matches_one);
  }
}

TEST(SampleTextSpan, GrowsByWholeUtterancesToTarget) {
  std::vector<Utterance> utts;
  for (int i = 0; i < 20; ++i) utts.push_back(utt("", 2.0 * i, 2.0 * i + 1.5, 5, i));
  const Corpus c = hand_corpus(60.0, {utts});
  SamplerConfig cfg;  // 8..61
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto span = sample_text_span(c, 0, cfg, rng);
    ASSERT_TRUE(span.has_value());
    EXPECT_GE(span->tokens.size(), 8u);
    EXPECT_LE(span->tokens.size(), 61u);
    EXPECT_EQ(span->tokens.size() % 5, 0u);
    // Hull of covered utterances: starts and ends line up with utterance bounds.
    EXPECT_EQ(std::fmod(span->start_s, 2.0), 0.0);
    EXPECT_EQ(std::fmod(span->end_s - 1.5, 2.0), 0.0);
    EXPECT_EQ((span->end_s + 0.5 - span->start_s) / 2.0, span->tokens.size() / 5.0);
  }
}

TEST(SampleTextSpan, ShortTranscriptIsExhausted) {
  const Corpus c = hand_corpus(20.0, {{utt("", 1.0, 2.0, 2), utt("", 3.0, 4.0, 3)}});
  SamplerConfig cfg;
  Rng rng(4);
  const auto span = sample_text_span(c, 0, cfg, rng);
  ASSERT_TRUE(span.has_value());
  EXPECT_EQ(span->tokens.size(), 5u);
  EXPECT_EQ(span->start_s, 1.0);
  EXPECT_EQ(span->end_s, 4.0);
}

TEST(SampleTextSpan, NoUtterancesSignalsSkip) {
  const Corpus c = hand_corpus(20.0, {{}});
  Rng rng(5);
  EXPECT_FALSE(sample_text_span(c, 0, SamplerConfig{}, rng).has_value());
}

TEST(SampleTextSpan, SameRngStateSameSpan) {
  const Corpus c = reference_corpus();
  Rng a(77), b(77);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(sample_text_span(c, i % c.size(), SamplerConfig{}, a),
              sample_text_span(c, i % c.size(), SamplerConfig{}, b));
  }
}

TEST(PlaceVideoSpan, CentersOnTheTimestamp) {
  const auto v = place_video_span(0, 12.0, 6.0, 600.0);
  EXPECT_EQ(v.start_s, 9.0);
  EXPECT_EQ(v.end_s, 15.0);
}

TEST(PlaceVideoSpan, ShiftsIntoTheVideoAtEitherEnd) {
  const auto head = place_video_span(0, 1.0, 10.0, 600.0);
  EXPECT_EQ(head.start_s, 0.0);
  EXPECT_EQ(head.end_s, 10.0);
  const auto tail = place_video_span(0, 598.0, 10.0, 600.0);
  EXPECT_EQ(tail.start_s, 590.0);
  EXPECT_EQ(tail.end_s, 600.0);
}

TEST(PlaceVideoSpan, TruncatesOnlyWhenTheVideoIsShorter) {
  const auto v = place_video_span(3, 2.0, 30.0, 12.5);
  EXPECT_EQ(v.video, 3u);
  EXPECT_EQ(v.start_s, 0.0);
  EXPECT_EQ(v.end_s, 12.5);
}

TEST(AssembleBatch, SizeIsClusterTimesPairs) {
  const Corpus c = reference_corpus();
  SamplerConfig cfg;
  cfg.pairs_per_video = 4;
  VideoCluster cluster{{0, 1, 2, 3, 4, 5, 6, 7}, 0};
  Rng rng(6);
  const auto batch = assemble_batch(cluster, c, cfg, rng);
  EXPECT_EQ(batch.size(), 32u);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    EXPECT_EQ(batch[i].video.video, cluster.videos[i / 4]);
    EXPECT_EQ(batch[i].text.video, cluster.videos[i / 4]);
  }
}

TEST(AssembleBatch, FullScaleBatchOf512) {
  CorpusConfig cc;
  cc.n_videos = 32;
  const Corpus c = generate_corpus(cc).corpus;
  VideoCluster cluster;
  cluster.videos.resize(32);
  std::iota(cluster.videos.begin(), cluster.videos.end(), 0);
  Rng rng(7);
  EXPECT_EQ(assemble_batch(cluster, c, SamplerConfig{}, rng).size(), 512u);
}

TEST(AssembleBatch, ExactAlignedCopiesTextTimestamps) {
  const Corpus c = reference_corpus();
  SamplerConfig cfg;
  cfg.overlap_mode = OverlapMode::exact_aligned;
  Rng rng(8);
  const auto batch = assemble_batch(VideoCluster{{10, 11, 12}, 10}, c, cfg, rng);
  ASSERT_EQ(batch.size(), 48u);
  for (const auto& p : batch) {
    EXPECT_EQ(p.video.start_s, p.text.start_s);
    EXPECT_EQ(p.video.end_s, p.text.end_s);
  }
}

TEST(AssembleBatch, EmptyClusterIsAnError) {
  const Corpus c = reference_corpus();
  Rng rng(9);
  EXPECT_THROW(assemble_batch(VideoCluster{}, c, SamplerConfig{}, rng), InputError);
  EXPECT_THROW(assemble_batch(VideoCluster{{1000}, 1000}, c, SamplerConfig{}, rng), InputError);
}

TEST(AssembleBatch, SilentVideosContributeNothing) {
  const Corpus c = hand_corpus(20.0, {{}, {utt("", 2.0, 6.0, 9)}});
  SamplerConfig cfg;
  cfg.pairs_per_video = 3;
  Rng rng(10);
  const auto batch = assemble_batch(VideoCluster{{0, 1}, 0}, c, cfg, rng);
  ASSERT_EQ(batch.size(), 3u);
  for (const auto& p : batch) EXPECT_EQ(p.text.video, 1u);
}

TEST(SamplerProperties, EveryPairOverlapsOverAHundredThousandSamples) {
  const Corpus c = reference_corpus();
  SamplerConfig cfg;
  cfg.pairs_per_video = 50;
  Rng rng(11);
  std::size_t total = 0, truncated = 0;
  while (total < 100'000) {
    VideoCluster cluster;
    for (std::size_t v = 0; v < c.size(); ++v) cluster.videos.push_back(v);
    for (const auto& p : assemble_batch(cluster, c, cfg, rng)) {
      ASSERT_TRUE(spans_overlap(p.video, p.text));
      ASSERT_LT(std::max(p.video.start_s, p.text.start_s), std::min(p.video.end_s, p.text.end_s));
      const double dur = c.video(p.video.video).duration_s;
      ASSERT_GE(p.video.start_s, 0.0);
      ASSERT_LE(p.video.end_s, dur);
      ASSERT_LE(p.video.length(), cfg.max_video_s + 1e-9);
      if (p.video.length() < cfg.min_video_s - 1e-9) {
        ASSERT_EQ(p.video.length(), dur);
        ++truncated;
      }
      ASSERT_GE(p.text.tokens.size(), 1u);
      ASSERT_LE(p.text.tokens.size(), cfg.max_text_tokens);
      ++total;
    }
  }
  EXPECT_EQ(truncated, 0u);  // reference videos are all longer than 3 s
}

TEST(SamplerProperties, DurationsAreUniform) {
  // Chi-square goodness of fit with 10 equal bins; 21.666 is the 0.99
  // quantile of chi-square with 9 degrees of freedom.
  SamplerConfig cfg;
  TextSpan text{0, 290.0, 300.0, {1, 2, 3}};
  Rng rng(12);
  constexpr int kBins = 10;
  constexpr int kSamples = 20'000;
  std::array<int, kBins> counts{};
  for (int i = 0; i < kSamples; ++i) {
    const auto v = sample_video_span(text, 600.0, cfg, rng);
    const double u = (v.length() - cfg.min_video_s) / (cfg.max_video_s - cfg.min_video_s);
    ++counts[std::min(kBins - 1, static_cast<int>(u * kBins))];
  }
  const double expected = static_cast<double>(kSamples) / kBins;
  double chi2 = 0.0;
  for (int n : counts) chi2 += (n - expected) * (n - expected) / expected;
  EXPECT_LT(chi2, 21.666);
}

TEST(SamplerProperties, CentersFallInsideTheTextSpan) {
  SamplerConfig cfg;
  cfg.min_video_s = cfg.max_video_s = 4.0;
  TextSpan text{0, 100.0, 110.0, {1}};
  Rng rng(13);
  for (int i = 0; i < 10'000; ++i) {
    const auto v = sample_video_span(text, 600.0, cfg, rng);
    const double center = 0.5 * (v.start_s + v.end_s);
    ASSERT_GE(center, 100.0);
    ASSERT_LE(center, 110.0);
  }
}
