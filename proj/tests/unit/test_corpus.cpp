#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "scratch_dir.hpp"
#include "vclip/corpus.hpp"
#include "vclip/errors.hpp"

using namespace vclip;
using vclip::testing::ScratchDir;

namespace {

CorpusConfig small_config(std::uint64_t seed = 7) {
  CorpusConfig c;
  c.n_videos = 12;
  c.n_topics = 4;
  c.d_feat = 8;
  c.vocab_size = 64;
  c.tokens_per_topic = 16;
  c.mean_duration_s = 30.0;
  c.seed = seed;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

}  // namespace

TEST(CorpusConfig, RejectsMoreTopicsThanVocabularyPartitions) {
  auto c = small_config();
  c.n_topics = 5;  // 5 x 16 > 64
  c.topics_per_video = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(generate_corpus(c), ConfigError);
}

TEST(CorpusConfig, RejectsNegativeLagAndNoise) {
  auto c = small_config();
  c.speech_lag_s = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.feature_noise = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(CorpusConfig, JsonRoundTrip) {
  auto c = small_config(99);
  c.speech_lag_s = 2.5;
  const CorpusConfig back = nlohmann::json(c).get<CorpusConfig>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
}

TEST(Generate, DegenerateSingleTopicCorpus) {
  auto c = small_config();
  c.n_topics = 1;
  c.topics_per_video = 1;
  c.feature_noise = 0.0;
  c.speech_lag_s = 0.0;
  const auto g = generate_corpus(c);
  const auto first = g.corpus.video(0).features.row(0);
  for (const auto& v : g.corpus.videos()) {
    for (std::size_t t = 0; t < v.token_count(); ++t) {
      const auto row = v.features.row(t);
      ASSERT_TRUE(std::equal(row.begin(), row.end(), first.begin()));
    }
  }
  for (std::size_t i = 0; i < g.corpus.size(); ++i) {
    for (const auto& u : g.corpus.utterances(i)) {
      for (int tok : u.tokens) {
        EXPECT_GE(tok, 0);
        EXPECT_LT(tok, static_cast<int>(c.tokens_per_topic));
      }
    }
  }
}

TEST(Generate, FeaturesMatchPrototypesWhenNoiseless) {
  auto c = small_config();
  c.feature_noise = 0.0;
  const auto g = generate_corpus(c);
  std::map<int, std::vector<float>> seen;
  for (std::size_t i = 0; i < g.corpus.size(); ++i) {
    const auto& track = g.truth.videos[i].topic_track;
    const auto& f = g.corpus.video(i).features;
    ASSERT_EQ(track.size(), f.rows());
    for (std::size_t t = 0; t < track.size(); ++t) {
      std::vector<float> row(f.row(t).begin(), f.row(t).end());
      auto [it, fresh] = seen.emplace(track[t], row);
      if (!fresh) {
        ASSERT_EQ(it->second, row) << "topic " << track[t];
      }
    }
  }
  EXPECT_GT(seen.size(), 1u);
}

TEST(Generate, SpeechPrecedesItsVideoSegmentByTheLag) {
  auto c = small_config();
  c.speech_lag_s = 4.0;
  const auto g = generate_corpus(c);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < g.corpus.size(); ++i) {
    const auto& truth = g.truth.videos[i];
    const auto& utts = g.corpus.utterances(i);
    ASSERT_EQ(truth.utterance_topics.size(), utts.size());
    for (std::size_t k = 0; k < utts.size(); ++k) {
      const int topic = truth.utterance_topics[k];
      const auto lo = static_cast<std::size_t>(std::floor(utts[k].start_s + 4.0));
      const auto hi = static_cast<std::size_t>(std::ceil(utts[k].end_s + 4.0));
      ASSERT_LE(hi, truth.topic_track.size());
      for (std::size_t s = lo; s < hi; ++s) {
        ASSERT_EQ(truth.topic_track[s], topic) << truth.video_id << " second " << s;
      }
      const auto [first, count] = g.truth.topic_vocabulary(topic);
      for (int tok : utts[k].tokens) {
        EXPECT_GE(tok, first);
        EXPECT_LT(tok, first + count);
      }
      ++checked;
    }
  }
  EXPECT_GT(checked, 50u);
}

TEST(Generate, StructuralInvariants) {
  const auto g = generate_corpus(small_config(3));
  ASSERT_EQ(g.corpus.size(), 12u);
  for (std::size_t i = 0; i < g.corpus.size(); ++i) {
    const auto& v = g.corpus.video(i);
    EXPECT_EQ(v.token_count(), static_cast<std::size_t>(std::floor(v.duration_s)));
    EXPECT_GE(v.token_count(), 1u);
    EXPECT_EQ(v.features.cols(), 8u);
    double last_end = 0.0;
    for (const auto& u : g.corpus.utterances(i)) {
      EXPECT_LT(u.start_s, u.end_s);
      EXPECT_LE(u.end_s, v.duration_s);
      EXPECT_GE(u.start_s, last_end);
      last_end = u.end_s;
    }
  }
}

TEST(Generate, UtteranceRateWithinTwentyPercent) {
  CorpusConfig c;  // reference corpus
  const auto g = generate_corpus(c);
  double seconds = 0.0;
  for (const auto& v : g.corpus.videos()) seconds += v.duration_s;
  const double rate = static_cast<double>(g.corpus.total_tokens()) / seconds;
  EXPECT_NEAR(rate, c.token_rate, 0.2 * c.token_rate) << "rate " << rate;
}

TEST(Generate, SameSeedGivesByteIdenticalFiles) {
  ScratchDir a("corpus-a"), b("corpus-b");
  const auto c = small_config(11);
  save_corpus(generate_corpus(c).corpus, a.path());
  save_corpus(generate_corpus(c).corpus, b.path());
  for (const char* f : {"manifest.json", "features.bin", "transcript.jsonl"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_EQ(corpus_hash(a.path()), corpus_hash(b.path()));
}

TEST(Generate, DifferentSeedsDiffer) {
  EXPECT_FALSE(generate_corpus(small_config(1)).corpus == generate_corpus(small_config(2)).corpus);
}

TEST(CorpusIo, RoundTripOverRandomConfigs) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    CorpusConfig c;
    c.n_videos = 1 + rng() % 10;
    c.n_topics = 1 + rng() % 6;
    c.topics_per_video = 1 + rng() % c.n_topics;
    c.tokens_per_topic = 1 + rng() % 20;
    c.vocab_size = c.n_topics * c.tokens_per_topic + rng() % 10;
    c.d_feat = 1 + rng() % 16;
    c.mean_duration_s = 2.0 + static_cast<double>(rng() % 80);
    c.speech_lag_s = static_cast<double>(rng() % 6);
    c.feature_noise = static_cast<double>(rng() % 100) / 100.0;
    c.seed = rng();
    const auto g = generate_corpus(c);
    ScratchDir dir("corpus-rt");
    save_corpus(g.corpus, dir.path());
    save_annotations(g.truth, dir.path());
    const Corpus back = load_corpus(dir.path());
    ASSERT_TRUE(back == g.corpus) << "trial " << trial;
    for (std::size_t i = 0; i < back.size(); ++i) {
      ASSERT_EQ(std::memcmp(back.video(i).features.data(), g.corpus.video(i).features.data(),
                            back.video(i).features.numel() * sizeof(float)),
                0);
    }
    EXPECT_EQ(load_annotations(dir.path()), g.truth);

    ScratchDir again("corpus-rt2");
    save_corpus(back, again.path());
    EXPECT_EQ(slurp(dir / "features.bin"), slurp(again / "features.bin"));
    EXPECT_EQ(slurp(dir / "transcript.jsonl"), slurp(again / "transcript.jsonl"));
  }
}

TEST(CorpusIo, FeaturesFileLayoutIsLittleEndianRowMajor) {
  const auto g = generate_corpus(small_config());
  ScratchDir dir("corpus-layout");
  save_corpus(g.corpus, dir.path());
  const std::string bytes = slurp(dir / "features.bin");
  ASSERT_GE(bytes.size(), 8u + sizeof(float));
  // Second video's first row starts right after the first video's T x D floats.
  const auto& v0 = g.corpus.video(0);
  const std::size_t off = 8 + v0.features.numel() * sizeof(float);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + off;
  const std::uint32_t bits = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                             std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
  float value;
  std::memcpy(&value, &bits, 4);
  EXPECT_EQ(value, g.corpus.video(1).features.at(0, 0));
}

class CorpusCorruption : public ::testing::Test {
 protected:
  void SetUp() override { save_corpus(generate_corpus(small_config()).corpus, dir.path()); }
  ScratchDir dir{"corpus-bad"};
};

TEST_F(CorpusCorruption, BadMagicByte) {
  std::string bytes = slurp(dir / "features.bin");
  bytes[2] ^= 0x20;
  spit(dir / "features.bin", bytes);
  try {
    load_corpus(dir.path());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 2u);
  }
}

TEST_F(CorpusCorruption, UnsupportedFeatureVersion) {
  std::string bytes = slurp(dir / "features.bin");
  bytes[4] = 9;
  spit(dir / "features.bin", bytes);
  try {
    load_corpus(dir.path());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
}

TEST_F(CorpusCorruption, TruncatedFeatures) {
  std::string bytes = slurp(dir / "features.bin");
  bytes.resize(bytes.size() - 3);
  spit(dir / "features.bin", bytes);
  try {
    load_corpus(dir.path());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), bytes.size());
  }
}

TEST_F(CorpusCorruption, TrailingFeatureBytes) {
  std::string bytes = slurp(dir / "features.bin");
  const std::size_t good = bytes.size();
  bytes.append(4, '\0');
  spit(dir / "features.bin", bytes);
  try {
    load_corpus(dir.path());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), good);
  }
}

TEST_F(CorpusCorruption, ManifestTokenCountDisagreesWithFeatures) {
  auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  manifest["videos"][0]["tokens"] = manifest["videos"][0]["tokens"].get<int>() + 1;
  spit(dir / "manifest.json", manifest.dump());
  EXPECT_THROW(load_corpus(dir.path()), FormatError);
}

TEST_F(CorpusCorruption, ManifestDurationDisagreesWithFeatureLength) {
  auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  const double d = manifest["videos"][0]["duration_s"].get<double>();
  manifest["videos"][0]["duration_s"] = d + 1.0;
  manifest["videos"][0]["tokens"] = manifest["videos"][0]["tokens"].get<int>() + 1;
  spit(dir / "manifest.json", manifest.dump());
  // Video 0 now claims one row more, so every later row shifts and the file
  // ends one row short.
  EXPECT_THROW(load_corpus(dir.path()), FormatError);
}

TEST_F(CorpusCorruption, ManifestVersionMismatch) {
  auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  manifest["version"] = 99;
  spit(dir / "manifest.json", manifest.dump());
  EXPECT_THROW(load_corpus(dir.path()), FormatError);
}

TEST_F(CorpusCorruption, MalformedTranscriptLine) {
  std::string text = slurp(dir / "transcript.jsonl");
  const auto second_line = text.find('\n') + 1;
  text.insert(second_line, "{not json\n");
  spit(dir / "transcript.jsonl", text);
  try {
    load_corpus(dir.path());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_GE(e.offset(), second_line);
  }
}

TEST_F(CorpusCorruption, OutOfVocabularyToken) {
  std::string text = slurp(dir / "transcript.jsonl");
  auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
  first["tokens"][0] = 10'000;
  text = first.dump() + text.substr(text.find('\n'));
  spit(dir / "transcript.jsonl", text);
  EXPECT_THROW(load_corpus(dir.path()), FormatError);
}

TEST(Corpus, AddVideoValidatesInput) {
  Corpus c(2, 10);
  VideoRecord v{"a", 3.5, Tensor<float>::matrix(3, 2)};
  Utterance ok{"a", 0.5, 1.5, {1, 2}};
  Utterance overlap{"a", 1.0, 2.0, {3}};
  EXPECT_THROW(c.add_video(v, {ok, overlap}), InputError);
  Utterance oov{"a", 0.5, 1.5, {10}};
  EXPECT_THROW(c.add_video(v, {oov}), InputError);
  VideoRecord wrong_t{"b", 5.0, Tensor<float>::matrix(3, 2)};
  EXPECT_THROW(c.add_video(wrong_t, {}), ShapeError);
  c.add_video(v, {ok});
  EXPECT_THROW(c.add_video(v, {}), InputError);  // duplicate id
  EXPECT_EQ(c.size(), 1u);
  EXPECT_EQ(c.index_of("a"), 0u);
  EXPECT_FALSE(c.index_of("zz").has_value());
}
