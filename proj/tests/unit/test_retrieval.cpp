#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "scratch_dir.hpp"
#include "vclip/errors.hpp"
#include "vclip/retrieval.hpp"

using namespace vclip;
using vclip::testing::ScratchDir;

namespace {

Tensor<float> random_vectors(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  Tensor<float> t = Tensor<float>::matrix(n, d);
  for (float& v : t.values()) v = dist(rng);
  return t;
}

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i));
  return ids;
}

// Full scan, scores in long double, stable sort on (score desc, row asc).
std::vector<std::size_t> brute_force(const Tensor<float>& x, std::span<const float> q, std::size_t m) {
  std::vector<std::pair<long double, std::size_t>> scored;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    long double s = 0.0L;
    for (std::size_t c = 0; c < x.cols(); ++c) s += (long double)x.at(r, c) * (long double)q[c];
    scored.emplace_back(s, r);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m; ++i) out.push_back(scored[i].second);
  return out;
}

DenseIndex random_index(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return DenseIndex(random_vectors(n, d, rng), make_ids(n));
}

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(RetrievalConfig, Validation) {
  RetrievalConfig c;
  EXPECT_NO_THROW(c.validate(200));
  c.k = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.k = 300;
  EXPECT_THROW(c.validate(200), ConfigError);
  c = {};
  c.first_window_s = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_retrieval_mode("direct_k"), RetrievalMode::direct_k);
  EXPECT_EQ(to_string(FeatureMode::first_window), "first_window");
  EXPECT_THROW(parse_feature_mode("last_window"), ConfigError);
  RetrievalConfig j;
  j.mode = RetrievalMode::random;
  j.k = 5;
  const auto back = nlohmann::json(j).get<RetrievalConfig>();
  EXPECT_EQ(back.mode, RetrievalMode::random);
  EXPECT_EQ(back.k, 5u);
}

TEST(CombinePairEmbeddings, SinglePairOfEqualEmbeddings) {
  const Tensor<float> u(Shape{1, 3}, {1.0f, -2.0f, 0.5f});
  EXPECT_EQ(combine_pair_embeddings(u, u), Tensor<float>(Shape{3}, {1.0f, -2.0f, 0.5f}));
}

TEST(CombinePairEmbeddings, TwoPairsAverageAllFour) {
  const Tensor<float> v(Shape{2, 2}, {1, 2, 3, 4});
  const Tensor<float> t(Shape{2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(combine_pair_embeddings(v, t), Tensor<float>(Shape{2}, {4.0f, 5.0f}));
  EXPECT_THROW(combine_pair_embeddings(v, Tensor<float>(Shape{1, 2})), ShapeError);
}

TEST(DenseIndex, RejectsBadContents) {
  EXPECT_THROW(DenseIndex(Tensor<float>::matrix(2, 2), {"a", "a"}), InputError);
  EXPECT_THROW(DenseIndex(Tensor<float>::matrix(2, 2), {"a"}), InputError);
  Tensor<float> bad = Tensor<float>::matrix(2, 2);
  bad[3] = std::nanf("");
  EXPECT_THROW(DenseIndex(bad, {"a", "b"}), InputError);
}

TEST(Knn, PlantedRowComesFirst) {
  Tensor<float> x = Tensor<float>::matrix(4, 4);
  for (std::size_t i = 0; i < 4; ++i) x.at(i, i) = 1.0f;
  const DenseIndex index(x, make_ids(4));
  const std::vector<float> q = {0.0f, 0.0f, 2.0f, 0.0f};
  EXPECT_EQ(knn(index, q, 1), std::vector<std::size_t>{2});
  // The other three score zero and tie: ascending row order.
  EXPECT_EQ(knn(index, q, 4), (std::vector<std::size_t>{2, 0, 1, 3}));
}

TEST(Knn, FullSizeIsAPermutation) {
  const auto index = random_index(50, 8, 1);
  std::vector<float> q(8, 0.3f);
  auto all = knn(index, q, 50);
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(50);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(all, expected);
}

TEST(Knn, TooManyNeighboursIsAnError) {
  const auto index = random_index(5, 3, 2);
  std::vector<float> q(3, 1.0f);
  EXPECT_THROW(knn(index, q, 6), InputError);
}

TEST(Knn, DuplicateVectorsTieByLowerRow) {
  std::mt19937_64 rng(3);
  auto x = random_vectors(30, 6, rng);
  for (std::size_t c = 0; c < 6; ++c) x.at(17, c) = x.at(4, c);
  const DenseIndex index(x, make_ids(30));
  const auto q = x.row(4);
  const auto top = knn(index, std::vector<float>(q.begin(), q.end()), 30);
  const auto p4 = std::find(top.begin(), top.end(), 4u) - top.begin();
  const auto p17 = std::find(top.begin(), top.end(), 17u) - top.begin();
  EXPECT_EQ(p17, p4 + 1);
}

TEST(Knn, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto x = random_vectors(1000, 32, rng);
    const auto queries = random_vectors(100, 32, rng);
    const DenseIndex index(x, make_ids(1000));
    const auto batch = knn_batch(index, queries, 20);
    ASSERT_EQ(batch.size(), 100u);
    for (std::size_t q = 0; q < 100; ++q) {
      const auto expected = brute_force(x, queries.row(q), 20);
      ASSERT_EQ(knn(index, queries.row(q), 20), expected) << "seed " << seed << " query " << q;
      ASSERT_EQ(batch[q], expected);
    }
  }
}

TEST(BuildClusters, CountSizeAndDistinctMembers) {
  const auto index = random_index(203, 8, 4);
  RetrievalConfig cfg;
  for (auto mode : {RetrievalMode::sample_2k, RetrievalMode::direct_k, RetrievalMode::random}) {
    cfg.mode = mode;
    Rng rng(5);
    const auto plan = build_clusters(index, cfg, rng);
    EXPECT_EQ(plan.clusters.size(), 26u);  // ceil(203 / 8)
    EXPECT_EQ(plan.effective_mode, mode);
    for (const auto& c : plan.clusters) {
      ASSERT_EQ(c.videos.size(), 8u);
      ASSERT_EQ(as_set(c.videos).size(), 8u);
      for (std::size_t v : c.videos) ASSERT_LT(v, 203u);
    }
  }
  cfg.clusters_per_epoch = 3;
  Rng rng(6);
  EXPECT_EQ(build_clusters(index, cfg, rng).clusters.size(), 3u);
}

TEST(BuildClusters, SampleTwoKDrawsFromTheSeedNeighbourhood) {
  const auto index = random_index(120, 8, 7);
  RetrievalConfig cfg;
  Rng rng(8);
  const auto plan = build_clusters(index, cfg, rng);
  std::set<std::size_t> seeds;
  for (const auto& c : plan.clusters) {
    const auto pool = as_set(knn(index, index.vectors().row(c.seed_video), 16));
    EXPECT_TRUE(pool.count(c.seed_video));  // the neighbourhood includes the seed
    for (std::size_t v : c.videos) EXPECT_TRUE(pool.count(v)) << v;
    seeds.insert(c.seed_video);
  }
  EXPECT_EQ(seeds.size(), plan.clusters.size());  // no seed repeats within an epoch
}

TEST(BuildClusters, DirectKIsTheTopK) {
  const auto index = random_index(64, 8, 9);
  RetrievalConfig cfg;
  cfg.mode = RetrievalMode::direct_k;
  Rng rng(10);
  for (const auto& c : build_clusters(index, cfg, rng).clusters) {
    EXPECT_EQ(c.videos, knn(index, index.vectors().row(c.seed_video), 8));
  }
}

TEST(BuildClusters, RandomModeIgnoresEmbeddings) {
  RetrievalConfig cfg;
  cfg.mode = RetrievalMode::random;
  Rng a(11), b(11);
  const auto pa = build_clusters(random_index(100, 8, 12), cfg, a);
  const auto pb = build_clusters(random_index(100, 8, 13), cfg, b);
  ASSERT_EQ(pa.clusters.size(), pb.clusters.size());
  for (std::size_t i = 0; i < pa.clusters.size(); ++i) {
    EXPECT_EQ(pa.clusters[i].videos, pb.clusters[i].videos);
  }
}

TEST(BuildClusters, KEqualToCorpusSizeGivesOneFullCluster) {
  const auto index = random_index(10, 4, 14);
  RetrievalConfig cfg;
  cfg.k = 10;
  cfg.mode = RetrievalMode::direct_k;
  Rng rng(15);
  const auto plan = build_clusters(index, cfg, rng);
  ASSERT_EQ(plan.clusters.size(), 1u);
  EXPECT_EQ(as_set(plan.clusters[0].videos).size(), 10u);
}

TEST(BuildClusters, SmallCorpusFallsBackToDirectK) {
  const auto index = random_index(12, 4, 16);
  RetrievalConfig cfg;  // k = 8, 2k = 16 > 12
  Rng rng(17);
  const auto plan = build_clusters(index, cfg, rng);
  EXPECT_EQ(plan.effective_mode, RetrievalMode::direct_k);
  for (const auto& c : plan.clusters) {
    EXPECT_EQ(c.videos, knn(index, index.vectors().row(c.seed_video), 8));
  }
}

TEST(BuildClusters, DumpWritesOneLinePerCluster) {
  const auto index = random_index(20, 4, 18);
  RetrievalConfig cfg;
  cfg.k = 4;
  Rng rng(19);
  const auto plan = build_clusters(index, cfg, rng);
  ScratchDir dir("clusters");
  append_clusters_jsonl(dir / "clusters.jsonl", 3, plan, index);
  std::ifstream in(dir / "clusters.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("epoch").get<int>(), 3);
    EXPECT_EQ(j.at("members").size(), 4u);
    EXPECT_EQ(j.at("seed_video").get<std::string>(), index.ids()[plan.clusters[lines].seed_video]);
    ++lines;
  }
  EXPECT_EQ(lines, plan.clusters.size());
}

namespace {

GeneratedCorpus feature_corpus() {
  CorpusConfig c;
  c.n_videos = 6;
  c.n_topics = 3;
  c.d_feat = 4;
  c.vocab_size = 30;
  c.tokens_per_topic = 10;
  c.mean_duration_s = 40.0;
  c.seed = 21;
  return generate_corpus(c);
}

EncoderParams<float> feature_params(const Corpus& corpus) {
  EncoderConfig e;
  e.d_model = 8;
  e.n_heads = 2;
  e.n_layers_video = 1;
  e.n_layers_text = 1;
  e.d_feat = corpus.d_feat();
  e.vocab_size = corpus.vocab_size();
  return EncoderParams<float>::init(e, 22);
}

}  // namespace

TEST(GlobalFeatures, AllClipsAveragesSampledPairs) {
  const auto g = feature_corpus();
  const auto params = feature_params(g.corpus);
  RetrievalConfig r;
  r.clips_per_video_for_feature = 3;
  SamplerConfig s;
  const auto z = global_features(g.corpus, params, r, s, 99);
  ASSERT_EQ(z.dims(), (Shape{6, 8}));
  EXPECT_TRUE(z.all_finite());
  EXPECT_EQ(z, global_features(g.corpus, params, r, s, 99));
  EXPECT_NE(z, global_features(g.corpus, params, r, s, 100));

  // Recompute video 2 by hand from the same stream.
  Rng rng(derive_seed(99, {stream_id("retrieval.features"), 2}));
  std::vector<VideoSpan> spans;
  std::vector<std::vector<int>> texts;
  for (int p = 0; p < 3; ++p) {
    auto t = sample_text_span(g.corpus, 2, s, rng);
    ASSERT_TRUE(t.has_value());
    spans.push_back(sample_video_span(*t, g.corpus.video(2).duration_s, s, rng));
    texts.push_back(t->tokens);
  }
  const auto zv = embed_videos<float>(spans, g.corpus, params);
  const auto zt = embed_texts<float>(std::span<const std::vector<int>>(texts), params);
  const auto expected = combine_pair_embeddings(zv, zt);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(z.at(2, c), expected[c], 1e-6);
}

TEST(GlobalFeatures, IdenticalVideosShareTheFirstWindowFeature) {
  const auto g = feature_corpus();
  Corpus twins(g.corpus.d_feat(), g.corpus.vocab_size());
  for (int i = 0; i < 3; ++i) {
    VideoRecord v = g.corpus.video(0);
    v.video_id = "twin" + std::to_string(i);
    auto utts = g.corpus.utterances(0);
    for (auto& u : utts) u.video_id = v.video_id;
    twins.add_video(std::move(v), std::move(utts));
  }
  RetrievalConfig r;
  r.feature_mode = FeatureMode::first_window;
  const auto z = global_features(twins, feature_params(twins), r, SamplerConfig{}, 5);
  // Equal up to GEMM rounding, which can depend on a row's position in the batch.
  for (std::size_t i = 1; i < 3; ++i)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_FLOAT_EQ(z.at(i, c), z.at(0, c));
}

TEST(GlobalFeatures, SilentVideoFallsBackToVideoEmbeddings) {
  const auto g = feature_corpus();
  Corpus c(g.corpus.d_feat(), g.corpus.vocab_size());
  c.add_video(g.corpus.video(0), {});
  const auto params = feature_params(c);
  RetrievalConfig r;
  r.clips_per_video_for_feature = 2;
  const auto z = global_features(c, params, r, SamplerConfig{}, 7);
  EXPECT_TRUE(z.all_finite());
  Rng rng(derive_seed(7, {stream_id("retrieval.features"), 0}));
  std::vector<VideoSpan> spans;
  const double dur = c.video(0).duration_s;
  for (int p = 0; p < 2; ++p) {
    const double len = rng.uniform(3.0, 32.0);
    spans.push_back(place_video_span(0, rng.uniform(0.0, dur), len, dur));
  }
  const auto zv = embed_videos<float>(spans, c, params);
  for (std::size_t col = 0; col < 8; ++col) {
    EXPECT_NEAR(z.at(0, col), 0.5f * (zv.at(0, col) + zv.at(1, col)), 1e-6);
  }
}
