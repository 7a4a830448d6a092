#include "vclip/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <unordered_set>

#include "vclip/errors.hpp"
#include "vclip/parallel.hpp"

namespace vclip {

RetrievalMode parse_retrieval_mode(const std::string& s) {
  if (s == "sample_2k") return RetrievalMode::sample_2k;
  if (s == "direct_k") return RetrievalMode::direct_k;
  if (s == "random") return RetrievalMode::random;
  throw ConfigError("unknown retrieval mode '" + s + "'");
}

std::string to_string(RetrievalMode m) {
  switch (m) {
    case RetrievalMode::sample_2k: return "sample_2k";
    case RetrievalMode::direct_k: return "direct_k";
    case RetrievalMode::random: return "random";
  }
  return "?";
}

FeatureMode parse_feature_mode(const std::string& s) {
  if (s == "all_clips") return FeatureMode::all_clips;
  if (s == "first_window") return FeatureMode::first_window;
  throw ConfigError("unknown feature mode '" + s + "'");
}

std::string to_string(FeatureMode m) {
  return m == FeatureMode::all_clips ? "all_clips" : "first_window";
}

void RetrievalConfig::validate() const {
  if (k == 0) throw ConfigError("retrieval: k must be >= 1");
  if (!(first_window_s > 0.0)) throw ConfigError("retrieval: first_window_s must be positive");
}

void RetrievalConfig::validate(std::size_t n_videos) const {
  validate();
  if (k > n_videos) {
    throw ConfigError("retrieval: k = " + std::to_string(k) + " exceeds the corpus size " +
                      std::to_string(n_videos));
  }
}

void to_json(nlohmann::json& j, const RetrievalConfig& c) {
  j = nlohmann::json{{"k", c.k},
                     {"mode", to_string(c.mode)},
                     {"feature_mode", to_string(c.feature_mode)},
                     {"clips_per_video_for_feature", c.clips_per_video_for_feature},
                     {"first_window_s", c.first_window_s},
                     {"clusters_per_epoch", c.clusters_per_epoch}};
}

void from_json(const nlohmann::json& j, RetrievalConfig& c) {
  const RetrievalConfig d;
  c.k = j.value("k", d.k);
  c.mode = parse_retrieval_mode(j.value("mode", to_string(d.mode)));
  c.feature_mode = parse_feature_mode(j.value("feature_mode", to_string(d.feature_mode)));
  c.clips_per_video_for_feature =
      j.value("clips_per_video_for_feature", d.clips_per_video_for_feature);
  c.first_window_s = j.value("first_window_s", d.first_window_s);
  c.clusters_per_epoch = j.value("clusters_per_epoch", d.clusters_per_epoch);
}

Tensor<float> combine_pair_embeddings(const Tensor<float>& video, const Tensor<float>& text) {
  if (video.dims() != text.dims() || video.rows() == 0) {
    throw ShapeError("combine_pair_embeddings: " + shape_string(video.dims()) + " vs " +
                     shape_string(text.dims()));
  }
  const std::size_t p = video.rows(), d = video.cols();
  Tensor<float> out({d});
  for (std::size_t c = 0; c < d; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < p; ++r) acc += double(video.at(r, c)) + double(text.at(r, c));
    out[c] = static_cast<float>(acc / (2.0 * double(p)));
  }
  return out;
}

namespace {

struct VideoPlan {
  std::vector<VideoSpan> video;
  std::vector<std::vector<int>> text;
};

VideoPlan plan_all_clips(const Corpus& corpus, std::size_t v, std::size_t pairs,
                         const SamplerConfig& sampler, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {stream_id("retrieval.features"), v}));
  VideoPlan plan;
  const double duration = corpus.video(v).duration_s;
  for (std::size_t p = 0; p < pairs; ++p) {
    auto text = sample_text_span(corpus, v, sampler, rng);
    if (!text) {
      // No speech: random video clips only.
      const double len = rng.uniform(sampler.min_video_s, sampler.max_video_s);
      plan.video.push_back(place_video_span(v, rng.uniform(0.0, duration), len, duration));
      continue;
    }
    plan.video.push_back(sampler.overlap_mode == OverlapMode::exact_aligned
                             ? VideoSpan{v, text->start_s, text->end_s}
                             : sample_video_span(*text, duration, sampler, rng));
    plan.text.push_back(std::move(text->tokens));
  }
  return plan;
}

VideoPlan plan_first_window(const Corpus& corpus, std::size_t v, double window) {
  VideoPlan plan;
  const double end = std::min(window, corpus.video(v).duration_s);
  plan.video.push_back({v, 0.0, end});
  std::vector<int> tokens;
  for (const auto& u : corpus.utterances(v)) {
    if (u.start_s < end && u.end_s > 0.0) tokens.insert(tokens.end(), u.tokens.begin(), u.tokens.end());
  }
  if (!tokens.empty()) plan.text.push_back(std::move(tokens));
  return plan;
}

}  // namespace

Tensor<float> global_features(const Corpus& corpus, const EncoderParams<float>& params,
                              const RetrievalConfig& retrieval, const SamplerConfig& sampler,
                              std::uint64_t stream_seed) {
  const std::size_t n = corpus.size();
  const std::size_t pairs = retrieval.clips_per_video_for_feature
                                ? retrieval.clips_per_video_for_feature
                                : sampler.pairs_per_video;
  std::vector<VideoPlan> plans(n);
  for (std::size_t v = 0; v < n; ++v) {
    plans[v] = retrieval.feature_mode == FeatureMode::all_clips
                   ? plan_all_clips(corpus, v, pairs, sampler, stream_seed)
                   : plan_first_window(corpus, v, retrieval.first_window_s);
  }

  // Flatten, embed everything in large parallel chunks, then regroup.
  std::vector<VideoSpan> spans;
  std::vector<std::vector<int>> texts;
  std::vector<std::size_t> span_begin(n + 1), text_begin(n + 1);
  for (std::size_t v = 0; v < n; ++v) {
    span_begin[v] = spans.size();
    text_begin[v] = texts.size();
    spans.insert(spans.end(), plans[v].video.begin(), plans[v].video.end());
    texts.insert(texts.end(), plans[v].text.begin(), plans[v].text.end());
  }
  span_begin[n] = spans.size();
  text_begin[n] = texts.size();
  const Tensor<float> zv = embed_videos<float>(spans, corpus, params);
  const Tensor<float> zt =
      texts.empty() ? Tensor<float>{} : embed_texts<float>(std::span(texts), params);

  const std::size_t d = params.config.d_model;
  Tensor<float> out = Tensor<float>::matrix(n, d);
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t nv = span_begin[v + 1] - span_begin[v];
    const std::size_t nt = text_begin[v + 1] - text_begin[v];
    auto row = out.row(v);
    if (nt > 0 && nt == nv) {
      for (std::size_t c = 0; c < d; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < nv; ++r) {
          acc += double(zv.at(span_begin[v] + r, c)) + double(zt.at(text_begin[v] + r, c));
        }
        row[c] = static_cast<float>(acc / (2.0 * double(nv)));
      }
    } else {
      // Video-only fallback (no speech, or no text for some clips).
      for (std::size_t c = 0; c < d; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < nv; ++r) acc += double(zv.at(span_begin[v] + r, c));
        row[c] = static_cast<float>(acc / double(nv));
      }
    }
  }
  return out;
}

DenseIndex::DenseIndex(Tensor<float> vectors, std::vector<std::string> ids)
    : vectors_(std::move(vectors)), ids_(std::move(ids)) {
  if (vectors_.rank() != 2 || vectors_.rows() != ids_.size()) {
    throw InputError("DenseIndex: " + std::to_string(ids_.size()) + " ids for vectors " +
                     shape_string(vectors_.dims()));
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : ids_) {
    if (!seen.insert(id).second) throw InputError("DenseIndex: duplicate id '" + id + "'");
  }
  if (!vectors_.all_finite()) throw InputError("DenseIndex: non-finite vector");
}

std::vector<std::size_t> knn(const DenseIndex& index, std::span<const float> query,
                             std::size_t m) {
  const std::size_t n = index.size();
  if (m > n) {
    throw InputError("knn: m = " + std::to_string(m) + " exceeds index size " + std::to_string(n));
  }
  if (query.size() != index.dim()) throw ShapeError("knn: query dimension mismatch");
  std::vector<double> scores(n);
  const auto& x = index.vectors();
  for (std::size_t r = 0; r < n; ++r) {
    const float* row = x.data() + r * x.cols();
    double acc = 0.0;
    for (std::size_t c = 0; c < query.size(); ++c) acc += double(query[c]) * double(row[c]);
    scores[r] = acc;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                    better);
  order.resize(m);
  return order;
}

std::vector<std::vector<std::size_t>> knn_batch(const DenseIndex& index,
                                                const Tensor<float>& queries, std::size_t m) {
  std::vector<std::vector<std::size_t>> out(queries.rows());
  parallel_for(queries.rows(), [&](std::size_t q) { out[q] = knn(index, queries.row(q), m); });
  return out;
}

ClusterPlan build_clusters(const DenseIndex& index, const RetrievalConfig& config, Rng& rng) {
  const std::size_t n = index.size();
  config.validate(n);
  const std::size_t k = config.k;
  const std::size_t count = config.clusters_per_epoch ? config.clusters_per_epoch : (n + k - 1) / k;

  ClusterPlan plan;
  plan.effective_mode = config.mode;
  if (config.mode == RetrievalMode::sample_2k && 2 * k > n) {
    std::cerr << "warning: corpus of " << n << " videos is smaller than 2k = " << 2 * k
              << "; falling back to direct_k retrieval\n";
    plan.effective_mode = RetrievalMode::direct_k;
  }

  std::vector<std::size_t> seeds;
  for (std::size_t c = 0; c < count; ++c) {
    VideoCluster cluster;
    if (plan.effective_mode == RetrievalMode::random) {
      cluster.videos = rng.sample_without_replacement(n, k);
      cluster.seed_video = cluster.videos.front();
    } else {
      if (seeds.empty()) {
        seeds.resize(n);
        std::iota(seeds.begin(), seeds.end(), std::size_t{0});
        rng.shuffle(seeds.begin(), seeds.end());
        std::reverse(seeds.begin(), seeds.end());  // consumed from the back
      }
      cluster.seed_video = seeds.back();
      seeds.pop_back();
      const auto query = index.vectors().row(cluster.seed_video);
      if (plan.effective_mode == RetrievalMode::direct_k) {
        cluster.videos = knn(index, query, k);
      } else {
        const auto pool = knn(index, query, 2 * k);
        for (std::size_t i : rng.sample_without_replacement(pool.size(), k)) {
          cluster.videos.push_back(pool[i]);
        }
      }
    }
    plan.clusters.push_back(std::move(cluster));
  }
  return plan;
}

void append_clusters_jsonl(const std::filesystem::path& path, std::uint64_t epoch,
                           const ClusterPlan& plan, const DenseIndex& index) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot open " + path.string());
  for (const auto& c : plan.clusters) {
    nlohmann::json members = nlohmann::json::array();
    for (std::size_t v : c.videos) members.push_back(index.ids()[v]);
    out << nlohmann::json{{"epoch", epoch},
                          {"seed_video", index.ids()[c.seed_video]},
                          {"members", members}}
               .dump()
        << '\n';
  }
}

}  // namespace vclip
