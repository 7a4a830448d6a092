#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vclip/corpus.hpp"
#include "vclip/encoder.hpp"
#include "vclip/rng.hpp"
#include "vclip/sampler.hpp"

namespace vclip {

enum class RetrievalMode {
  /// k members drawn uniformly from the seed's 2k nearest videos.
  sample_2k,
  /// The seed's k nearest videos.
  direct_k,
  /// k videos drawn uniformly from the corpus; embeddings are ignored.
  random,
};

enum class FeatureMode {
  /// Mean over sampled clip pairs.
  all_clips,
  /// Only the first window of each video and the speech overlapping it.
  first_window,
};

RetrievalMode parse_retrieval_mode(const std::string& s);
std::string to_string(RetrievalMode m);
FeatureMode parse_feature_mode(const std::string& s);
std::string to_string(FeatureMode m);

struct RetrievalConfig {
  std::size_t k = 8;
  RetrievalMode mode = RetrievalMode::sample_2k;
  FeatureMode feature_mode = FeatureMode::all_clips;
  /// Pairs per video for the global feature; 0 uses the sampler's pairs_per_video.
  std::size_t clips_per_video_for_feature = 0;
  /// Length of the first_window span in seconds.
  double first_window_s = 32.0;
  /// Clusters per epoch; 0 means ceil(videos / k).
  std::size_t clusters_per_epoch = 0;

  void validate() const;
  /// Also checks k against the corpus size.
  void validate(std::size_t n_videos) const;
};

void to_json(nlohmann::json& j, const RetrievalConfig& c);
void from_json(const nlohmann::json& j, RetrievalConfig& c);

/// z_V = 1 / (2P) * sum_p (z_v(p) + z_t(p)) for P pairs given as [P, d] rows.
Tensor<float> combine_pair_embeddings(const Tensor<float>& video, const Tensor<float>& text);

/// One global feature row per video, [n_videos, d_model]. Videos without
/// speech fall back to the mean of their video-clip embeddings.
Tensor<float> global_features(const Corpus& corpus, const EncoderParams<float>& params,
                              const RetrievalConfig& retrieval, const SamplerConfig& sampler,
                              std::uint64_t stream_seed);

/// Exhaustive inner-product index. Row i belongs to ids[i].
class DenseIndex {
 public:
  /// Throws InputError on a row/id count mismatch, duplicate ids or non-finite rows.
  DenseIndex(Tensor<float> vectors, std::vector<std::string> ids);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return vectors_.cols(); }
  const Tensor<float>& vectors() const noexcept { return vectors_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  Tensor<float> vectors_;
  std::vector<std::string> ids_;
};

/// Exact top-m rows by inner product (accumulated in double, left to right),
/// best first; equal scores go to the lower row. Throws InputError when m
/// exceeds the index size.
std::vector<std::size_t> knn(const DenseIndex& index, std::span<const float> query, std::size_t m);

/// knn for each row of `queries`, evaluated in parallel.
std::vector<std::vector<std::size_t>> knn_batch(const DenseIndex& index,
                                                const Tensor<float>& queries, std::size_t m);

struct ClusterPlan {
  std::vector<VideoCluster> clusters;
  /// Mode actually used (sample_2k degrades to direct_k on small corpora).
  RetrievalMode effective_mode = RetrievalMode::sample_2k;
};

/// Seeds come from a shuffled pass over the videos, so each epoch visits
/// every video as a seed once when |C| = n.
ClusterPlan build_clusters(const DenseIndex& index, const RetrievalConfig& config, Rng& rng);

/// Appends one JSON line per cluster: {epoch, seed_video, members}.
void append_clusters_jsonl(const std::filesystem::path& path, std::uint64_t epoch,
                           const ClusterPlan& plan, const DenseIndex& index);

}  // namespace vclip
