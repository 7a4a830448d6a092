#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vclip/checkpoint.hpp"
#include "vclip/corpus.hpp"
#include "vclip/encoder.hpp"
#include "vclip/numerics/adam.hpp"
#include "vclip/objective.hpp"
#include "vclip/retrieval.hpp"
#include "vclip/sampler.hpp"

namespace vclip {

struct TrainConfig {
  std::size_t epochs = 25;
  /// total_steps = 0 is replaced by epochs * clusters per epoch, so the
  /// learning rate decays to end_lr over the run.
  AdamConfig adam{.lr = 3e-3, .warmup_steps = 50};
  SamplerConfig sampler;
  RetrievalConfig retrieval;
  EncoderConfig encoder;
  ObjectiveConfig objective;
  std::uint64_t seed = 0;
  /// Evaluate through TrainHooks::on_eval every this many epochs (0 = never).
  std::size_t eval_every = 0;
  /// Append each epoch's clusters to clusters.jsonl in the output directory.
  bool dump_clusters = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults; encoder d_feat / vocab_size are usually
/// filled in from the corpus afterwards.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct StepRecord {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  std::size_t batch = 0;
  /// Loss per pair (sum of both directions), the optimized quantity.
  double loss = 0.0;
  double video_to_text = 0.0;
  double text_to_video = 0.0;
  double offdiag_mean = 0.0;
  double offdiag_max = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct EpochRecord {
  std::uint64_t epoch = 0;
  std::size_t steps = 0;
  double mean_loss = 0.0;
  double mean_offdiag = 0.0;
  double mean_offdiag_max = 0.0;
  std::string retrieval_mode;
  double wall_s = 0.0;
  /// Metrics reported by TrainHooks::on_eval, if any.
  nlohmann::json eval;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  double wall_s = 0.0;
};

void to_json(nlohmann::json& j, const StepRecord& r);
void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainHooks {
  /// Called after each epoch's checkpoint is written.
  std::function<void(std::uint64_t epoch, const TrainingState&)> on_epoch_end;
  /// Called every eval_every epochs; the result is stored in the epoch record.
  std::function<nlohmann::json(std::uint64_t epoch, const TrainingState&)> on_eval;
  /// Stop after this many epochs in this call (for interrupted runs).
  std::optional<std::size_t> max_epochs_this_call;
};

struct TrainResult {
  TrainingState state;
  RunLog log;
};

/// Fresh parameters, Adam state and seed as the first epoch sees them.
TrainingState initial_state(const TrainConfig& config);

/// The retrieve-then-train loop. With a non-empty out_dir, writes
/// last.vclp after each epoch (atomically) and runlog.jsonl. Throws
/// TrainingError on a non-finite loss; the previous epoch's checkpoint stays.
TrainResult train(const Corpus& corpus, const TrainConfig& config,
                  const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

/// Continues from a checkpoint written by train() with the same config.
TrainResult resume(const Corpus& corpus, const TrainConfig& config,
                   const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir,
                   const TrainHooks& hooks = {});

/// Clusters an epoch would train on (the epoch's retrieval stage).
ClusterPlan plan_epoch(const Corpus& corpus, const EncoderParams<float>& params,
                       const TrainConfig& config, std::uint64_t epoch);

/// Pooled embeddings and loss of one batch without updating anything.
LossReport evaluate_batch(const Corpus& corpus, const EncoderParams<float>& params,
                          const TrainConfig& config, std::span<const ClipPair> pairs);

/// FNV-1a over all parameter bytes, for quick equality checks in logs.
std::string params_fingerprint(const EncoderParams<float>& params);

}  // namespace vclip
