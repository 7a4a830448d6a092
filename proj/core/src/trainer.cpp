#include "vclip/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "vclip/errors.hpp"
#include "vclip/hash.hpp"

namespace vclip {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
  adam.validate();
  sampler.validate();
  retrieval.validate();
  encoder.validate();
  objective.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"adam",
                      {{"lr", c.adam.lr},
                       {"beta1", c.adam.beta1},
                       {"beta2", c.adam.beta2},
                       {"epsilon", c.adam.epsilon},
                       {"warmup_steps", c.adam.warmup_steps},
                       {"total_steps", c.adam.total_steps},
                       {"end_lr", c.adam.end_lr},
                       {"decay_power", c.adam.decay_power},
                       {"clip_norm", c.adam.clip_norm}}},
                     {"sampler", c.sampler},
                     {"retrieval", c.retrieval},
                     {"encoder", c.encoder},
                     {"objective", c.objective},
                     {"seed", c.seed},
                     {"eval_every", c.eval_every},
                     {"dump_clusters", c.dump_clusters}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.adam = d.adam;
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    c.adam.lr = a.value("lr", d.adam.lr);
    c.adam.beta1 = a.value("beta1", d.adam.beta1);
    c.adam.beta2 = a.value("beta2", d.adam.beta2);
    c.adam.epsilon = a.value("epsilon", d.adam.epsilon);
    c.adam.warmup_steps = a.value("warmup_steps", d.adam.warmup_steps);
    c.adam.total_steps = a.value("total_steps", d.adam.total_steps);
    c.adam.end_lr = a.value("end_lr", d.adam.end_lr);
    c.adam.decay_power = a.value("decay_power", d.adam.decay_power);
    c.adam.clip_norm = a.value("clip_norm", d.adam.clip_norm);
  }
  c.sampler = j.value("sampler", nlohmann::json::object()).get<SamplerConfig>();
  c.retrieval = j.value("retrieval", nlohmann::json::object()).get<RetrievalConfig>();
  c.encoder = j.value("encoder", nlohmann::json::object()).get<EncoderConfig>();
  c.objective = j.value("objective", nlohmann::json::object()).get<ObjectiveConfig>();
  c.seed = j.value("seed", d.seed);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.dump_clusters = j.value("dump_clusters", d.dump_clusters);
}

void to_json(nlohmann::json& j, const StepRecord& r) {
  j = nlohmann::json{{"kind", "step"},
                     {"epoch", r.epoch},
                     {"step", r.step},
                     {"batch", r.batch},
                     {"loss", r.loss},
                     {"video_to_text", r.video_to_text},
                     {"text_to_video", r.text_to_video},
                     {"offdiag_mean", r.offdiag_mean},
                     {"offdiag_max", r.offdiag_max},
                     {"lr", r.lr},
                     {"grad_norm", r.grad_norm}};
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = nlohmann::json{{"kind", "epoch"},
                     {"epoch", r.epoch},
                     {"steps", r.steps},
                     {"mean_loss", r.mean_loss},
                     {"mean_offdiag", r.mean_offdiag},
                     {"mean_offdiag_max", r.mean_offdiag_max},
                     {"retrieval_mode", r.retrieval_mode},
                     {"wall_s", r.wall_s}};
  if (!r.eval.is_null()) j["eval"] = r.eval;
}

namespace {

std::size_t clusters_per_epoch(const TrainConfig& c, std::size_t n_videos) {
  return c.retrieval.clusters_per_epoch ? c.retrieval.clusters_per_epoch
                                        : (n_videos + c.retrieval.k - 1) / c.retrieval.k;
}

AdamConfig effective_adam(const TrainConfig& c, std::size_t n_videos) {
  AdamConfig a = c.adam;
  if (a.total_steps == 0) {
    a.total_steps = static_cast<std::int64_t>(c.epochs * clusters_per_epoch(c, n_videos));
  }
  return a;
}

std::vector<std::string> video_ids(const Corpus& corpus) {
  std::vector<std::string> ids;
  for (const auto& v : corpus.videos()) ids.push_back(v.video_id);
  return ids;
}

void check_compatible(const Corpus& corpus, const EncoderConfig& e) {
  if (e.d_feat != corpus.d_feat() || e.vocab_size != corpus.vocab_size()) {
    throw ConfigError("encoder expects d_feat " + std::to_string(e.d_feat) + " / vocab " +
                      std::to_string(e.vocab_size) + " but the corpus has " +
                      std::to_string(corpus.d_feat()) + " / " +
                      std::to_string(corpus.vocab_size()));
  }
}

// Keeps runlog lines of epochs before `epoch` so a resumed run does not
// duplicate records of an interrupted epoch.
void truncate_runlog(const std::filesystem::path& path, std::uint64_t epoch) {
  if (!std::filesystem::exists(path)) return;
  std::vector<std::string> kept;
  {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (!j.is_discarded() && j.value("epoch", epoch) < epoch) kept.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : kept) out << l << '\n';
}

TrainResult run(const Corpus& corpus, const TrainConfig& config, TrainingState state,
                const std::filesystem::path& out_dir, const TrainHooks& hooks) {
  using clock = std::chrono::steady_clock;
  const auto run_start = clock::now();
  const bool persist = !out_dir.empty();
  std::ofstream runlog;
  if (persist) {
    std::filesystem::create_directories(out_dir);
    truncate_runlog(out_dir / "runlog.jsonl", state.next_epoch);
    if (config.dump_clusters && state.next_epoch == 0) {
      std::filesystem::remove(out_dir / "clusters.jsonl");
    }
    runlog.open(out_dir / "runlog.jsonl", std::ios::app);
  }

  TrainResult result;
  auto& params = state.params;
  const std::size_t n_params = params.tensors.size();
  std::size_t epochs_run = 0;
  for (std::uint64_t epoch = state.next_epoch; epoch < config.epochs; ++epoch) {
    if (hooks.max_epochs_this_call && epochs_run >= *hooks.max_epochs_this_call) break;
    const auto epoch_start = clock::now();
    const ClusterPlan plan = plan_epoch(corpus, params, config, epoch);
    if (persist && config.dump_clusters) {
      DenseIndex ids_only(Tensor<float>::matrix(corpus.size(), 1), video_ids(corpus));
      append_clusters_jsonl(out_dir / "clusters.jsonl", epoch, plan, ids_only);
    }

    EpochRecord er;
    er.epoch = epoch;
    er.retrieval_mode = to_string(plan.effective_mode);
    for (std::size_t b = 0; b < plan.clusters.size(); ++b) {
      Rng rng(derive_seed(state.seed, {stream_id("train.batch"), epoch, b}));
      const auto pairs = assemble_batch(plan.clusters[b], corpus, config.sampler, rng);
      if (pairs.size() < 2) continue;

      Graph<float> g;
      const auto vars = bind_params(g, params, true);
      const auto enc = encode_pairs(g, params, vars, corpus, pairs);
      const Var sim = similarity(g, enc.video, enc.text, config.objective);
      const auto nce = info_nce(g, sim, config.objective.temperature);
      const Var loss = ops::scale(g, nce.total, 1.0f / static_cast<float>(pairs.size()));
      if (!std::isfinite(g.value(loss)[0])) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b));
      }
      g.backward(loss);

      std::vector<Tensor<float>> grads;
      grads.reserve(n_params);
      for (std::size_t i = 0; i < n_params; ++i) grads.push_back(g.grad(vars[i]));
      const auto report = adam_step<float>(params.tensors, grads, params.names, state.adam);

      StepRecord sr;
      sr.epoch = epoch;
      sr.step = static_cast<std::uint64_t>(state.adam.step);
      sr.batch = pairs.size();
      sr.loss = nce.report.mean_per_pair();
      sr.video_to_text = nce.report.video_to_text;
      sr.text_to_video = nce.report.text_to_video;
      sr.offdiag_mean = nce.report.offdiag_mean;
      sr.offdiag_max = nce.report.offdiag_max;
      sr.lr = report.lr;
      sr.grad_norm = report.grad_norm;
      if (runlog.is_open()) runlog << nlohmann::json(sr).dump() << '\n';
      er.mean_loss += sr.loss;
      er.mean_offdiag += sr.offdiag_mean;
      er.mean_offdiag_max += sr.offdiag_max;
      ++er.steps;
      result.log.steps.push_back(sr);
    }
    if (er.steps > 0) {
      er.mean_loss /= double(er.steps);
      er.mean_offdiag /= double(er.steps);
      er.mean_offdiag_max /= double(er.steps);
    }
    state.next_epoch = epoch + 1;
    if (persist) write_checkpoint(to_blocks(state), out_dir / "last.vclp");
    if (hooks.on_eval && config.eval_every > 0 && (epoch + 1) % config.eval_every == 0) {
      er.eval = hooks.on_eval(epoch, state);
    }
    er.wall_s = std::chrono::duration<double>(clock::now() - epoch_start).count();
    if (runlog.is_open()) runlog << nlohmann::json(er).dump() << std::endl;
    result.log.epochs.push_back(er);
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, state);
    ++epochs_run;
  }
  result.log.wall_s = std::chrono::duration<double>(clock::now() - run_start).count();
  result.state = std::move(state);
  return result;
}

}  // namespace

TrainingState initial_state(const TrainConfig& config) {
  config.validate();
  TrainingState s;
  s.seed = config.seed;
  s.params = EncoderParams<float>::init(config.encoder, config.seed);
  s.adam = AdamState<float>::init(config.adam, s.params.tensors);
  return s;
}

ClusterPlan plan_epoch(const Corpus& corpus, const EncoderParams<float>& params,
                       const TrainConfig& config, std::uint64_t epoch) {
  Tensor<float> feats;
  if (config.retrieval.mode == RetrievalMode::random) {
    // Clusters ignore embeddings; skip the encoding pass.
    feats = Tensor<float>::matrix(corpus.size(), 1);
  } else {
    feats = global_features(corpus, params, config.retrieval, config.sampler,
                            derive_seed(config.seed, {stream_id("train.features"), epoch}));
  }
  const DenseIndex index(std::move(feats), video_ids(corpus));
  Rng rng(derive_seed(config.seed, {stream_id("train.clusters"), epoch}));
  return build_clusters(index, config.retrieval, rng);
}

LossReport evaluate_batch(const Corpus& corpus, const EncoderParams<float>& params,
                          const TrainConfig& config, std::span<const ClipPair> pairs) {
  Graph<float> g;
  const auto vars = bind_params(g, params, false);
  const auto enc = encode_pairs(g, params, vars, corpus, pairs);
  const Var sim = similarity(g, enc.video, enc.text, config.objective);
  return info_nce(g, sim, config.objective.temperature).report;
}

TrainResult train(const Corpus& corpus, const TrainConfig& config,
                  const std::filesystem::path& out_dir, const TrainHooks& hooks) {
  config.validate();
  config.retrieval.validate(corpus.size());
  check_compatible(corpus, config.encoder);
  TrainingState state = initial_state(config);
  state.adam.config = effective_adam(config, corpus.size());
  return run(corpus, config, std::move(state), out_dir, hooks);
}

TrainResult resume(const Corpus& corpus, const TrainConfig& config,
                   const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir,
                   const TrainHooks& hooks) {
  config.validate();
  config.retrieval.validate(corpus.size());
  TrainingState state =
      from_blocks(read_checkpoint(checkpoint), effective_adam(config, corpus.size()));
  check_compatible(corpus, state.params.config);
  if (state.seed != config.seed) {
    throw ConfigError("checkpoint seed " + std::to_string(state.seed) +
                      " differs from config seed " + std::to_string(config.seed));
  }
  TrainConfig effective = config;
  effective.encoder = state.params.config;
  return run(corpus, effective, std::move(state), out_dir, hooks);
}

std::string params_fingerprint(const EncoderParams<float>& params) {
  Fnv1a h;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    h.update(params.names[i]);
    const auto& t = params.tensors[i];
    h.update(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(t.data()),
                                            t.numel() * sizeof(float)));
  }
  return h.hex();
}

}  // namespace vclip
