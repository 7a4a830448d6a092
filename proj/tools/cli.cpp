#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "vclip/checkpoint.hpp"
#include "vclip/corpus.hpp"
#include "vclip/errors.hpp"
#include "vclip/hash.hpp"
#include "vclip/parallel.hpp"
#include "vclip/tasks.hpp"
#include "vclip/trainer.hpp"
#include "vclip/zeroshot.hpp"

namespace vclip::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string(), e.byte, e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string config_hash(const json& config) {
  Fnv1a h;
  h.update(config.dump());
  return h.hex();
}

json run_manifest(const std::string& command, const json& config, const std::string& corpus,
                  const std::string& checkpoint, std::uint64_t seed) {
  return json{{"command", command},
              {"config", config},
              {"config_hash", config_hash(config)},
              {"corpus_hash", corpus},
              {"checkpoint_hash", checkpoint},
              {"tool_version", VCLIP_VERSION},
              {"seed", seed},
              {"threads", thread_count()}};
}

TaskOptions task_options_from(const json& j, std::uint64_t default_seed) {
  TaskOptions o;
  o.seed = default_seed;
  o.retrieval_queries = j.value("retrieval_queries", o.retrieval_queries);
  o.query_min_tokens = j.value("query_min_tokens", o.query_min_tokens);
  o.query_max_tokens = j.value("query_max_tokens", o.query_max_tokens);
  o.qa_items = j.value("qa_items", o.qa_items);
  o.qa_answers = j.value("qa_answers", o.qa_answers);
  o.label_tokens = j.value("label_tokens", o.label_tokens);
  o.held_out_topics = j.value("held_out_topics", o.held_out_topics);
  o.segmentation_videos = j.value("segmentation_videos", o.segmentation_videos);
  o.step_videos = j.value("step_videos", o.step_videos);
  o.seed = j.value("seed", o.seed);
  return o;
}

json to_json(const TaskOptions& o) {
  return json{{"retrieval_queries", o.retrieval_queries}, {"query_min_tokens", o.query_min_tokens},
              {"query_max_tokens", o.query_max_tokens},   {"qa_items", o.qa_items},
              {"qa_answers", o.qa_answers},               {"label_tokens", o.label_tokens},
              {"held_out_topics", o.held_out_topics},     {"segmentation_videos", o.segmentation_videos},
              {"step_videos", o.step_videos},             {"seed", o.seed}};
}

// ---------------------------------------------------------------- gen-corpus

struct GenArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int gen_corpus(const GenArgs& a, std::ostream& out) {
  const json file = a.config.empty() ? json::object() : read_json(a.config);
  CorpusConfig cc = file.value("corpus", json::object()).get<CorpusConfig>();
  if (a.seed) cc.seed = *a.seed;
  const TaskOptions to = task_options_from(file.value("tasks", json::object()), cc.seed);

  const auto gen = generate_corpus(cc);
  const fs::path dir = a.out;
  save_corpus(gen.corpus, dir);
  save_annotations(gen.truth, dir);
  save_tasks(make_tasks(gen.corpus, gen.truth, to), dir);

  const json config{{"corpus", cc}, {"tasks", to_json(to)}};
  const std::string hash = corpus_hash(dir);
  write_json(dir / "run_manifest.json", run_manifest("gen-corpus", config, hash, "", cc.seed));
  out << "corpus: " << gen.corpus.size() << " videos, " << gen.corpus.total_tokens()
      << " transcript tokens -> " << dir.string() << "\ncorpus_hash: " << hash << '\n';
  return 0;
}

// ------------------------------------------------------------------ pretrain

struct TrainOverrides {
  std::string retrieval_mode;
  std::string overlap_mode;
  bool shared_encoder = false;
  std::string pooling;
  std::string feature_mode;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

TrainConfig resolve_train_config(const std::string& config_file, const Corpus& corpus,
                                 const TrainOverrides& o) {
  TrainConfig c;
  if (!config_file.empty()) c = read_json(config_file).get<TrainConfig>();
  c.encoder.d_feat = corpus.d_feat();
  c.encoder.vocab_size = corpus.vocab_size();
  if (!o.retrieval_mode.empty()) c.retrieval.mode = parse_retrieval_mode(o.retrieval_mode);
  if (!o.overlap_mode.empty()) c.sampler.overlap_mode = parse_overlap_mode(o.overlap_mode);
  if (o.shared_encoder) c.encoder.shared_encoder = true;
  if (!o.pooling.empty()) c.encoder.pooling = parse_pooling(o.pooling);
  if (!o.feature_mode.empty()) c.retrieval.feature_mode = parse_feature_mode(o.feature_mode);
  if (o.epochs) c.epochs = *o.epochs;
  if (o.seed) c.seed = *o.seed;
  c.validate();
  c.retrieval.validate(corpus.size());
  if (c.retrieval.mode == RetrievalMode::sample_2k && 2 * c.retrieval.k > corpus.size()) {
    throw ConfigError("sample_2k needs 2k = " + std::to_string(2 * c.retrieval.k) +
                      " <= corpus size " + std::to_string(corpus.size()) +
                      "; use --retrieval-mode direct_k or a smaller k");
  }
  return c;
}

TrainHooks eval_hooks(const fs::path& corpus_dir, const Corpus& corpus) {
  TrainHooks hooks;
  const fs::path task_file = corpus_dir / "retrieval.jsonl";
  if (fs::exists(task_file)) {
    auto task = std::make_shared<RetrievalTask>(load_retrieval_task(task_file));
    hooks.on_eval = [task, &corpus](std::uint64_t, const TrainingState& s) {
      const auto r = eval_retrieval(*task, corpus, s.params);
      return json{{"retrieval_r1", r.r1}, {"retrieval_r5", r.r5}, {"retrieval_r10", r.r10}};
    };
  }
  return hooks;
}

struct PretrainArgs {
  std::string corpus;
  std::string config;
  std::string out;
  bool resume = false;
  TrainOverrides overrides;
};

int pretrain(const PretrainArgs& a, std::ostream& out) {
  const fs::path corpus_dir = a.corpus;
  const Corpus corpus = load_corpus(corpus_dir);
  const TrainConfig config = resolve_train_config(a.config, corpus, a.overrides);
  const fs::path dir = a.out;
  fs::create_directories(dir);
  write_json(dir / "config.json", json(config));

  TrainHooks hooks = eval_hooks(corpus_dir, corpus);
  hooks.on_epoch_end = [&out](std::uint64_t epoch, const TrainingState&) {
    out << "epoch " << epoch + 1 << " done" << std::endl;
  };
  const fs::path ckpt = dir / "last.vclp";
  const TrainResult result = a.resume && fs::exists(ckpt)
                                 ? resume(corpus, config, ckpt, dir, hooks)
                                 : train(corpus, config, dir, hooks);

  const std::string ckpt_hash = hash_file(ckpt);
  write_json(dir / "run_manifest.json", run_manifest("pretrain", json(config),
                                                     corpus_hash(corpus_dir), ckpt_hash,
                                                     config.seed));
  for (const auto& e : result.log.epochs) {
    out << "epoch " << std::setw(3) << e.epoch + 1 << "  loss " << std::fixed
        << std::setprecision(4) << e.mean_loss << "  offdiag " << e.mean_offdiag << "  "
        << e.retrieval_mode << "  " << std::setprecision(1) << e.wall_s << "s";
    if (!e.eval.is_null()) out << "  R@1 " << std::setprecision(3) << e.eval.value("retrieval_r1", 0.0);
    out << '\n';
  }
  out << "checkpoint: " << ckpt.string() << "\ncheckpoint_hash: " << ckpt_hash << '\n';
  return 0;
}

// ---------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string task;
  std::string data;
  std::string out = "metrics.json";
  std::string corpus;
};

std::map<std::string, double> evaluate(const std::string& task, const fs::path& data,
                                       const Corpus& corpus, const EncoderParams<float>& params) {
  if (task == "retrieval") {
    const auto r = eval_retrieval(load_retrieval_task(data), corpus, params);
    return {{"R@1", r.r1}, {"R@5", r.r5}, {"R@10", r.r10}};
  }
  if (task == "qa") return {{"accuracy", eval_qa(load_qa_task(data), corpus, params)}};
  if (task == "segmentation") {
    const auto m = eval_segmentation(load_segmentation_task(data), corpus, params);
    return {{"frame_accuracy", m.frame_accuracy},
            {"seen_frame_accuracy", m.seen_accuracy},
            {"outside_recall", m.outside_recall},
            {"gamma", m.gamma}};
  }
  if (task == "localization") {
    return {{"average_step_recall", eval_localization(load_step_task(data), corpus, params)}};
  }
  throw ConfigError("unknown task '" + task + "'");
}

int eval(const EvalArgs& a, std::ostream& out) {
  const fs::path data = a.data;
  const fs::path corpus_dir = a.corpus.empty() ? data.parent_path() : fs::path(a.corpus);
  const Corpus corpus = load_corpus(corpus_dir.empty() ? fs::path(".") : corpus_dir);
  const auto params = load_params(a.checkpoint);
  if (params.config.d_feat != corpus.d_feat() || params.config.vocab_size != corpus.vocab_size()) {
    throw ConfigError("checkpoint does not match the corpus (d_feat / vocab size)");
  }
  const auto values = evaluate(a.task, data, corpus, params);

  json config{{"task", a.task}, {"data", data.string()}, {"encoder", params.config}};
  if (a.task == "localization") config["step_recall_definition"] = kStepRecallDefinition;
  const std::string ckpt_hash = hash_file(a.checkpoint);
  json doc = metrics_document(a.task, values, config_hash(config), ckpt_hash);
  write_json(a.out, doc);
  const fs::path manifest = fs::path(a.out).parent_path() / "eval_manifest.json";
  write_json(manifest, run_manifest("eval", config, corpus_hash(corpus_dir), ckpt_hash, 0));
  for (const auto& [k, v] : values) {
    out << a.task << ' ' << k << ' ' << std::fixed << std::setprecision(4) << v << '\n';
  }
  return 0;
}

// -------------------------------------------------------------------- ablate

struct AblationRow {
  std::string name;
  TrainOverrides overrides;
};

std::vector<AblationRow> ablation_rows() {
  std::vector<AblationRow> rows(6);
  rows[0].name = "full";
  rows[1].name = "w/o retrieval";
  rows[1].overrides.retrieval_mode = "random";
  rows[2].name = "w/o retrieval and w/o overlap";
  rows[2].overrides.retrieval_mode = "random";
  rows[2].overrides.overlap_mode = "exact_aligned";
  rows[3].name = "shared video/text transformer";
  rows[3].overrides.shared_encoder = true;
  rows[4].name = "use [CLS]";
  rows[4].overrides.pooling = "cls";
  rows[5].name = "use first 32 sec for retrieval";
  rows[5].overrides.feature_mode = "first_window";
  return rows;
}

struct AblateArgs {
  std::string corpus;
  std::string config;
  std::string out;
  std::string suite = "table6";
  std::size_t seeds = 3;
  std::optional<std::size_t> epochs;
};

int ablate(const AblateArgs& a, std::ostream& out) {
  if (a.suite != "table6") throw ConfigError("unknown ablation suite '" + a.suite + "'");
  if (a.seeds == 0) throw ConfigError("--seeds must be >= 1");
  const fs::path corpus_dir = a.corpus;
  const Corpus corpus = load_corpus(corpus_dir);
  const RetrievalTask task = load_retrieval_task(corpus_dir / "retrieval.jsonl");

  json rows = json::array();
  for (const auto& row : ablation_rows()) {
    std::vector<double> r1;
    json runs = json::array();
    for (std::size_t s = 0; s < a.seeds; ++s) {
      TrainOverrides o = row.overrides;
      o.epochs = a.epochs;
      TrainConfig config = resolve_train_config(a.config, corpus, o);
      config.seed += s;
      const fs::path dir =
          a.out.empty() ? fs::path() : fs::path(a.out) / (std::to_string(rows.size())) /
                                           ("seed" + std::to_string(config.seed));
      const auto result = train(corpus, config, dir, {});
      const auto r = eval_retrieval(task, corpus, result.state.params);
      r1.push_back(r.r1);
      runs.push_back({{"seed", config.seed}, {"R@1", r.r1}, {"R@5", r.r5}, {"R@10", r.r10},
                      {"final_loss", result.log.epochs.back().mean_loss}});
      out << row.name << " seed " << config.seed << ": R@1 " << std::fixed
          << std::setprecision(3) << r.r1 << std::endl;
    }
    double mean = 0.0, var = 0.0;
    for (double v : r1) mean += v;
    mean /= double(r1.size());
    for (double v : r1) var += (v - mean) * (v - mean);
    const double sd = r1.size() > 1 ? std::sqrt(var / double(r1.size() - 1)) : 0.0;
    rows.push_back({{"row", row.name}, {"mean_r1", mean}, {"sd_r1", sd}, {"runs", runs}});
  }

  out << "\n| configuration | R@1 mean | R@1 sd |\n|---|---|---|\n";
  for (const auto& r : rows) {
    out << "| " << r["row"].get<std::string>() << " | " << std::fixed << std::setprecision(3)
        << r["mean_r1"].get<double>() << " | " << r["sd_r1"].get<double>() << " |\n";
  }
  if (!a.out.empty()) {
    const json config{{"suite", a.suite}, {"seeds", a.seeds}, {"config_file", a.config}};
    write_json(fs::path(a.out) / "ablation.json", json{{"suite", a.suite}, {"rows", rows}});
    write_json(fs::path(a.out) / "run_manifest.json",
               run_manifest("ablate", config, corpus_hash(corpus_dir), "", 0));
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"vclip: retrieval-augmented video-text contrastive pre-training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", VCLIP_VERSION);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Generate a synthetic corpus and task files");
  gen_cmd->add_option("--config", gen.config, "JSON with optional 'corpus' and 'tasks' objects")
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Override the corpus seed");

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Retrieval-augmented contrastive pre-training");
  pre_cmd->add_option("--corpus", pre.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  pre_cmd->add_option("--config", pre.config, "Training config JSON")->check(CLI::ExistingFile);
  pre_cmd->add_option("--out", pre.out, "Run directory")->required();
  pre_cmd->add_option("--retrieval-mode", pre.overrides.retrieval_mode)
      ->check(CLI::IsMember({"sample_2k", "direct_k", "random"}));
  pre_cmd->add_option("--overlap-mode", pre.overrides.overlap_mode)
      ->check(CLI::IsMember({"overlapped", "exact_aligned"}));
  pre_cmd->add_flag("--shared-encoder", pre.overrides.shared_encoder);
  pre_cmd->add_option("--pooling", pre.overrides.pooling)->check(CLI::IsMember({"avg", "cls"}));
  pre_cmd->add_option("--feature-mode", pre.overrides.feature_mode)
      ->check(CLI::IsMember({"all_clips", "first_window"}));
  pre_cmd->add_option("--epochs", pre.overrides.epochs);
  pre_cmd->add_option("--seed", pre.overrides.seed);
  pre_cmd->add_flag("--resume", pre.resume, "Continue from <out>/last.vclp when present");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Zero-shot evaluation of a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--task", ev.task)
      ->required()
      ->check(CLI::IsMember({"retrieval", "qa", "segmentation", "localization"}));
  eval_cmd->add_option("--data", ev.data, "Task file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", ev.out, "metrics.json path");
  eval_cmd->add_option("--corpus", ev.corpus, "Corpus directory (default: the task file's)");

  AblateArgs ab;
  auto* ab_cmd = app.add_subcommand("ablate", "Run ablation contrasts and compare R@1");
  ab_cmd->add_option("--corpus", ab.corpus)->required()->check(CLI::ExistingDirectory);
  ab_cmd->add_option("--config", ab.config, "Base training config JSON")->check(CLI::ExistingFile);
  ab_cmd->add_option("--suite", ab.suite)->check(CLI::IsMember({"table6"}));
  ab_cmd->add_option("--seeds", ab.seeds);
  ab_cmd->add_option("--epochs", ab.epochs);
  ab_cmd->add_option("--out", ab.out, "Directory for runs and ablation.json");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen_cmd) return gen_corpus(gen, out);
    if (*pre_cmd) return pretrain(pre, out);
    if (*eval_cmd) return eval(ev, out);
    if (*ab_cmd) return ablate(ab, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace vclip::cli
