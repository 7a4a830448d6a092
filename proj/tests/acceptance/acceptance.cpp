// End-to-end acceptance checks on the reference synthetic corpus. Prints one
// PASS/FAIL line per criterion and exits non-zero if any fails. A JSON summary
// goes to acceptance.json in the working directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "scratch_dir.hpp"
#include "vclip/checkpoint.hpp"
#include "vclip/errors.hpp"
#include "vclip/numerics/grad_check.hpp"
#include "vclip/retrieval.hpp"
#include "vclip/tasks.hpp"
#include "vclip/trainer.hpp"
#include "vclip/zeroshot.hpp"

using namespace vclip;
using nlohmann::json;
using clock_type = std::chrono::steady_clock;

namespace {

constexpr std::size_t kSeeds = 5;

json g_summary = json::object();
bool g_all_pass = true;

void report(int id, const std::string& name, bool pass, const std::string& detail, json data = {}) {
  std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
  g_all_pass = g_all_pass && pass;
  data["pass"] = pass;
  data["detail"] = detail;
  g_summary[std::to_string(id)] = data;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

double seconds_since(clock_type::time_point t) {
  return std::chrono::duration<double>(clock_type::now() - t).count();
}

std::vector<unsigned char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void put_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

TrainConfig default_config(const Corpus& corpus, std::uint64_t seed) {
  TrainConfig c;
  c.encoder.d_feat = corpus.d_feat();
  c.encoder.vocab_size = corpus.vocab_size();
  c.seed = seed;
  return c;
}

// ------------------------------------------------------------------ 1

void gradient_correctness(const GeneratedCorpus& ref) {
  const auto start = clock_type::now();
  EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers_video = 1;
  cfg.n_layers_text = 1;
  cfg.d_feat = ref.corpus.d_feat();
  cfg.vocab_size = ref.corpus.vocab_size();
  SamplerConfig sampler;
  sampler.pairs_per_video = 1;

  // Training-scale init and a 10x larger one, whose gradients are far from
  // the flat random-init regime.
  double worst = 0.0;
  std::string where;
  for (double scale : {1.0, 10.0}) {
    auto params = EncoderParams<double>::init(cfg, 1);
    for (auto& t : params.tensors)
      for (double& v : t.values()) v *= scale;
    Rng rng(2);
    const auto pairs = assemble_batch(VideoCluster{{0, 1, 2, 3}, 0}, ref.corpus, sampler, rng);
    const GraphScalarFn loss = [&](Graph<double>& g, std::span<const Var> vars) {
      auto enc = encode_pairs(g, params, vars, ref.corpus, std::span<const ClipPair>(pairs));
      return info_nce(g, similarity(g, enc.video, enc.text, ObjectiveConfig{}), 1.0).total;
    };
    const auto r = grad_check(loss, params.tensors);
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = params.names[r.worst_tensor] + " (init x" + fmt(scale, 0) + ")";
    }
  }
  const double secs = seconds_since(start);
  report(1, "gradient correctness", worst < 1e-4 && secs < 60.0,
         "max rel error " + std::to_string(worst) + " at " + where + " (< 1e-4), " + fmt(secs, 1) +
             " s (< 60 s)",
         {{"max_rel_error", worst}, {"seconds", secs}});
}

// ------------------------------------------------------------------ 2

void loss_calibration(const GeneratedCorpus& ref) {
  const double ln64 = std::log(64.0);
  auto config = default_config(ref.corpus, 0);
  config.sampler.pairs_per_video = 8;  // 8 videos x 8 pairs = 64
  double lo = INFINITY, hi = -INFINITY;
  std::size_t inside = 0;
  std::vector<double> values;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const auto params = EncoderParams<float>::init(config.encoder, 100 + trial);
    Rng rng(derive_seed(7, {trial}));
    VideoCluster cluster{rng.sample_without_replacement(ref.corpus.size(), 8), 0};
    cluster.seed_video = cluster.videos[0];
    const auto pairs = assemble_batch(cluster, ref.corpus, config.sampler, rng);
    const auto r = evaluate_batch(ref.corpus, params, config, pairs);
    const double v = r.mean_per_pair_per_direction();
    values.push_back(v);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    inside += std::abs(v - ln64) <= 0.15 * ln64 && r.batch == 64;
  }
  report(2, "loss calibration", inside == 20,
         std::to_string(inside) + "/20 trials within 15% of ln 64 = " + fmt(ln64) + " (range " +
             fmt(lo) + " .. " + fmt(hi) + ")",
         {{"values", values}});
}

// ------------------------------------------------------------------ 3

void knn_oracle() {
  std::size_t mismatches = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist;
    Tensor<float> x = Tensor<float>::matrix(1000, 32);
    for (float& v : x.values()) v = dist(rng);
    // A few exact duplicates so ties actually occur.
    for (std::size_t r = 0; r < 5; ++r) {
      const auto src = x.row(r);
      std::copy(src.begin(), src.end(), x.row(500 + r).begin());
    }
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < 1000; ++i) ids.push_back("v" + std::to_string(i));
    const DenseIndex index(x, ids);
    for (std::size_t q = 0; q < 100; ++q) {
      std::vector<float> query(32);
      if (q < 5) {
        std::copy(x.row(q).begin(), x.row(q).end(), query.begin());
      } else {
        for (float& v : query) v = dist(rng);
      }
      std::vector<std::pair<long double, std::size_t>> all;
      for (std::size_t r = 0; r < 1000; ++r) {
        long double s = 0.0L;
        for (std::size_t c = 0; c < 32; ++c) s += (long double)x.at(r, c) * query[c];
        all.emplace_back(s, r);
      }
      std::stable_sort(all.begin(), all.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      std::vector<std::size_t> expected;
      for (std::size_t i = 0; i < 50; ++i) expected.push_back(all[i].second);
      mismatches += knn(index, query, 50) != expected;
    }
  }
  report(3, "kNN oracle", mismatches == 0,
         std::to_string(mismatches) + " of 1000 queries differ from the brute-force scan (exact)",
         {{"mismatches", mismatches}});
}

// ------------------------------------------------------------------ 4-7

struct RunOutcome {
  double r1 = 0.0;
  double wall_s = 0.0;
  SegmentationMetrics seg;
  EncoderParams<float> after_epoch5;
  EncoderParams<float> final_params;
};

RunOutcome train_and_eval(const GeneratedCorpus& ref, const TaskSet& tasks, TrainConfig config,
                          bool with_segmentation, const std::string& label) {
  RunOutcome out;
  TrainHooks hooks;
  hooks.on_epoch_end = [&](std::uint64_t epoch, const TrainingState& s) {
    if (epoch == 4) out.after_epoch5 = s.params;
  };
  const auto start = clock_type::now();
  auto result = train(ref.corpus, config, {}, hooks);
  out.wall_s = seconds_since(start);
  out.r1 = eval_retrieval(tasks.retrieval, ref.corpus, result.state.params).r1;
  if (with_segmentation) out.seg = eval_segmentation(tasks.segmentation, ref.corpus, result.state.params);
  std::cerr << "  " << label << " seed " << config.seed << ": R@1 " << fmt(out.r1, 3);
  if (with_segmentation) {
    std::cerr << "  seen acc " << fmt(out.seg.seen_accuracy, 3) << "  outside recall "
              << fmt(out.seg.outside_recall, 3);
  }
  std::cerr << "  final loss " << fmt(result.log.epochs.back().mean_loss, 3) << "  "
            << fmt(out.wall_s, 0) << " s" << std::endl;
  out.final_params = std::move(result.state.params);
  return out;
}

// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(std::size_t wins, std::size_t n) {
  double p = 0.0;
  for (std::size_t k = wins; k <= n; ++k) {
    p += std::exp(std::lgamma(double(n) + 1) - std::lgamma(double(k) + 1) -
                  std::lgamma(double(n - k) + 1) - double(n) * std::log(2.0));
  }
  return p;
}

void hard_negatives(const GeneratedCorpus& ref, const EncoderParams<float>& params) {
  auto hard = default_config(ref.corpus, 0);
  auto easy = hard;
  easy.retrieval.mode = RetrievalMode::random;
  const std::uint64_t epoch = 5;
  const auto hard_plan = plan_epoch(ref.corpus, params, hard, epoch);
  const auto easy_plan = plan_epoch(ref.corpus, params, easy, epoch);
  const std::size_t n = std::min<std::size_t>({20, hard_plan.clusters.size(), easy_plan.clusters.size()});
  std::size_t wins = 0;
  double hard_mean = 0.0, easy_mean = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    Rng rh(derive_seed(1000 + b, {1})), re(derive_seed(1000 + b, {1}));
    const auto hp = assemble_batch(hard_plan.clusters[b], ref.corpus, hard.sampler, rh);
    const auto ep = assemble_batch(easy_plan.clusters[b], ref.corpus, easy.sampler, re);
    const double h = evaluate_batch(ref.corpus, params, hard, hp).offdiag_mean;
    const double e = evaluate_batch(ref.corpus, params, easy, ep).offdiag_mean;
    wins += h > e;
    hard_mean += h / double(n);
    easy_mean += e / double(n);
  }
  const double p = sign_test_p(wins, n);
  report(6, "hard negatives", n == 20 && p < 0.05,
         "sample_2k batch off-diagonal similarity above random in " + std::to_string(wins) + "/" +
             std::to_string(n) + " paired batches, sign test p = " + std::to_string(p) +
             " (< 0.05); means " + fmt(hard_mean, 3) + " vs " + fmt(easy_mean, 3),
         {{"wins", wins}, {"batches", n}, {"p", p}, {"hard_mean", hard_mean}, {"random_mean", easy_mean}});
}

bool gamma_monotone(const GeneratedCorpus& ref, const TaskSet& tasks, const EncoderParams<float>& params) {
  const auto labels = make_label_set(tasks.segmentation.labels, params);
  for (std::size_t i = 0; i < std::min<std::size_t>(10, tasks.segmentation.videos.size()); ++i) {
    const auto v = *ref.corpus.index_of(tasks.segmentation.videos[i].video_id);
    const auto logits = second_logits(v, ref.corpus, params, labels.embeddings);
    std::vector<float> grid(logits.values().begin(), logits.values().end());
    grid.push_back(static_cast<float>(labels.gamma));
    std::sort(grid.begin(), grid.end());
    std::vector<int> previous;
    std::size_t previous_outside = 0;
    for (float g : grid) {
      for (double gamma : {double(g), std::nextafter(double(g), INFINITY)}) {
        const auto pred = reject_decode(logits, gamma);
        const auto outside = static_cast<std::size_t>(std::count(pred.begin(), pred.end(), kOutside));
        if (outside < previous_outside) return false;
        for (std::size_t t = 0; t < pred.size() && !previous.empty(); ++t) {
          if (pred[t] != kOutside && pred[t] != previous[t]) return false;
        }
        previous = pred;
        previous_outside = outside;
      }
    }
  }
  return true;
}

void learning_criteria(const GeneratedCorpus& ref, const TaskSet& tasks) {
  std::vector<double> full, no_retrieval, no_overlap;
  std::vector<double> seen, outside;
  double first_wall = 0.0;
  EncoderParams<float> epoch5, seed0_final;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const auto config = default_config(ref.corpus, seed);
    auto a = train_and_eval(ref, tasks, config, true, "sample_2k/overlapped");
    full.push_back(a.r1);
    seen.push_back(a.seg.seen_accuracy);
    outside.push_back(a.seg.outside_recall);
    if (seed == 0) {
      first_wall = a.wall_s;
      epoch5 = std::move(a.after_epoch5);
      seed0_final = std::move(a.final_params);
    }

    auto random = config;
    random.retrieval.mode = RetrievalMode::random;
    no_retrieval.push_back(train_and_eval(ref, tasks, random, false, "random/overlapped").r1);
    auto aligned = random;
    aligned.sampler.overlap_mode = OverlapMode::exact_aligned;
    no_overlap.push_back(train_and_eval(ref, tasks, aligned, false, "random/exact_aligned").r1);
  }
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  };
  const double min_full = *std::min_element(full.begin(), full.end());
  const std::size_t epochs = TrainConfig{}.epochs;
  report(4, "end-to-end learning", min_full >= 0.05 && first_wall < 600.0 && epochs <= 25,
         "default training (" + std::to_string(epochs) + " epochs) R@1 min over " +
             std::to_string(kSeeds) + " seeds " + fmt(min_full, 3) + ", mean " + fmt(mean(full), 3) +
             " (>= 0.05 = 5x chance); " + fmt(first_wall, 0) + " s per run on this machine (< 600 s)",
         {{"r1", full}, {"wall_s", first_wall}, {"epochs", epochs}});

  const double mf = mean(full), mr = mean(no_retrieval), mo = mean(no_overlap);
  report(5, "ablation ordering", mf > mr && mr > mo,
         "mean R@1 sample_2k/overlapped " + fmt(mf, 3) + " > random/overlapped " + fmt(mr, 3) +
             " > random/exact_aligned " + fmt(mo, 3),
         {{"sample_2k_overlapped", full}, {"random_overlapped", no_retrieval},
          {"random_exact_aligned", no_overlap}});

  if (epoch5.tensors.empty()) {
    report(6, "hard negatives", false, "no parameters captured after epoch 5");
  } else {
    hard_negatives(ref, epoch5);
  }

  const double ms = mean(seen), mo_recall = mean(outside);
  const bool monotone = gamma_monotone(ref, tasks, seed0_final);
  report(7, "rejection head", ms >= 0.6 && mo_recall >= 0.5 && monotone,
         "seen-label accuracy " + fmt(ms, 3) + " (>= 0.6), held-out topic Outside rate " +
             fmt(mo_recall, 3) + " (>= 0.5), gamma monotone " + (monotone ? "yes" : "no") +
             " (means over " + std::to_string(kSeeds) + " default runs)",
         {{"seen_accuracy", seen}, {"outside_recall", outside}, {"gamma_monotone", monotone}});
}

// ------------------------------------------------------------------ 8

void determinism(const GeneratedCorpus& ref) {
  vclip::testing::ScratchDir dir("accept-det");
  auto config = default_config(ref.corpus, 11);
  config.epochs = 3;
  const auto a = train(ref.corpus, config, dir / "a");
  train(ref.corpus, config, dir / "b");
  const bool identical = file_bytes(dir / "a" / "last.vclp") == file_bytes(dir / "b" / "last.vclp");

  TrainHooks stop;
  stop.max_epochs_this_call = 1;
  const auto first = train(ref.corpus, config, dir / "c", stop);
  const auto rest = resume(ref.corpus, config, dir / "c" / "last.vclp", dir / "c");
  std::vector<StepRecord> joined = first.log.steps;
  joined.insert(joined.end(), rest.log.steps.begin(), rest.log.steps.end());
  bool steps_match = joined.size() == a.log.steps.size();
  for (std::size_t i = 0; steps_match && i < joined.size(); ++i) {
    steps_match = joined[i].step == a.log.steps[i].step && joined[i].loss == a.log.steps[i].loss &&
                  joined[i].grad_norm == a.log.steps[i].grad_norm;
  }
  const bool resumed_identical = file_bytes(dir / "a" / "last.vclp") == file_bytes(dir / "c" / "last.vclp");
  report(8, "determinism", identical && steps_match && resumed_identical,
         std::string("same-seed checkpoints ") + (identical ? "bit-identical" : "DIFFER") +
             "; resume after epoch 1: " + std::to_string(joined.size()) + " steps " +
             (steps_match ? "match" : "DIFFER") + ", final checkpoint " +
             (resumed_identical ? "bit-identical" : "DIFFERS"));
}

// ------------------------------------------------------------------ 9

bool rejects(const std::function<void()>& load) {
  try {
    load();
  } catch (const FormatError&) {
    return true;
  } catch (const Error&) {
    return true;
  }
  return false;
}

void format_round_trips(const GeneratedCorpus& ref) {
  vclip::testing::ScratchDir dir("accept-io");
  std::vector<std::string> problems;

  save_corpus(ref.corpus, dir / "c1");
  const Corpus loaded = load_corpus(dir / "c1");
  if (!(loaded == ref.corpus)) problems.push_back("corpus differs after load");
  save_corpus(loaded, dir / "c2");
  for (const char* f : {"manifest.json", "features.bin", "transcript.jsonl"}) {
    if (file_bytes(dir / "c1" / f) != file_bytes(dir / "c2" / f)) problems.push_back(std::string("re-saved ") + f + " differs");
  }
  const auto features = file_bytes(dir / "c1" / "features.bin");
  auto corrupt_corpus = [&](const std::string& what, std::vector<unsigned char> bytes) {
    std::filesystem::copy(dir / "c1", dir / "bad", std::filesystem::copy_options::recursive |
                                                      std::filesystem::copy_options::overwrite_existing);
    put_bytes(dir / "bad" / "features.bin", bytes);
    if (!rejects([&] { load_corpus(dir / "bad"); })) problems.push_back("corpus accepted " + what);
    std::filesystem::remove_all(dir / "bad");
  };
  auto flipped = features;
  flipped[0] ^= 0xFF;
  corrupt_corpus("bad magic", flipped);
  corrupt_corpus("truncation", {features.begin(), features.end() - 7});
  auto trailing = features;
  trailing.push_back(1);
  corrupt_corpus("trailing bytes", trailing);

  TrainingState state = initial_state(default_config(ref.corpus, 3));
  write_checkpoint(to_blocks(state), dir / "k1.vclp");
  const auto blocks = read_checkpoint(dir / "k1.vclp");
  if (!(blocks == to_blocks(state))) problems.push_back("checkpoint differs after load");
  write_checkpoint(to_blocks(from_blocks(blocks)), dir / "k2.vclp");
  const auto ckpt = file_bytes(dir / "k1.vclp");
  if (ckpt != file_bytes(dir / "k2.vclp")) problems.push_back("re-saved checkpoint differs");
  auto bad = ckpt;
  bad[2] ^= 0x01;
  if (!rejects([&] { parse_checkpoint(bad, "k"); })) problems.push_back("checkpoint accepted bad magic");
  bad = ckpt;
  bad[4] = 2;
  if (!rejects([&] { parse_checkpoint(bad, "k"); })) problems.push_back("checkpoint accepted version 2");
  if (!rejects([&] { parse_checkpoint(std::span(ckpt.data(), ckpt.size() - 3), "k"); })) {
    problems.push_back("checkpoint accepted truncation");
  }

  std::string detail = "corpus and checkpoint save/load/save bit-exact, corruption rejected";
  if (!problems.empty()) {
    detail.clear();
    for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  }
  report(9, "format round-trips", problems.empty(), detail);
}

}  // namespace

int main() {
  const auto start = clock_type::now();
  CorpusConfig reference;  // 200 videos, 8 topics, D_feat 64, sigma 0.3, lag 4 s
  const GeneratedCorpus ref = generate_corpus(reference);
  TaskOptions task_options;
  task_options.seed = reference.seed;
  const TaskSet tasks = make_tasks(ref.corpus, ref.truth, task_options);
  std::cerr << "reference corpus: " << ref.corpus.size() << " videos, " << ref.corpus.total_tokens()
            << " transcript tokens" << std::endl;

  gradient_correctness(ref);
  loss_calibration(ref);
  knn_oracle();
  learning_criteria(ref, tasks);
  determinism(ref);
  format_round_trips(ref);

  g_summary["wall_s"] = seconds_since(start);
  std::ofstream("acceptance.json") << g_summary.dump(2) << '\n';
  std::cout << (g_all_pass ? "all criteria pass" : "some criteria FAIL") << " (" << fmt(seconds_since(start), 0)
            << " s)" << std::endl;
  return g_all_pass ? 0 : 1;
}
