#include "vclip/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>

#include "vclip/errors.hpp"
#include "vclip/parallel.hpp"

namespace vclip {

std::vector<std::size_t> rank_by_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::size_t argmax_lowest(std::span<const double> scores) {
  if (scores.empty()) throw InputError("argmax over an empty list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
  return acc;
}

std::size_t resolve(const Corpus& corpus, const std::string& id) {
  const auto v = corpus.index_of(id);
  if (!v) throw InputError("task refers to unknown video '" + id + "'");
  return *v;
}

VideoSpan to_span(const Corpus& corpus, const TaskSpan& s) {
  return {resolve(corpus, s.video_id), s.start_s, s.end_s};
}

// Batched encoding is not bit-identical across batch rows (GEMM tail kernels
// round differently), so duplicated inputs are embedded once and shared. That
// keeps exact ties exact and the lowest-index rule meaningful.
template <typename T, typename Key>
std::vector<std::size_t> dedupe(std::vector<T>& items, Key key) {
  std::map<decltype(key(items[0])), std::size_t> seen;
  std::vector<T> unique;
  std::vector<std::size_t> slot;
  slot.reserve(items.size());
  for (auto& item : items) {
    const auto [it, fresh] = seen.try_emplace(key(item), unique.size());
    if (fresh) unique.push_back(std::move(item));
    slot.push_back(it->second);
  }
  items = std::move(unique);
  return slot;
}

std::vector<std::size_t> dedupe_spans(std::vector<VideoSpan>& spans) {
  return dedupe(spans, [](const VideoSpan& s) { return std::tuple(s.video, s.start_s, s.end_s); });
}

std::vector<std::size_t> dedupe_texts(std::vector<std::vector<int>>& texts) {
  return dedupe(texts, [](const std::vector<int>& t) { return t; });
}

Tensor<float> gather(const Tensor<float>& unique, std::span<const std::size_t> slot) {
  Tensor<float> out = Tensor<float>::matrix(slot.size(), unique.cols());
  for (std::size_t i = 0; i < slot.size(); ++i) {
    const auto src = unique.row(slot[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

RecallAtK recall_at_k(const Tensor<float>& queries, const Tensor<float>& candidates,
                      std::span<const std::size_t> gold) {
  if (candidates.rows() == 0 || candidates.empty()) {
    throw InputError("recall_at_k: empty candidate list");
  }
  if (gold.size() != queries.rows()) throw InputError("recall_at_k: gold count mismatch");
  RecallAtK r;
  r.queries = gold.size();
  if (r.queries == 0) return r;
  std::vector<std::size_t> ranks(gold.size());
  parallel_for(gold.size(), [&](std::size_t q) {
    std::vector<double> scores(candidates.rows());
    for (std::size_t c = 0; c < candidates.rows(); ++c) {
      scores[c] = dot(queries.row(q), candidates.row(c));
    }
    const auto order = rank_by_score(scores);
    ranks[q] = static_cast<std::size_t>(std::find(order.begin(), order.end(), gold[q]) -
                                        order.begin());
  });
  for (std::size_t rank : ranks) {
    r.r1 += rank < 1;
    r.r5 += rank < 5;
    r.r10 += rank < 10;
  }
  const double n = double(r.queries);
  r.r1 /= n;
  r.r5 /= n;
  r.r10 /= n;
  return r;
}

RecallAtK eval_retrieval(const RetrievalTask& task, const Corpus& corpus,
                         const EncoderParams<float>& params) {
  task.validate();
  std::vector<VideoSpan> spans;
  for (const auto& c : task.candidates) spans.push_back(to_span(corpus, c));
  std::vector<std::vector<int>> texts;
  std::vector<std::size_t> gold;
  for (const auto& q : task.queries) {
    texts.push_back(q.tokens);
    gold.push_back(q.gold);
  }
  if (texts.empty()) return RecallAtK{};
  const auto span_slot = dedupe_spans(spans);
  const auto text_slot = dedupe_texts(texts);
  const Tensor<float> zv = gather(embed_videos<float>(spans, corpus, params), span_slot);
  const Tensor<float> zt = gather(embed_texts<float>(std::span(texts), params), text_slot);
  return recall_at_k(zt, zv, gold);
}

double eval_qa(const QATask& task, const Corpus& corpus, const EncoderParams<float>& params) {
  task.validate();
  if (task.items.empty()) return 0.0;
  std::vector<VideoSpan> spans;
  std::vector<std::vector<int>> answers;
  for (const auto& item : task.items) {
    spans.push_back(to_span(corpus, item.video));
    answers.insert(answers.end(), item.answers.begin(), item.answers.end());
  }
  const auto span_slot = dedupe_spans(spans);
  const auto answer_slot = dedupe_texts(answers);
  const Tensor<float> zv = gather(embed_videos<float>(spans, corpus, params), span_slot);
  const Tensor<float> za = gather(embed_texts<float>(std::span(answers), params), answer_slot);
  std::size_t correct = 0, offset = 0;
  for (std::size_t i = 0; i < task.items.size(); ++i) {
    const auto& item = task.items[i];
    std::vector<double> scores;
    for (std::size_t a = 0; a < item.answers.size(); ++a) {
      scores.push_back(dot(zv.row(i), za.row(offset + a)));
    }
    offset += item.answers.size();
    correct += argmax_lowest(scores) == item.gold;
  }
  return double(correct) / double(task.items.size());
}

double estimate_gamma(const Tensor<float>& e) {
  if (e.rows() < 2 || e.rank() != 2) {
    throw InputError("estimate_gamma: need at least 2 labels");
  }
  double gamma = -INFINITY;
  for (std::size_t i = 0; i < e.rows(); ++i) {
    for (std::size_t j = i + 1; j < e.rows(); ++j) gamma = std::max(gamma, dot(e.row(i), e.row(j)));
  }
  return gamma;
}

LabelSet make_label_set(std::span<const std::vector<int>> labels,
                        const EncoderParams<float>& params) {
  if (labels.size() < 2) throw InputError("label set needs at least 2 labels");
  LabelSet set;
  set.embeddings = encode_labels<float>(labels, params);
  set.gamma = estimate_gamma(set.embeddings);
  return set;
}

std::vector<double> window_starts(double duration_s, const WindowOptions& o) {
  if (!(o.window_s > 0.0) || !(o.stride_s > 0.0)) {
    throw ConfigError("window and stride must be positive");
  }
  std::vector<double> starts{0.0};
  while (starts.back() + o.window_s < duration_s) {
    const double next = starts.back() + o.stride_s;
    if (next + o.window_s >= duration_s) {
      starts.push_back(std::max(0.0, duration_s - o.window_s));
      break;
    }
    starts.push_back(next);
  }
  return starts;
}

Tensor<float> second_logits(std::size_t video, const Corpus& corpus,
                            const EncoderParams<float>& params, const Tensor<float>& queries,
                            const WindowOptions& options) {
  const auto& rec = corpus.video(video);
  const std::size_t T = rec.token_count();
  const std::size_t n = queries.rows();
  std::vector<VideoSpan> spans;
  for (double s : window_starts(rec.duration_s, options)) {
    spans.push_back({video, s, std::min(s + options.window_s, rec.duration_s)});
  }

  Graph<float> g;
  const auto vars = bind_params(g, params, false);
  std::vector<RowRange> clips;
  std::vector<RowRange> sources;
  for (const auto& s : spans) {
    sources.push_back(feature_rows(rec, s.start_s, s.end_s, params.config.max_video_tokens));
  }
  const Var feats = g.constant(
      pack_features<float>(corpus, spans, params.config.max_video_tokens, clips));
  const auto enc = encode_video_batch(g, params, vars, feats, clips);
  const auto& states = g.value(enc.token_states);

  std::vector<double> sum(T * n, 0.0);
  std::vector<std::size_t> hits(T, 0);
  for (std::size_t w = 0; w < spans.size(); ++w) {
    for (std::size_t i = 0; i < sources[w].count; ++i) {
      const std::size_t second = sources[w].begin + i;
      const auto h = states.row(enc.content[w].begin + i);
      for (std::size_t l = 0; l < n; ++l) sum[second * n + l] += dot(h, queries.row(l));
      ++hits[second];
    }
  }
  Tensor<float> logits = Tensor<float>::matrix(T, n);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t l = 0; l < n; ++l) {
      logits.at(t, l) = hits[t] ? static_cast<float>(sum[t * n + l] / double(hits[t])) : 0.0f;
    }
  }
  return logits;
}

std::vector<int> reject_decode(const Tensor<float>& logits, double gamma) {
  std::vector<int> out;
  out.reserve(logits.rows());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    const auto row = logits.row(t);
    std::vector<double> scores(row.begin(), row.end());
    const std::size_t best = argmax_lowest(scores);
    out.push_back(scores[best] > gamma ? static_cast<int>(best) : kOutside);
  }
  return out;
}

std::vector<int> segment_video(std::size_t video, const Corpus& corpus, const LabelSet& labels,
                               const EncoderParams<float>& params, const WindowOptions& options) {
  if (labels.embeddings.rows() < 2) throw InputError("segment_video: need at least 2 labels");
  return reject_decode(second_logits(video, corpus, params, labels.embeddings, options),
                       labels.gamma);
}

Tensor<float> step_distribution(const Tensor<float>& logits) {
  Tensor<float> out(logits.dims());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    const auto row = logits.row(t);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (float x : row) z += std::exp(double(x) - mx);
    for (std::size_t s = 0; s < row.size(); ++s) {
      out.at(t, s) = static_cast<float>(std::exp(double(row[s]) - mx) / z);
    }
  }
  return out;
}

Tensor<float> localize_steps(std::size_t video, const Corpus& corpus,
                             std::span<const std::vector<int>> steps,
                             const EncoderParams<float>& params, const WindowOptions& options) {
  if (steps.empty()) throw InputError("localize_steps: no steps");
  const Tensor<float> zs = encode_labels<float>(steps, params);
  return step_distribution(second_logits(video, corpus, params, zs, options));
}

std::vector<std::size_t> predicted_step_times(const Tensor<float>& distribution) {
  std::vector<std::size_t> times;
  for (std::size_t s = 0; s < distribution.cols(); ++s) {
    std::vector<double> column;
    for (std::size_t t = 0; t < distribution.rows(); ++t) column.push_back(distribution.at(t, s));
    times.push_back(argmax_lowest(column));
  }
  return times;
}

double frame_accuracy(std::span<const int> gold, std::span<const int> pred, bool include_outside) {
  if (gold.size() != pred.size()) throw InputError("frame_accuracy: length mismatch");
  std::size_t counted = 0, correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!include_outside && gold[i] == kOutside) continue;
    ++counted;
    correct += gold[i] == pred[i];
  }
  return counted ? double(correct) / double(counted) : 0.0;
}

double outside_recall(std::span<const int> gold, std::span<const int> pred) {
  if (gold.size() != pred.size()) throw InputError("outside_recall: length mismatch");
  std::size_t outside = 0, hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] != kOutside) continue;
    ++outside;
    hit += pred[i] == kOutside;
  }
  return outside ? double(hit) / double(outside) : 0.0;
}

double average_step_recall(std::span<const std::vector<int>> gold,
                           std::span<const std::vector<std::size_t>> predicted_times) {
  if (gold.size() != predicted_times.size()) {
    throw InputError("average_step_recall: video count mismatch");
  }
  double total = 0.0;
  std::size_t videos = 0;
  for (std::size_t v = 0; v < gold.size(); ++v) {
    std::size_t annotated = 0, hits = 0;
    for (std::size_t s = 0; s < predicted_times[v].size(); ++s) {
      const int step = static_cast<int>(s);
      if (std::find(gold[v].begin(), gold[v].end(), step) == gold[v].end()) continue;
      ++annotated;
      const std::size_t t = predicted_times[v][s];
      hits += t < gold[v].size() && gold[v][t] == step;
    }
    if (annotated == 0) continue;
    total += double(hits) / double(annotated);
    ++videos;
  }
  return videos ? total / double(videos) : 0.0;
}

SegmentationMetrics eval_segmentation(const SegmentationTask& task, const Corpus& corpus,
                                      const EncoderParams<float>& params) {
  task.validate();
  const LabelSet labels = make_label_set(task.labels, params);
  std::vector<std::vector<int>> preds(task.videos.size());
  parallel_for(task.videos.size(), [&](std::size_t i) {
    preds[i] = segment_video(resolve(corpus, task.videos[i].video_id), corpus, labels, params);
  });
  std::vector<int> gold_all, pred_all;
  for (std::size_t i = 0; i < task.videos.size(); ++i) {
    if (preds[i].size() != task.videos[i].gold.size()) {
      throw InputError("segmentation gold length differs from video " + task.videos[i].video_id);
    }
    gold_all.insert(gold_all.end(), task.videos[i].gold.begin(), task.videos[i].gold.end());
    pred_all.insert(pred_all.end(), preds[i].begin(), preds[i].end());
  }
  SegmentationMetrics m;
  m.frame_accuracy = frame_accuracy(gold_all, pred_all, true);
  m.seen_accuracy = frame_accuracy(gold_all, pred_all, false);
  m.outside_recall = outside_recall(gold_all, pred_all);
  m.gamma = labels.gamma;
  return m;
}

double eval_localization(const StepTask& task, const Corpus& corpus,
                         const EncoderParams<float>& params) {
  task.validate();
  std::vector<std::vector<std::size_t>> times(task.videos.size());
  parallel_for(task.videos.size(), [&](std::size_t i) {
    const auto& v = task.videos[i];
    times[i] = predicted_step_times(
        localize_steps(resolve(corpus, v.video_id), corpus, v.steps, params));
  });
  std::vector<std::vector<int>> gold;
  for (const auto& v : task.videos) gold.push_back(v.gold);
  return average_step_recall(gold, times);
}

nlohmann::json metrics_document(const std::string& task, const std::map<std::string, double>& values,
                                const std::string& config_hash, const std::string& checkpoint_hash) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& [metric, value] : values) {
    records.push_back({{"task", task},
                       {"metric", metric},
                       {"value", value},
                       {"config_hash", config_hash},
                       {"checkpoint_hash", checkpoint_hash}});
  }
  return records;
}

}  // namespace vclip
