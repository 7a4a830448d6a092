#include "vclip/tasks.hpp"

#include <algorithm>
#include <fstream>

#include "vclip/errors.hpp"
#include "vclip/rng.hpp"
#include "vclip/sampler.hpp"

namespace vclip {

void RetrievalTask::validate() const {
  if (candidates.empty()) throw InputError("retrieval task: empty candidate list");
  for (const auto& q : queries) {
    if (q.gold >= candidates.size()) throw InputError("retrieval task: gold index out of range");
  }
}

void QATask::validate() const {
  for (const auto& item : items) {
    if (item.answers.empty()) throw InputError("qa task: item without answers");
    if (item.gold >= item.answers.size()) throw InputError("qa task: gold index out of range");
  }
}

void SegmentationTask::validate() const {
  if (labels.size() < 2) throw InputError("segmentation task: need at least 2 labels");
  for (const auto& v : videos) {
    for (int g : v.gold) {
      if (g != kOutside && (g < 0 || static_cast<std::size_t>(g) >= labels.size())) {
        throw InputError("segmentation task: gold label out of range in " + v.video_id);
      }
    }
  }
}

void StepTask::validate() const {
  for (const auto& v : videos) {
    if (v.steps.empty()) throw InputError("step task: video " + v.video_id + " has no steps");
    for (int g : v.gold) {
      if (g != kOutside && (g < 0 || static_cast<std::size_t>(g) >= v.steps.size())) {
        throw InputError("step task: gold step out of range in " + v.video_id);
      }
    }
  }
}

namespace {

std::vector<std::vector<int>> topic_texts(const TopicAnnotations& truth, std::size_t n_tokens,
                                          std::uint64_t seed) {
  std::vector<std::vector<int>> texts;
  for (std::size_t t = 0; t < truth.n_topics; ++t) {
    Rng rng(derive_seed(seed, {stream_id("tasks.label"), t}));
    const auto [first, count] = truth.topic_vocabulary(static_cast<int>(t));
    std::vector<int> tokens;
    for (std::size_t i : rng.sample_without_replacement(
             static_cast<std::size_t>(count), std::min<std::size_t>(n_tokens, count))) {
      tokens.push_back(first + static_cast<int>(i));
    }
    texts.push_back(std::move(tokens));
  }
  return texts;
}

std::vector<std::size_t> pick_videos(std::size_t n, std::size_t want, Rng& rng) {
  auto picked = rng.sample_without_replacement(n, std::min(n, want));
  std::sort(picked.begin(), picked.end());
  return picked;
}

}  // namespace

TaskSet make_tasks(const Corpus& corpus, const TopicAnnotations& truth,
                   const TaskOptions& options) {
  if (truth.videos.size() != corpus.size()) {
    throw InputError("make_tasks: annotations do not match the corpus");
  }
  if (options.held_out_topics + 2 > truth.n_topics) {
    throw ConfigError("make_tasks: need at least 2 labelled topics");
  }
  if (options.qa_answers < 2 || options.qa_answers > truth.n_topics) {
    throw ConfigError("make_tasks: qa_answers must lie in [2, n_topics]");
  }
  TaskSet out;
  const auto texts = topic_texts(truth, options.label_tokens, options.seed);
  const double lag = truth.speech_lag_s;

  // Retrieval: a transcript span per video; gold is the span it talks about.
  {
    Rng rng(derive_seed(options.seed, {stream_id("tasks.retrieval")}));
    SamplerConfig spans;
    spans.min_text_tokens = options.query_min_tokens;
    spans.max_text_tokens = options.query_max_tokens;
    std::vector<std::size_t> pool;
    for (std::size_t v = 0; v < corpus.size(); ++v) {
      if (!corpus.utterances(v).empty()) pool.push_back(v);
    }
    for (std::size_t i : pick_videos(pool.size(), options.retrieval_queries, rng)) {
      const std::size_t v = pool[i];
      const auto text = *sample_text_span(corpus, v, spans, rng);
      const auto& rec = corpus.video(v);
      const VideoSpan gold = place_video_span(v, 0.5 * (text.start_s + text.end_s) + lag,
                                              text.end_s - text.start_s, rec.duration_s);
      out.retrieval.candidates.push_back({rec.video_id, gold.start_s, gold.end_s});
      out.retrieval.queries.push_back({{rec.video_id, text.start_s, text.end_s},
                                       text.tokens,
                                       out.retrieval.candidates.size() - 1});
    }
  }

  // QA: a single-topic segment; answers are topic texts, one of them correct.
  {
    Rng rng(derive_seed(options.seed, {stream_id("tasks.qa")}));
    for (std::size_t i = 0; i < options.qa_items; ++i) {
      const auto v = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(corpus.size()) - 1));
      const auto& track = truth.videos[v].topic_track;
      const auto s = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(track.size()) - 1));
      std::size_t a = s, b = s + 1;
      while (a > 0 && track[a - 1] == track[s]) --a;
      while (b < track.size() && track[b] == track[s]) ++b;
      const int topic = track[s];

      QAItem item;
      item.video = {corpus.video(v).video_id, double(a), double(b)};
      std::vector<std::size_t> others;
      for (std::size_t t = 0; t < truth.n_topics; ++t) {
        if (static_cast<int>(t) != topic) others.push_back(t);
      }
      std::vector<std::size_t> chosen;
      for (std::size_t j : rng.sample_without_replacement(others.size(), options.qa_answers - 1)) {
        chosen.push_back(others[j]);
      }
      item.gold = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(options.qa_answers) - 1));
      chosen.insert(chosen.begin() + static_cast<std::ptrdiff_t>(item.gold),
                    static_cast<std::size_t>(topic));
      for (std::size_t t : chosen) item.answers.push_back(texts[t]);
      out.qa.items.push_back(std::move(item));
    }
  }

  // Segmentation: labels for all but the held-out topics.
  const std::size_t labelled = truth.n_topics - options.held_out_topics;
  {
    Rng rng(derive_seed(options.seed, {stream_id("tasks.segmentation")}));
    out.segmentation.labels.assign(texts.begin(), texts.begin() + static_cast<std::ptrdiff_t>(labelled));
    for (std::size_t v : pick_videos(corpus.size(), options.segmentation_videos, rng)) {
      SegmentationVideo sv;
      sv.video_id = corpus.video(v).video_id;
      for (int t : truth.videos[v].topic_track) {
        sv.gold.push_back(static_cast<std::size_t>(t) < labelled ? t : kOutside);
      }
      out.segmentation.videos.push_back(std::move(sv));
    }
  }

  // Steps: the video's topic order; every second of a topic belongs to its step.
  {
    Rng rng(derive_seed(options.seed, {stream_id("tasks.steps")}));
    for (std::size_t v : pick_videos(corpus.size(), options.step_videos, rng)) {
      const auto& vt = truth.videos[v];
      StepVideo sv;
      sv.video_id = vt.video_id;
      for (int t : vt.steps) sv.steps.push_back(texts[static_cast<std::size_t>(t)]);
      for (int t : vt.topic_track) {
        const auto it = std::find(vt.steps.begin(), vt.steps.end(), t);
        sv.gold.push_back(it == vt.steps.end() ? kOutside
                                                : static_cast<int>(it - vt.steps.begin()));
      }
      out.steps.videos.push_back(std::move(sv));
    }
  }
  return out;
}

namespace {

using nlohmann::json;

json span_json(const TaskSpan& s) {
  return json{{"video_id", s.video_id}, {"start_s", s.start_s}, {"end_s", s.end_s}};
}

TaskSpan span_from(const json& j) {
  return {j.at("video_id").get<std::string>(), j.at("start_s").get<double>(),
          j.at("end_s").get<double>()};
}

void write_lines(const std::filesystem::path& path, const std::vector<json>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& l : lines) out << l.dump() << '\n';
}

template <typename Fn>
void read_lines(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      try {
        fn(json::parse(line));
      } catch (const json::exception& e) {
        throw FormatError(path.string(), offset, e.what());
      }
    }
    offset += line.size() + 1;
  }
}

}  // namespace

void save_tasks(const TaskSet& tasks, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::vector<json> lines;
    for (const auto& q : tasks.retrieval.queries) {
      lines.push_back({{"kind", "query"}, {"span", span_json(q.span)}, {"tokens", q.tokens},
                       {"gold", q.gold}});
    }
    for (const auto& c : tasks.retrieval.candidates) {
      lines.push_back({{"kind", "candidate"}, {"span", span_json(c)}});
    }
    write_lines(dir / "retrieval.jsonl", lines);
  }
  {
    std::vector<json> lines;
    for (const auto& item : tasks.qa.items) {
      lines.push_back({{"video", span_json(item.video)}, {"answers", item.answers},
                       {"gold", item.gold}});
    }
    write_lines(dir / "qa.jsonl", lines);
  }
  {
    json videos = json::array();
    for (const auto& v : tasks.segmentation.videos) {
      videos.push_back({{"video_id", v.video_id}, {"gold", v.gold}});
    }
    std::ofstream out(dir / "labels.json", std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write labels.json");
    out << json{{"labels", tasks.segmentation.labels}, {"videos", videos}}.dump() << '\n';
  }
  {
    std::vector<json> lines;
    for (const auto& v : tasks.steps.videos) {
      lines.push_back({{"video_id", v.video_id}, {"steps", v.steps}, {"gold", v.gold}});
    }
    write_lines(dir / "steps.jsonl", lines);
  }
}

RetrievalTask load_retrieval_task(const std::filesystem::path& file) {
  RetrievalTask task;
  read_lines(file, [&](const json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "query") {
      task.queries.push_back({span_from(j.at("span")), j.at("tokens").get<std::vector<int>>(),
                              j.at("gold").get<std::size_t>()});
    } else if (kind == "candidate") {
      task.candidates.push_back(span_from(j.at("span")));
    } else {
      throw InputError(file.string() + ": unknown line kind '" + kind + "'");
    }
  });
  task.validate();
  return task;
}

QATask load_qa_task(const std::filesystem::path& file) {
  QATask task;
  read_lines(file, [&](const json& j) {
    task.items.push_back({span_from(j.at("video")),
                          j.at("answers").get<std::vector<std::vector<int>>>(),
                          j.at("gold").get<std::size_t>()});
  });
  task.validate();
  return task;
}

SegmentationTask load_segmentation_task(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot open " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(file.string(), e.byte, e.what());
  }
  SegmentationTask task;
  task.labels = j.at("labels").get<std::vector<std::vector<int>>>();
  for (const auto& v : j.at("videos")) {
    task.videos.push_back({v.at("video_id").get<std::string>(), v.at("gold").get<std::vector<int>>()});
  }
  task.validate();
  return task;
}

StepTask load_step_task(const std::filesystem::path& file) {
  StepTask task;
  read_lines(file, [&](const json& j) {
    task.videos.push_back({j.at("video_id").get<std::string>(),
                           j.at("steps").get<std::vector<std::vector<int>>>(),
                           j.at("gold").get<std::vector<int>>()});
  });
  task.validate();
  return task;
}

}  // namespace vclip
