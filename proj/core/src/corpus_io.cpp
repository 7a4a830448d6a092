#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vclip/corpus.hpp"
#include "vclip/errors.hpp"
#include "vclip/hash.hpp"

namespace vclip {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr char kFeatureMagic[4] = {'V', 'C', 'L', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;
constexpr int kManifestVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string(), 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("short write to " + path.string());
}

json parse_json(const std::string& text, const std::string& file, std::uint64_t base_offset) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(file, base_offset + (e.byte > 0 ? e.byte - 1 : 0), e.what());
  }
}

template <typename Fn>
void for_each_line(const std::string& text, Fn&& fn) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    if (end > pos) fn(text.substr(pos, end - pos), pos);
    pos = end + 1;
  }
}

}  // namespace

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "vclip-corpus";
  manifest["version"] = kManifestVersion;
  manifest["d_feat"] = corpus.d_feat();
  manifest["vocab_size"] = corpus.vocab_size();
  manifest["config"] = corpus.config_echo();
  json videos = json::array();
  for (const auto& v : corpus.videos()) {
    videos.push_back({{"video_id", v.video_id},
                      {"duration_s", v.duration_s},
                      {"tokens", v.token_count()}});
  }
  manifest["videos"] = std::move(videos);
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  std::string features(kFeatureMagic, 4);
  features.append(reinterpret_cast<const char*>(&kFeatureVersion), 4);
  for (const auto& v : corpus.videos()) {
    features.append(reinterpret_cast<const char*>(v.features.data()),
                    v.features.numel() * sizeof(float));
  }
  write_file(dir / "features.bin", features);

  std::string transcript;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (const auto& u : corpus.utterances(i)) {
      json line{{"video_id", u.video_id},
                {"start_s", u.start_s},
                {"end_s", u.end_s},
                {"tokens", u.tokens}};
      transcript += line.dump() + "\n";
    }
  }
  write_file(dir / "transcript.jsonl", transcript);
}

Corpus load_corpus(const fs::path& dir) {
  const std::string manifest_file = (dir / "manifest.json").string();
  const json manifest = parse_json(read_file(dir / "manifest.json"), manifest_file, 0);
  if (!manifest.is_object() || manifest.value("format", "") != "vclip-corpus") {
    throw FormatError(manifest_file, 0, "not a vclip corpus manifest");
  }
  if (manifest.value("version", -1) != kManifestVersion) {
    throw FormatError(manifest_file, 0, "unsupported manifest version");
  }
  std::size_t d_feat = 0, vocab = 0;
  try {
    d_feat = manifest.at("d_feat").get<std::size_t>();
    vocab = manifest.at("vocab_size").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(manifest_file, 0, e.what());
  }
  Corpus corpus(d_feat, vocab, manifest.value("config", json::object()));

  const std::string features_file = (dir / "features.bin").string();
  const std::string features = read_file(dir / "features.bin");
  if (features.size() < 8) throw FormatError(features_file, features.size(), "truncated header");
  for (std::size_t i = 0; i < 4; ++i) {
    if (features[i] != kFeatureMagic[i]) throw FormatError(features_file, i, "bad magic");
  }
  std::uint32_t version = 0;
  std::memcpy(&version, features.data() + 4, 4);
  if (version != kFeatureVersion) {
    throw FormatError(features_file, 4, "unsupported version " + std::to_string(version));
  }

  const std::string transcript_file = (dir / "transcript.jsonl").string();
  std::vector<std::vector<Utterance>> transcripts;
  std::vector<std::string> ids;
  const json& videos = manifest.at("videos");
  for (const auto& v : videos) ids.push_back(v.at("video_id").get<std::string>());
  transcripts.resize(ids.size());
  std::size_t cursor = 0;
  for_each_line(read_file(dir / "transcript.jsonl"), [&](const std::string& line, std::size_t off) {
    const json j = parse_json(line, transcript_file, off);
    Utterance u;
    try {
      u.video_id = j.at("video_id").get<std::string>();
      u.start_s = j.at("start_s").get<double>();
      u.end_s = j.at("end_s").get<double>();
      u.tokens = j.at("tokens").get<std::vector<int>>();
    } catch (const json::exception& e) {
      throw FormatError(transcript_file, off, e.what());
    }
    while (cursor < ids.size() && ids[cursor] != u.video_id) ++cursor;
    if (cursor == ids.size()) {
      throw FormatError(transcript_file, off,
                        "utterance for unknown or out-of-order video " + u.video_id);
    }
    transcripts[cursor].push_back(std::move(u));
  });

  std::size_t offset = 8;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const json& v = videos[i];
    VideoRecord record;
    record.video_id = ids[i];
    record.duration_s = v.at("duration_s").get<double>();
    const auto tokens = v.at("tokens").get<std::size_t>();
    if (tokens != static_cast<std::size_t>(std::floor(record.duration_s)) || tokens == 0) {
      throw FormatError(manifest_file, 0,
                        record.video_id + ": token count disagrees with duration");
    }
    const std::size_t bytes = tokens * d_feat * sizeof(float);
    if (offset + bytes > features.size()) {
      throw FormatError(features_file, features.size(),
                        "truncated: " + record.video_id + " needs bytes up to " +
                            std::to_string(offset + bytes));
    }
    record.features = Tensor<float>::matrix(tokens, d_feat);
    std::memcpy(record.features.data(), features.data() + offset, bytes);
    offset += bytes;
    try {
      corpus.add_video(std::move(record), std::move(transcripts[i]));
    } catch (const Error& e) {
      throw FormatError(transcript_file, 0, e.what());
    }
  }
  if (offset != features.size()) {
    throw FormatError(features_file, offset,
                      "trailing bytes: manifest accounts for " + std::to_string(offset) +
                          " of " + std::to_string(features.size()));
  }
  return corpus;
}

void save_annotations(const TopicAnnotations& truth, const fs::path& dir) {
  fs::create_directories(dir);
  std::string text = json{{"kind", "header"},
                          {"n_topics", truth.n_topics},
                          {"tokens_per_topic", truth.tokens_per_topic},
                          {"speech_lag_s", truth.speech_lag_s}}
                         .dump() +
                     "\n";
  for (const auto& v : truth.videos) {
    text += json{{"kind", "video"},
                 {"video_id", v.video_id},
                 {"steps", v.steps},
                 {"topic_track", v.topic_track},
                 {"utterance_topics", v.utterance_topics}}
                .dump() +
            "\n";
  }
  write_file(dir / "topics.jsonl", text);
}

TopicAnnotations load_annotations(const fs::path& dir) {
  const std::string file = (dir / "topics.jsonl").string();
  TopicAnnotations truth;
  bool header = false;
  for_each_line(read_file(dir / "topics.jsonl"), [&](const std::string& line, std::size_t off) {
    const json j = parse_json(line, file, off);
    try {
      if (j.at("kind") == "header") {
        truth.n_topics = j.at("n_topics").get<std::size_t>();
        truth.tokens_per_topic = j.at("tokens_per_topic").get<std::size_t>();
        truth.speech_lag_s = j.at("speech_lag_s").get<double>();
        header = true;
      } else {
        VideoTruth v;
        v.video_id = j.at("video_id").get<std::string>();
        v.steps = j.at("steps").get<std::vector<int>>();
        v.topic_track = j.at("topic_track").get<std::vector<int>>();
        v.utterance_topics = j.at("utterance_topics").get<std::vector<int>>();
        truth.videos.push_back(std::move(v));
      }
    } catch (const json::exception& e) {
      throw FormatError(file, off, e.what());
    }
  });
  if (!header) throw FormatError(file, 0, "missing header line");
  return truth;
}

std::string corpus_hash(const fs::path& dir) {
  return hash_files(dir, {"manifest.json", "features.bin", "transcript.jsonl"});
}

}  // namespace vclip
