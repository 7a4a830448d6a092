#include "vclip/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "vclip/errors.hpp"
#include "vclip/parallel.hpp"
#include "vclip/rng.hpp"

namespace vclip {

Pooling parse_pooling(const std::string& s) {
  if (s == "avg") return Pooling::avg;
  if (s == "cls") return Pooling::cls;
  throw ConfigError("unknown pooling '" + s + "'");
}

std::string to_string(Pooling p) { return p == Pooling::avg ? "avg" : "cls"; }

void EncoderConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("encoder: d_model must be a positive multiple of n_heads");
  }
  if (n_layers_video == 0 || n_layers_text == 0) throw ConfigError("encoder: need >= 1 layer");
  if (shared_encoder && n_layers_video > n_layers_text) {
    throw ConfigError("encoder: shared_encoder needs n_layers_video <= n_layers_text");
  }
  if (ffn_mult == 0 || d_feat == 0 || vocab_size == 0) {
    throw ConfigError("encoder: ffn_mult, d_feat and vocab_size must be positive");
  }
  if (max_video_tokens == 0 || max_text_tokens < 3) {
    throw ConfigError("encoder: max_video_tokens >= 1 and max_text_tokens >= 3 required");
  }
  if (max_positions < max_video_tokens + 2 || max_positions < max_text_tokens) {
    throw ConfigError("encoder: max_positions too small for the sequence limits");
  }
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},
                     {"n_layers_video", c.n_layers_video},
                     {"n_layers_text", c.n_layers_text},
                     {"n_heads", c.n_heads},
                     {"ffn_mult", c.ffn_mult},
                     {"d_feat", c.d_feat},
                     {"vocab_size", c.vocab_size},
                     {"max_video_tokens", c.max_video_tokens},
                     {"max_text_tokens", c.max_text_tokens},
                     {"max_positions", c.max_positions},
                     {"shared_encoder", c.shared_encoder},
                     {"pooling", to_string(c.pooling)}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  const EncoderConfig d;
  c.d_model = j.value("d_model", d.d_model);
  c.n_layers_video = j.value("n_layers_video", d.n_layers_video);
  c.n_layers_text = j.value("n_layers_text", d.n_layers_text);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.ffn_mult = j.value("ffn_mult", d.ffn_mult);
  c.d_feat = j.value("d_feat", d.d_feat);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_video_tokens = j.value("max_video_tokens", d.max_video_tokens);
  c.max_text_tokens = j.value("max_text_tokens", d.max_text_tokens);
  c.max_positions = j.value("max_positions", d.max_positions);
  c.shared_encoder = j.value("shared_encoder", d.shared_encoder);
  c.pooling = parse_pooling(j.value("pooling", to_string(d.pooling)));
}

namespace {

enum class Init { normal, ones, zeros };

struct Spec {
  std::string name;
  Shape dims;
  Init init;
};

struct Builder {
  std::vector<Spec> specs;
  std::size_t add(std::string name, Shape dims, Init init) {
    specs.push_back({std::move(name), std::move(dims), init});
    return specs.size() - 1;
  }
};

LayerSlots add_layer(Builder& b, const std::string& prefix, std::size_t d, std::size_t ffn) {
  LayerSlots s{};
  s.ln1_g = b.add(prefix + ".ln1.gamma", {d}, Init::ones);
  s.ln1_b = b.add(prefix + ".ln1.beta", {d}, Init::zeros);
  s.wq = b.add(prefix + ".attn.wq", {d, d}, Init::normal);
  s.bq = b.add(prefix + ".attn.bq", {d}, Init::zeros);
  s.wk = b.add(prefix + ".attn.wk", {d, d}, Init::normal);
  s.bk = b.add(prefix + ".attn.bk", {d}, Init::zeros);
  s.wv = b.add(prefix + ".attn.wv", {d, d}, Init::normal);
  s.bv = b.add(prefix + ".attn.bv", {d}, Init::zeros);
  s.wo = b.add(prefix + ".attn.wo", {d, d}, Init::normal);
  s.bo = b.add(prefix + ".attn.bo", {d}, Init::zeros);
  s.ln2_g = b.add(prefix + ".ln2.gamma", {d}, Init::ones);
  s.ln2_b = b.add(prefix + ".ln2.beta", {d}, Init::zeros);
  s.w1 = b.add(prefix + ".ffn.w1", {d, ffn}, Init::normal);
  s.b1 = b.add(prefix + ".ffn.b1", {ffn}, Init::zeros);
  s.w2 = b.add(prefix + ".ffn.w2", {ffn, d}, Init::normal);
  s.b2 = b.add(prefix + ".ffn.b2", {d}, Init::zeros);
  return s;
}

std::pair<ParamLayout, std::vector<Spec>> build_layout(const EncoderConfig& c) {
  c.validate();
  Builder b;
  ParamLayout l;
  const std::size_t d = c.d_model;
  l.mlp_w1 = b.add("video.mlp.w1", {c.d_feat, d}, Init::normal);
  l.mlp_b1 = b.add("video.mlp.b1", {d}, Init::zeros);
  l.mlp_w2 = b.add("video.mlp.w2", {d, d}, Init::normal);
  l.mlp_b2 = b.add("video.mlp.b2", {d}, Init::zeros);
  l.video_pos = b.add("video.pos", {c.max_positions, d}, Init::normal);
  l.video_cls = b.add("video.cls", {1, d}, Init::normal);
  l.video_sep = b.add("video.sep", {1, d}, Init::normal);
  l.text_embed = b.add("text.embed", {c.vocab_size, d}, Init::normal);
  l.text_pos = b.add("text.pos", {c.max_positions, d}, Init::normal);
  l.text_cls = b.add("text.cls", {1, d}, Init::normal);
  l.text_sep = b.add("text.sep", {1, d}, Init::normal);
  for (std::size_t i = 0; i < c.n_layers_text; ++i) {
    l.text_layers.push_back(add_layer(b, "text.layer" + std::to_string(i), d, c.ffn_mult * d));
  }
  for (std::size_t i = 0; i < c.n_layers_video; ++i) {
    l.video_layers.push_back(c.shared_encoder
                                 ? l.text_layers[i]
                                 : add_layer(b, "video.layer" + std::to_string(i), d,
                                             c.ffn_mult * d));
  }
  return {std::move(l), std::move(b.specs)};
}

}  // namespace

template <typename T>
EncoderParams<T> EncoderParams<T>::zeros(const EncoderConfig& config) {
  auto [layout, specs] = build_layout(config);
  EncoderParams p;
  p.config = config;
  p.layout = std::move(layout);
  for (auto& s : specs) {
    p.names.push_back(s.name);
    p.tensors.emplace_back(s.dims, T{0});
  }
  return p;
}

template <typename T>
EncoderParams<T> EncoderParams<T>::init(const EncoderConfig& config, std::uint64_t seed) {
  auto [layout, specs] = build_layout(config);
  EncoderParams p;
  p.config = config;
  p.layout = std::move(layout);
  Rng rng(derive_seed(seed, {stream_id("encoder.init")}));
  for (auto& s : specs) {
    Tensor<T> t(s.dims, s.init == Init::ones ? T{1} : T{0});
    if (s.init == Init::normal) {
      for (auto& x : t.values()) x = static_cast<T>(0.02 * rng.normal());
    }
    p.names.push_back(s.name);
    p.tensors.push_back(std::move(t));
  }
  return p;
}

template <typename T>
std::size_t EncoderParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.numel();
  return n;
}

template <typename T>
std::vector<Var> bind_params(Graph<T>& g, const EncoderParams<T>& params, bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) vars.push_back(g.bind(t, requires_grad));
  return vars;
}

namespace {

template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  return ops::add_bias(g, ops::matmul(g, x, w), b);
}

// Pre-LN block: x + Attn(LN(x)), then + FFN(LN(.)).
template <typename T>
Var transformer_block(Graph<T>& g, std::span<const Var> p, const LayerSlots& s, Var x,
                      std::size_t heads, std::span<const RowRange> sequences) {
  Var xn = ops::layer_norm(g, x, p[s.ln1_g], p[s.ln1_b]);
  Var q = linear(g, xn, p[s.wq], p[s.bq]);
  Var k = linear(g, xn, p[s.wk], p[s.bk]);
  Var v = linear(g, xn, p[s.wv], p[s.bv]);
  Var a = ops::segment_attention(g, q, k, v, heads, sequences);
  Var h = ops::add(g, x, linear(g, a, p[s.wo], p[s.bo]));
  Var hn = ops::layer_norm(g, h, p[s.ln2_g], p[s.ln2_b]);
  Var f = linear(g, ops::gelu(g, linear(g, hn, p[s.w1], p[s.b1])), p[s.w2], p[s.b2]);
  return ops::add(g, h, f);
}

// Runs the stack over packed rows and pools each sequence.
template <typename T>
EncodedBatch finish(Graph<T>& g, const EncoderConfig& c, std::span<const Var> p,
                    const std::vector<LayerSlots>& layers, Var x, EncodedBatch out) {
  for (const auto& s : layers) x = transformer_block(g, p, s, x, c.n_heads, out.sequences);
  out.token_states = x;
  if (c.pooling == Pooling::avg) {
    out.pooled = ops::segment_mean_rows(g, x, std::span<const RowRange>(out.content));
  } else {
    std::vector<std::size_t> firsts;
    for (const auto& r : out.sequences) firsts.push_back(r.begin);
    out.pooled = ops::gather_rows(g, x, std::move(firsts));
  }
  return out;
}

}  // namespace

template <typename T>
EncodedBatch encode_video_batch(Graph<T>& g, const EncoderParams<T>& params,
                                std::span<const Var> p, Var features,
                                std::span<const RowRange> clips) {
  const auto& c = params.config;
  const auto& l = params.layout;
  if (clips.empty()) throw InputError("encode_video_batch: no clips");
  if (g.value(features).cols() != c.d_feat) {
    throw ShapeError("encode_video_batch: feature width " +
                     std::to_string(g.value(features).cols()) + " != d_feat " +
                     std::to_string(c.d_feat));
  }
  Var feats = ops::stop_gradient(g, features);
  Var h = ops::gelu(g, linear(g, feats, p[l.mlp_w1], p[l.mlp_b1]));
  Var tokens = linear(g, h, p[l.mlp_w2], p[l.mlp_b2]);

  // Rows 0 and 1 of the table are [CLS] and [SEP]; feature rows follow.
  const Var parts[] = {p[l.video_cls], p[l.video_sep], tokens};
  Var table = ops::concat_rows(g, std::span<const Var>(parts));

  EncodedBatch out;
  std::vector<std::size_t> rows, positions;
  for (const auto& clip : clips) {
    if (clip.count == 0 || clip.count > c.max_video_tokens) {
      throw InputError("encode_video_batch: clip with " + std::to_string(clip.count) +
                       " tokens (limit " + std::to_string(c.max_video_tokens) + ")");
    }
    const std::size_t begin = rows.size();
    rows.push_back(0);
    for (std::size_t i = 0; i < clip.count; ++i) rows.push_back(2 + clip.begin + i);
    rows.push_back(1);
    for (std::size_t i = 0; i < clip.count + 2; ++i) positions.push_back(i);
    out.sequences.push_back({begin, clip.count + 2});
    out.content.push_back({begin + 1, clip.count});
  }
  Var x = ops::gather_rows(g, table, std::move(rows));
  x = ops::add(g, x, ops::gather_rows(g, p[l.video_pos], std::move(positions)));
  return finish(g, c, p, l.video_layers, x, std::move(out));
}

template <typename T>
EncodedBatch encode_text_batch(Graph<T>& g, const EncoderParams<T>& params,
                               std::span<const Var> p,
                               std::span<const std::vector<int>> token_lists) {
  const auto& c = params.config;
  const auto& l = params.layout;
  if (token_lists.empty()) throw InputError("encode_text_batch: no sequences");
  const int cls = static_cast<int>(c.vocab_size);
  const int sep = cls + 1;
  const std::size_t limit = c.max_text_tokens - 2;

  EncodedBatch out;
  std::vector<int> ids;
  std::vector<std::size_t> positions;
  for (const auto& tokens : token_lists) {
    const std::size_t n = std::min(tokens.size(), limit);
    for (std::size_t i = 0; i < n; ++i) {
      if (tokens[i] < 0 || tokens[i] >= cls) {
        throw InputError("token id " + std::to_string(tokens[i]) + " outside vocabulary of " +
                         std::to_string(c.vocab_size));
      }
    }
    const std::size_t begin = ids.size();
    ids.push_back(cls);
    ids.insert(ids.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(n));
    ids.push_back(sep);
    for (std::size_t i = 0; i < n + 2; ++i) positions.push_back(i);
    out.sequences.push_back({begin, n + 2});
    // An empty text still needs one row to pool; [CLS] stands in.
    out.content.push_back(n > 0 ? RowRange{begin + 1, n} : RowRange{begin, 1});
  }
  const Var parts[] = {p[l.text_embed], p[l.text_cls], p[l.text_sep]};
  Var table = ops::concat_rows(g, std::span<const Var>(parts));
  Var x = ops::embedding_lookup(g, table, std::span<const int>(ids));
  x = ops::add(g, x, ops::gather_rows(g, p[l.text_pos], std::move(positions)));
  return finish(g, c, p, l.text_layers, x, std::move(out));
}

RowRange feature_rows(const VideoRecord& video, double start_s, double end_s,
                      std::size_t max_tokens) {
  const std::size_t total = video.token_count();
  if (total == 0) throw InputError("video " + video.video_id + " has no feature tokens");
  const double lo_d = std::floor(std::max(0.0, start_s));
  const double hi_d = std::floor(std::max(0.0, end_s));
  std::size_t lo = std::min(static_cast<std::size_t>(lo_d), total - 1);
  std::size_t hi = std::min(static_cast<std::size_t>(hi_d), total);
  if (hi <= lo) hi = lo + 1;
  std::size_t count = hi - lo;
  if (count > max_tokens) {
    lo += (count - max_tokens) / 2;
    count = max_tokens;
  }
  return {lo, count};
}

template <typename T>
Tensor<T> pack_features(const Corpus& corpus, std::span<const VideoSpan> spans,
                        std::size_t max_tokens, std::vector<RowRange>& clips) {
  clips.clear();
  std::vector<RowRange> sources;
  std::size_t rows = 0;
  for (const auto& s : spans) {
    const RowRange r = feature_rows(corpus.video(s.video), s.start_s, s.end_s, max_tokens);
    sources.push_back(r);
    clips.push_back({rows, r.count});
    rows += r.count;
  }
  const std::size_t d = corpus.d_feat();
  Tensor<T> packed = Tensor<T>::matrix(rows, d);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& f = corpus.video(spans[i].video).features;
    for (std::size_t r = 0; r < sources[i].count; ++r) {
      const auto src = f.row(sources[i].begin + r);
      std::copy(src.begin(), src.end(), packed.row(clips[i].begin + r).begin());
    }
  }
  return packed;
}

template <typename T>
PairEncoding encode_pairs(Graph<T>& g, const EncoderParams<T>& params, std::span<const Var> vars,
                          const Corpus& corpus, std::span<const ClipPair> pairs) {
  std::vector<VideoSpan> spans;
  std::vector<std::vector<int>> texts;
  spans.reserve(pairs.size());
  texts.reserve(pairs.size());
  for (const auto& p : pairs) {
    spans.push_back(p.video);
    texts.push_back(p.text.tokens);
  }
  std::vector<RowRange> clips;
  Var feats = g.constant(pack_features<T>(corpus, spans, params.config.max_video_tokens, clips));
  auto video = encode_video_batch(g, params, vars, feats, clips);
  auto text = encode_text_batch(g, params, vars, std::span<const std::vector<int>>(texts));
  return {video.pooled, text.pooled};
}

namespace {

template <typename T>
ClipEmbedding<T> single(const Graph<T>& g, const EncodedBatch& b) {
  const RowRange seq = b.sequences.front();
  const auto& states = g.value(b.token_states);
  Tensor<T> tokens = Tensor<T>::matrix(seq.count, states.cols());
  std::copy_n(states.data() + seq.begin * states.cols(), tokens.numel(), tokens.data());
  return {std::move(tokens), g.value(b.pooled).reshaped({states.cols()})};
}

constexpr std::size_t kChunk = 64;

}  // namespace

template <typename T>
ClipEmbedding<T> encode_video(const VideoSpan& span, const Corpus& corpus,
                              const EncoderParams<T>& params) {
  Graph<T> g;
  auto vars = bind_params(g, params, false);
  std::vector<RowRange> clips;
  Var feats = g.constant(
      pack_features<T>(corpus, std::span<const VideoSpan>(&span, 1), params.config.max_video_tokens,
                       clips));
  return single(g, encode_video_batch(g, params, vars, feats, clips));
}

template <typename T>
ClipEmbedding<T> encode_text(const TextSpan& span, const EncoderParams<T>& params) {
  Graph<T> g;
  auto vars = bind_params(g, params, false);
  return single(g, encode_text_batch(g, params, vars,
                                     std::span<const std::vector<int>>(&span.tokens, 1)));
}

template <typename T>
Tensor<T> embed_videos(std::span<const VideoSpan> spans, const Corpus& corpus,
                       const EncoderParams<T>& params) {
  const std::size_t d = params.config.d_model;
  Tensor<T> out = Tensor<T>::matrix(spans.size(), d);
  const std::size_t chunks = (spans.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t n = std::min(kChunk, spans.size() - begin);
    Graph<T> g;
    auto vars = bind_params(g, params, false);
    std::vector<RowRange> clips;
    Var feats = g.constant(pack_features<T>(corpus, spans.subspan(begin, n),
                                            params.config.max_video_tokens, clips));
    const auto& pooled = g.value(encode_video_batch(g, params, vars, feats, clips).pooled);
    std::copy_n(pooled.data(), n * d, out.data() + begin * d);
  });
  return out;
}

template <typename T>
Tensor<T> embed_texts(std::span<const std::vector<int>> token_lists,
                      const EncoderParams<T>& params) {
  const std::size_t d = params.config.d_model;
  Tensor<T> out = Tensor<T>::matrix(token_lists.size(), d);
  const std::size_t chunks = (token_lists.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t n = std::min(kChunk, token_lists.size() - begin);
    Graph<T> g;
    auto vars = bind_params(g, params, false);
    const auto& pooled =
        g.value(encode_text_batch(g, params, vars, token_lists.subspan(begin, n)).pooled);
    std::copy_n(pooled.data(), n * d, out.data() + begin * d);
  });
  return out;
}

template <typename T>
Tensor<T> encode_labels(std::span<const std::vector<int>> labels, const EncoderParams<T>& params) {
  if (labels.empty()) throw InputError("encode_labels: empty label set");
  return embed_texts(labels, params);
}

#define VCLIP_INSTANTIATE_ENCODER(T)                                                          \
  template struct EncoderParams<T>;                                                           \
  template std::vector<Var> bind_params<T>(Graph<T>&, const EncoderParams<T>&, bool);          \
  template EncodedBatch encode_video_batch<T>(Graph<T>&, const EncoderParams<T>&,              \
                                              std::span<const Var>, Var,                       \
                                              std::span<const RowRange>);                      \
  template EncodedBatch encode_text_batch<T>(Graph<T>&, const EncoderParams<T>&,               \
                                             std::span<const Var>,                             \
                                             std::span<const std::vector<int>>);               \
  template Tensor<T> pack_features<T>(const Corpus&, std::span<const VideoSpan>, std::size_t,  \
                                      std::vector<RowRange>&);                                 \
  template PairEncoding encode_pairs<T>(Graph<T>&, const EncoderParams<T>&,                    \
                                        std::span<const Var>, const Corpus&,                   \
                                        std::span<const ClipPair>);                            \
  template ClipEmbedding<T> encode_video<T>(const VideoSpan&, const Corpus&,                   \
                                            const EncoderParams<T>&);                          \
  template ClipEmbedding<T> encode_text<T>(const TextSpan&, const EncoderParams<T>&);          \
  template Tensor<T> encode_labels<T>(std::span<const std::vector<int>>,                       \
                                      const EncoderParams<T>&);                                \
  template Tensor<T> embed_videos<T>(std::span<const VideoSpan>, const Corpus&,                \
                                     const EncoderParams<T>&);                                 \
  template Tensor<T> embed_texts<T>(std::span<const std::vector<int>>, const EncoderParams<T>&);

VCLIP_INSTANTIATE_ENCODER(float)
VCLIP_INSTANTIATE_ENCODER(double)

}  // namespace vclip
