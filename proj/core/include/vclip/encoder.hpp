#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vclip/corpus.hpp"
#include "vclip/numerics/graph.hpp"
#include "vclip/numerics/ops.hpp"
#include "vclip/sampler.hpp"

namespace vclip {

enum class Pooling { avg, cls };

Pooling parse_pooling(const std::string& s);
std::string to_string(Pooling p);

struct EncoderConfig {
  std::size_t d_model = 96;
  std::size_t n_layers_video = 2;
  std::size_t n_layers_text = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t d_feat = 64;
  std::size_t vocab_size = 256;
  /// Feature tokens per video clip, specials excluded.
  std::size_t max_video_tokens = 32;
  /// Text sequence length including [CLS] and [SEP].
  std::size_t max_text_tokens = 63;
  /// Rows of each learned positional table.
  std::size_t max_positions = 64;
  /// Video layers reuse the first n_layers_video text layers.
  bool shared_encoder = false;
  Pooling pooling = Pooling::avg;

  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

struct LayerSlots {
  std::size_t ln1_g, ln1_b;
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t ln2_g, ln2_b;
  std::size_t w1, b1, w2, b2;
};

/// Position of every named tensor inside EncoderParams::tensors.
struct ParamLayout {
  std::size_t mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  std::size_t video_pos, video_cls, video_sep;
  std::size_t text_embed, text_pos, text_cls, text_sep;
  std::vector<LayerSlots> video_layers;
  std::vector<LayerSlots> text_layers;
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  ParamLayout layout;
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;

  /// Weights ~ N(0, 0.02^2); layer-norm gains 1; biases 0.
  static EncoderParams init(const EncoderConfig& config, std::uint64_t seed);
  /// Zero-filled tensors with the right names and shapes.
  static EncoderParams zeros(const EncoderConfig& config);

  template <typename U>
  EncoderParams<U> cast() const {
    EncoderParams<U> out;
    out.config = config;
    out.layout = layout;
    out.names = names;
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }

  std::size_t parameter_count() const;
};

/// Graph handles for every parameter tensor, in EncoderParams order.
template <typename T>
std::vector<Var> bind_params(Graph<T>& g, const EncoderParams<T>& params, bool requires_grad);

/// Packed encoder output. Row ranges index into token_states.
struct EncodedBatch {
  /// [rows, d_model], specials included.
  Var token_states;
  /// Whole sequences, specials included.
  std::vector<RowRange> sequences;
  /// Content tokens only.
  std::vector<RowRange> content;
  /// [n, d_model]
  Var pooled;
};

/// Encodes n video clips in one pass. `features` packs the clips' feature rows
/// ([sum n_i, d_feat]); `clips` gives each clip's rows. Features pass through
/// stop_gradient.
template <typename T>
EncodedBatch encode_video_batch(Graph<T>& g, const EncoderParams<T>& params,
                                std::span<const Var> vars, Var features,
                                std::span<const RowRange> clips);

/// Encodes n token sequences in one pass. Content longer than
/// max_text_tokens - 2 is cut at the end.
template <typename T>
EncodedBatch encode_text_batch(Graph<T>& g, const EncoderParams<T>& params,
                               std::span<const Var> vars,
                               std::span<const std::vector<int>> token_lists);

/// Feature rows [first, first + count) covered by [start_s, end_s): whole
/// seconds floor(start_s) .. floor(end_s) - 1, at least one row, center-cropped
/// to max_tokens.
RowRange feature_rows(const VideoRecord& video, double start_s, double end_s,
                      std::size_t max_tokens);

/// Packs the feature rows of several spans into one matrix.
template <typename T>
Tensor<T> pack_features(const Corpus& corpus, std::span<const VideoSpan> spans,
                        std::size_t max_tokens, std::vector<RowRange>& clips);

/// Pooled embeddings of a training batch, ready for the loss.
struct PairEncoding {
  Var video;  // [N, d_model]
  Var text;   // [N, d_model]
};

template <typename T>
PairEncoding encode_pairs(Graph<T>& g, const EncoderParams<T>& params,
                          std::span<const Var> vars, const Corpus& corpus,
                          std::span<const ClipPair> pairs);

template <typename T>
struct ClipEmbedding {
  /// [seq, d_model] including [CLS] and [SEP].
  Tensor<T> token_states;
  /// [d_model]
  Tensor<T> pooled;
};

template <typename T>
ClipEmbedding<T> encode_video(const VideoSpan& span, const Corpus& corpus,
                              const EncoderParams<T>& params);
template <typename T>
ClipEmbedding<T> encode_text(const TextSpan& span, const EncoderParams<T>& params);

/// Pooled embeddings [n, d_model] for label or step texts.
template <typename T>
Tensor<T> encode_labels(std::span<const std::vector<int>> labels, const EncoderParams<T>& params);

/// Pooled embeddings [n, d_model] for many spans, chunked and run in parallel.
template <typename T>
Tensor<T> embed_videos(std::span<const VideoSpan> spans, const Corpus& corpus,
                       const EncoderParams<T>& params);
template <typename T>
Tensor<T> embed_texts(std::span<const std::vector<int>> token_lists,
                      const EncoderParams<T>& params);

}  // namespace vclip
