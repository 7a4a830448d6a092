#include "vclip/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "vclip/errors.hpp"

namespace vclip {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'V', 'C', 'L', 'P'};
constexpr const char* kMetaEncoder = "meta.encoder_config";

class Writer {
 public:
  template <typename U>
  void put(U v) {
    unsigned char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out_.insert(out_.end(), buf, buf + sizeof(U));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<unsigned char> take() { return std::move(out_); }

 private:
  std::vector<unsigned char> out_;
};

class Reader {
 public:
  Reader(std::span<const unsigned char> bytes, std::string label)
      : bytes_(bytes), label_(std::move(label)) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  void read(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(std::size_t at, const std::string& what) const {
    throw FormatError(label_, at, what);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      fail(bytes_.size(), std::string("truncated while reading ") + what);
    }
  }

  std::span<const unsigned char> bytes_;
  std::string label_;
  std::size_t pos_ = 0;
};

void write_block(Writer& w, const std::vector<NamedTensor>& block) {
  w.put(static_cast<std::uint32_t>(block.size()));
  for (const auto& t : block) {
    if (t.name.size() > 0xFFFF) throw InputError("checkpoint: tensor name too long");
    if (t.value.rank() == 0 || t.value.rank() > 0xFF) {
      throw InputError("checkpoint: tensor '" + t.name + "' has unsupported rank");
    }
    w.put(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.put(static_cast<std::uint8_t>(t.value.rank()));
    for (std::size_t d : t.value.dims()) {
      if (d > 0xFFFFFFFFull) throw InputError("checkpoint: dimension too large");
      w.put(static_cast<std::uint32_t>(d));
    }
    w.bytes(t.value.data(), t.value.numel() * sizeof(float));
  }
}

std::vector<NamedTensor> read_block(Reader& r) {
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> block;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = r.get<std::uint16_t>("name length");
    t.name.resize(name_len);
    r.read(t.name.data(), name_len, "tensor name");
    const std::size_t rank_at = r.pos();
    const auto rank = r.get<std::uint8_t>("rank");
    if (rank == 0) r.fail(rank_at, "tensor '" + t.name + "' has rank 0");
    Shape dims;
    std::size_t numel = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const std::size_t dim_at = r.pos();
      const auto d = r.get<std::uint32_t>("dimension");
      if (d == 0) r.fail(dim_at, "tensor '" + t.name + "' has a zero dimension");
      dims.push_back(d);
      numel *= d;
      if (numel > (std::size_t{1} << 34)) r.fail(dim_at, "tensor '" + t.name + "' is too large");
    }
    std::vector<float> data(numel);
    r.read(data.data(), numel * sizeof(float), "tensor data");
    t.value = Tensor<float>(std::move(dims), std::move(data));
    block.push_back(std::move(t));
  }
  return block;
}

const NamedTensor* find(const std::vector<NamedTensor>& block, const std::string& name) {
  for (const auto& t : block) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const Tensor<float>& require(const std::vector<NamedTensor>& block, const std::string& name) {
  const auto* t = find(block, name);
  if (!t) throw InputError("checkpoint: missing tensor '" + name + "'");
  return t->value;
}

Tensor<float> encode_config(const EncoderConfig& c) {
  std::vector<float> v = {float(c.d_model),        float(c.n_layers_video),
                          float(c.n_layers_text),  float(c.n_heads),
                          float(c.ffn_mult),       float(c.d_feat),
                          float(c.vocab_size),     float(c.max_video_tokens),
                          float(c.max_text_tokens), float(c.max_positions),
                          c.shared_encoder ? 1.0f : 0.0f,
                          c.pooling == Pooling::cls ? 1.0f : 0.0f};
  const std::size_t n = v.size();
  return Tensor<float>({n}, std::move(v));
}

EncoderConfig decode_config(const Tensor<float>& t) {
  if (t.numel() != 12) throw InputError("checkpoint: malformed encoder config tensor");
  auto u = [&](std::size_t i) { return static_cast<std::size_t>(t[i]); };
  EncoderConfig c;
  c.d_model = u(0);
  c.n_layers_video = u(1);
  c.n_layers_text = u(2);
  c.n_heads = u(3);
  c.ffn_mult = u(4);
  c.d_feat = u(5);
  c.vocab_size = u(6);
  c.max_video_tokens = u(7);
  c.max_text_tokens = u(8);
  c.max_positions = u(9);
  c.shared_encoder = t[10] != 0.0f;
  c.pooling = t[11] != 0.0f ? Pooling::cls : Pooling::avg;
  c.validate();
  return c;
}

EncoderParams<float> params_from(const std::vector<NamedTensor>& block) {
  auto params = EncoderParams<float>::zeros(decode_config(require(block, kMetaEncoder)));
  for (std::size_t i = 0; i < params.names.size(); ++i) {
    const auto& t = require(block, params.names[i]);
    if (t.dims() != params.tensors[i].dims()) {
      throw InputError("checkpoint: tensor '" + params.names[i] + "' has shape " +
                       shape_string(t.dims()) + ", expected " +
                       shape_string(params.tensors[i].dims()));
    }
    params.tensors[i] = t;
  }
  if (block.size() != params.names.size() + 1) {
    throw InputError("checkpoint: unexpected extra parameter tensors");
  }
  return params;
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const CheckpointBlocks& blocks) {
  Writer w;
  w.bytes(kMagic, 4);
  w.put(kCheckpointVersion);
  write_block(w, blocks.params);
  write_block(w, blocks.optimizer);
  write_block(w, blocks.rng);
  return w.take();
}

CheckpointBlocks parse_checkpoint(std::span<const unsigned char> bytes, const std::string& label) {
  Reader r(bytes, label);
  char magic[4];
  r.read(magic, 4, "magic");
  for (std::size_t i = 0; i < 4; ++i) {
    if (magic[i] != kMagic[i]) r.fail(i, "bad magic, not a checkpoint file");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    r.fail(4, "unsupported checkpoint version " + std::to_string(version) + " (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  }
  CheckpointBlocks blocks;
  blocks.params = read_block(r);
  blocks.optimizer = read_block(r);
  blocks.rng = read_block(r);
  if (!r.at_end()) r.fail(r.pos(), "trailing bytes after rng block");
  return blocks;
}

void write_checkpoint(const CheckpointBlocks& blocks, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(blocks);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointBlocks read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path.string());
}

CheckpointBlocks to_blocks(const TrainingState& s) {
  CheckpointBlocks b;
  b.params.push_back({kMetaEncoder, encode_config(s.params.config)});
  for (std::size_t i = 0; i < s.params.names.size(); ++i) {
    b.params.push_back({s.params.names[i], s.params.tensors[i]});
  }
  b.optimizer.push_back({"adam.step", Tensor<float>({1}, {float(s.adam.step)})});
  for (std::size_t i = 0; i < s.params.names.size() && i < s.adam.first_moment.size(); ++i) {
    b.optimizer.push_back({"adam.m." + s.params.names[i], s.adam.first_moment[i]});
    b.optimizer.push_back({"adam.v." + s.params.names[i], s.adam.second_moment[i]});
  }
  // Four 16-bit limbs hold the 64-bit seed exactly in f32.
  std::vector<float> rng;
  for (int k = 0; k < 4; ++k) rng.push_back(float((s.seed >> (16 * k)) & 0xFFFFu));
  rng.push_back(float(s.next_epoch));
  b.rng.push_back({"rng.state", Tensor<float>({5}, std::move(rng))});
  return b;
}

TrainingState from_blocks(const CheckpointBlocks& b, const AdamConfig& adam_config) {
  TrainingState s;
  s.params = params_from(b.params);
  s.adam = AdamState<float>::init(adam_config, s.params.tensors);
  s.adam.step = static_cast<std::int64_t>(require(b.optimizer, "adam.step")[0]);
  if (s.adam.step > 0) {
    for (std::size_t i = 0; i < s.params.names.size(); ++i) {
      const auto& m = require(b.optimizer, "adam.m." + s.params.names[i]);
      const auto& v = require(b.optimizer, "adam.v." + s.params.names[i]);
      if (m.dims() != s.params.tensors[i].dims() || v.dims() != s.params.tensors[i].dims()) {
        throw InputError("checkpoint: optimizer state shape mismatch for " + s.params.names[i]);
      }
      s.adam.first_moment[i] = m;
      s.adam.second_moment[i] = v;
    }
  }
  const auto& rng = require(b.rng, "rng.state");
  if (rng.numel() != 5) throw InputError("checkpoint: malformed rng.state");
  s.seed = 0;
  for (int k = 0; k < 4; ++k) s.seed |= std::uint64_t(rng[std::size_t(k)]) << (16 * k);
  s.next_epoch = static_cast<std::uint64_t>(rng[4]);
  return s;
}

EncoderParams<float> load_params(const std::filesystem::path& path) {
  return params_from(read_checkpoint(path).params);
}

}  // namespace vclip
