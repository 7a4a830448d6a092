#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vclip/encoder.hpp"
#include "vclip/numerics/adam.hpp"

namespace vclip {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// The three tensor blocks of a checkpoint file, in file order.
struct CheckpointBlocks {
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> optimizer;
  std::vector<NamedTensor> rng;

  friend bool operator==(const CheckpointBlocks&, const CheckpointBlocks&) = default;
};

// Layout: "VCLP", u32 version, then three blocks (params, optimizer, rng). A
// block is a u32 tensor count followed by tensors, each stored as u16 name
// length, UTF-8 name, u8 rank, u32 per dim, little-endian f32 data.
std::vector<unsigned char> serialize_checkpoint(const CheckpointBlocks& blocks);
/// Throws FormatError with the byte offset of the first problem.
CheckpointBlocks parse_checkpoint(std::span<const unsigned char> bytes, const std::string& label);

/// Writes to a sibling temp file, then renames over `path`.
void write_checkpoint(const CheckpointBlocks& blocks, const std::filesystem::path& path);
CheckpointBlocks read_checkpoint(const std::filesystem::path& path);

/// Everything needed to continue training after an epoch boundary. All
/// randomness derives from (seed, epoch, ...), so the rng block only needs
/// those two numbers.
struct TrainingState {
  EncoderParams<float> params;
  AdamState<float> adam;
  std::uint64_t seed = 0;
  std::uint64_t next_epoch = 0;
};

CheckpointBlocks to_blocks(const TrainingState& state);
/// Adam hyper-parameters are not stored; `adam_config` supplies them.
TrainingState from_blocks(const CheckpointBlocks& blocks, const AdamConfig& adam_config = {});

/// Model parameters only, e.g. for evaluation.
EncoderParams<float> load_params(const std::filesystem::path& path);

}  // namespace vclip
