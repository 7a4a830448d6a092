#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

namespace vclip {

/// Stable 64-bit id for a stream label, used with derive_seed.
std::uint64_t stream_id(std::string_view label);

/// Mixes a base seed with stream coordinates (epoch, batch index, ...) so that
/// every consumer draws from its own reproducible stream.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> stream);

/// Thin wrapper over std::mt19937_64. Distributions are constructed per draw,
/// so the engine state alone determines every future value.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();
  double uniform(double lo, double hi);
  /// Inclusive on both ends.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  std::int64_t poisson(double mean);

  /// k distinct indices from [0, n) in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  template <typename It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace vclip
