#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace vclip {

/// FNV-1a, used for run-manifest fingerprints (not cryptographic).
class Fnv1a {
 public:
  void update(std::span<const unsigned char> bytes);
  void update(std::string_view text);
  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hash_file(const std::filesystem::path& path);
/// Hash over the listed files of a directory, in the given order.
std::string hash_files(const std::filesystem::path& dir, std::initializer_list<const char*> names);

}  // namespace vclip
