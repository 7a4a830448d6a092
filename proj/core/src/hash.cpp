#include "vclip/hash.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

#include "vclip/errors.hpp"

namespace vclip {

void Fnv1a::update(std::span<const unsigned char> bytes) {
  for (unsigned char b : bytes) {
    state_ ^= b;
    state_ *= 0x100000001b3ULL;
  }
}

void Fnv1a::update(std::string_view text) {
  update(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(text.data()),
                                        text.size()));
}

std::string Fnv1a::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

namespace {

void hash_into(Fnv1a& h, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<unsigned char> buf(1 << 16);
  while (in) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    h.update(std::span<const unsigned char>(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
}

}  // namespace

std::string hash_file(const std::filesystem::path& path) {
  Fnv1a h;
  hash_into(h, path);
  return h.hex();
}

std::string hash_files(const std::filesystem::path& dir, std::initializer_list<const char*> names) {
  Fnv1a h;
  for (const char* name : names) {
    h.update(std::string_view(name));
    hash_into(h, dir / name);
  }
  return h.hex();
}

}  // namespace vclip
