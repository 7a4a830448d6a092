#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vclip {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimensions do not agree with what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is out of range or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller-supplied data is invalid (e.g. an out-of-vocabulary token).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Training cannot continue (non-finite loss or gradient).
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A persisted file is malformed. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& file, std::uint64_t offset, const std::string& what)
      : Error(file + " @ byte " + std::to_string(offset) + ": " + what),
        file_(file),
        offset_(offset) {}

  const std::string& file() const noexcept { return file_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::string file_;
  std::uint64_t offset_;
};

}  // namespace vclip
