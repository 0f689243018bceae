#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace spadvae {

// Error taxonomy mirrored by the CLI exit codes:
//   UsageError -> 2, NumericError -> 3, IoError (and subclasses) -> 4.

// Invalid arguments, malformed config values, impossible shapes requested by
// the caller.
class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (losses, gradients,
// parameters). Carries enough context to say *what* went non-finite.
class NumericError : public std::runtime_error {
public:
  NumericError(const std::string& what_arg, std::string context = {},
               std::uint64_t iteration = 0)
      : std::runtime_error(what_arg), context_(std::move(context)),
        iteration_(iteration) {}

  const std::string& context() const noexcept { return context_; }
  std::uint64_t iteration() const noexcept { return iteration_; }

private:
  std::string context_;
  std::uint64_t iteration_ = 0;
};

// File and format problems. `offset` is the byte position the reader was at
// when the problem was detected, when that is meaningful.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& what_arg, std::uint64_t offset = 0,
                   bool has_offset = false)
      : std::runtime_error(what_arg), offset_(offset), has_offset_(has_offset) {}

  static IoError at(const std::string& what_arg, std::uint64_t offset) {
    return IoError(what_arg + " (byte offset " + std::to_string(offset) + ")",
                   offset, true);
  }

  std::uint64_t offset() const noexcept { return offset_; }
  bool has_offset() const noexcept { return has_offset_; }

private:
  std::uint64_t offset_ = 0;
  bool has_offset_ = false;
};

// A file pair whose embedded model-config hashes disagree (e.g. thresholds
// calibrated against a different checkpoint).
class ConfigMismatchError : public IoError {
public:
  ConfigMismatchError(std::uint64_t expected, std::uint64_t actual)
      : IoError("model config hash mismatch: expected " + hex(expected) +
                ", found " + hex(actual)),
        expected_(expected), actual_(actual) {}

  std::uint64_t expected() const noexcept { return expected_; }
  std::uint64_t actual() const noexcept { return actual_; }

private:
  static std::string hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s = "0x";
    for (int shift = 60; shift >= 0; shift -= 4)
      s.push_back(digits[(v >> shift) & 0xf]);
    return s;
  }

  std::uint64_t expected_ = 0;
  std::uint64_t actual_ = 0;
};

} // namespace spadvae
