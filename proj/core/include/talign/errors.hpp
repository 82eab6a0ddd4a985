#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace talign {

// Malformed binary payload (sample container or checkpoint). Carries the byte
// offset at which parsing stopped so tools can report it.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Incompatible tensor or matrix shapes. Always names both sides.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& context, const std::string& got, const std::string& expected)
      : std::invalid_argument(context + ": got shape " + got + ", expected " + expected) {}
};

// Operation needs more data than the caller supplied (e.g. a curve fit over
// too few valid teeth).
class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numeric breakdown: degenerate rotation blocks, non-finite gradients, and
// similar states where continuing would silently corrupt results.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint exists and parses but does not match the requesting model
// (wrong kind, wrong parameter shapes).
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem-level failure: missing path, unreadable or unwritable file.
class FileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace talign
