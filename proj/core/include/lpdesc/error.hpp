#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lpdesc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input that violates a documented precondition (bad argument, bad config).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file contents. Carries the byte offset at which
/// decoding gave up.
class DecodeError : public Error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Numerical failure during training (non-finite loss and similar).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace lpdesc
