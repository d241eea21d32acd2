#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mmtm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents or channel counts do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration: bad indices, inconsistent state, impossible specs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse (empty argument lists, unknown names, calling backward twice).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary file. Carries the byte offset where decoding failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Binary file with a format version this build does not read.
class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmtm
