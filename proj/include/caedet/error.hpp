#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace caedet {

/// Root of every exception the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A tensor axis disagrees with what an operation expects.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf reached a kernel.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Layer used out of order, e.g. backward without a preceding forward.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Model or run configuration is inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text file. Carries the byte offset where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace caedet
