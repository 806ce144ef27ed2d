#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace softquant {

// Error hierarchy. The CLI maps each type onto a distinct exit code.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration (shapes, hyperparameters, files).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument to an operation (empty layer, label out of range, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values encountered during a numeric step.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Every cluster is at or below the merge threshold, so nothing can absorb them.
class RefinementImpossible : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Binary/text parse failure; carries the byte offset where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace softquant
