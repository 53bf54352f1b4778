#pragma once

#include <stdexcept>
#include <string>

namespace normlab {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible shapes, axes out of range, or layer chains that do not connect.
struct ShapeError : Error {
  using Error::Error;
};

// Domain violations: k out of range, n too small, zero-norm channel, empty axis.
struct ValueError : Error {
  using Error::Error;
};

// Operation invoked in an invalid state: eval before any train step, cache
// mismatch, missing trajectory record, objective failing the invariance precheck.
struct StateError : Error {
  using Error::Error;
};

// Malformed input file. `offset` is the byte (or line) position of the failure.
struct ParseError : Error {
  ParseError(const std::string& msg, std::size_t offset)
      : Error(msg + " (at offset " + std::to_string(offset) + ")"), offset(offset) {}
  std::size_t offset;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace normlab
