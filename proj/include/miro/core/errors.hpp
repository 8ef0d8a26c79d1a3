#pragma once

#include <stdexcept>
#include <string>

namespace miro {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced by an op.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A value violates a type invariant (negative std, ...).
class InvariantError : public Error {
 public:
  using Error::Error;
};

// Missing or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Replay data cannot satisfy the request.
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; carries the 1-based line when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace miro
