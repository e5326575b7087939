#pragma once

#include <stdexcept>
#include <string>

namespace transforest {

/// Failure category. The CLI maps these onto exit codes.
enum class ErrorKind {
  config,     // invalid arguments, preconditions, dimension mismatches
  io,         // file could not be opened, read or written
  parse,      // malformed file contents
  numeric,    // factorization failure, singular systems, non-finite values
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(ErrorKind::parse, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

const char* to_string(ErrorKind kind) noexcept;

}  // namespace transforest
