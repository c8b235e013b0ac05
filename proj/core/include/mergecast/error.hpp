#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mergecast {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input row. Carries the 1-based line number of the offending row.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Column mapping does not match the file.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range or inconsistent argument (window sizes, step ratios, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Model training could not proceed (empty pools, divergence).
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Synthetic scenario produced an invalid state (e.g. a collision).
class ScenarioError : public Error {
 public:
  using Error::Error;
};

/// Pipeline stage failure; the message is prefixed with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace mergecast
