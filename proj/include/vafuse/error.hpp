#pragma once

#include <stdexcept>
#include <string>

namespace vafuse {

/// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid configuration value. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data. The CLI maps this to exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class RangeError : public DataError {
 public:
  using DataError::DataError;
};

/// Train-mode batch normalization over a single sample.
class DegenerateBatchError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Checkpoint does not match the model built from its configuration.
class IncompatibleCheckpointError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace vafuse
