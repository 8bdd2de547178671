#pragma once

#include <stdexcept>
#include <string>

namespace spvit {

/// Base of every error the engine raises. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation precondition (non-scalar loss, missing gradient, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class PolicyError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& where, std::size_t line, const std::string& what)
      : DataError(where + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DecodeError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class LoadError : public IoError {
 public:
  using IoError::IoError;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class LabelingError : public MetricError {
 public:
  using MetricError::MetricError;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, long step, double loss)
      : Error("non-finite loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
              ", step " + std::to_string(step)),
        epoch_(epoch),
        step_(step) {}
  int epoch() const { return epoch_; }
  long step() const { return step_; }

 private:
  int epoch_;
  long step_;
};

}  // namespace spvit
