#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace adaann {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse (backward before forward, inverse on a non-invertible kind...).
class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class OracleFailure : public Error {
 public:
  using Error::Error;
};

/// Base for failures raised by the numerics during training. The annealing
/// driver attaches the (step, temperature) at which the failure happened.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what), message_(what) {}

  void attach_context(std::size_t step, double t);
  std::optional<std::size_t> step() const { return step_; }
  std::optional<double> temperature() const { return t_; }
  const char* what() const noexcept override { return message_.c_str(); }

 private:
  std::string message_;
  std::optional<std::size_t> step_;
  std::optional<double> t_;
};

class NumericOverflow : public NumericError {
 public:
  using NumericError::NumericError;
};

class DegenerateJacobian : public NumericError {
 public:
  using NumericError::NumericError;
};

class TargetUnderflow : public NumericError {
 public:
  using NumericError::NumericError;
};

class BlowupError : public NumericError {
 public:
  BlowupError(std::size_t step_index, const std::string& what)
      : NumericError(what), step_index_(step_index) {}
  std::size_t step_index() const { return step_index_; }

 private:
  std::size_t step_index_;
};

}  // namespace adaann
