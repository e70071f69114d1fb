#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mixhop {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not chain.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter, flag or model specification.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a structural invariant (ids out of range, bad splits, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the offending 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A statistic was requested on an input where it is not defined.
class UndefinedStatistic : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : Error("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// A precondition on how a routine may be called was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace mixhop
