#pragma once

#include <stdexcept>
#include <string>

namespace kicklab {

enum class ErrorKind {
  kConfiguration,
  kNumericalInstability,
  kDegenerateInput,
  kPrecondition,
  kInconclusive,
};

/// Base for every error raised by the library. Carries the failing module so
/// the experiment runner can report it and pick an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message),
        kind_(kind),
        module_(std::move(module)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorKind kind_;
  std::string module_;
};

class ConfigurationError : public Error {
 public:
  ConfigurationError(std::string module, const std::string& message)
      : Error(ErrorKind::kConfiguration, std::move(module), message) {}
};

class NumericalInstabilityError : public Error {
 public:
  NumericalInstabilityError(std::string module, const std::string& message)
      : Error(ErrorKind::kNumericalInstability, std::move(module), message) {}
};

class DegenerateInputError : public Error {
 public:
  DegenerateInputError(std::string module, const std::string& message)
      : Error(ErrorKind::kDegenerateInput, std::move(module), message) {}
};

class PreconditionError : public Error {
 public:
  PreconditionError(std::string module, const std::string& message, int index = -1)
      : Error(ErrorKind::kPrecondition, std::move(module), message), index_(index) {}

  /// Step or sample index at which the precondition failed, -1 if not applicable.
  int index() const noexcept { return index_; }

 private:
  int index_;
};

class InconclusiveError : public Error {
 public:
  InconclusiveError(std::string module, const std::string& message)
      : Error(ErrorKind::kInconclusive, std::move(module), message) {}
};

/// Process exit code used by the command line runner for an error kind.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNumericalInstability:
      return 3;
    case ErrorKind::kInconclusive:
      return 4;
    default:
      return 2;
  }
}

}  // namespace kicklab
