#ifndef VMFCIL_ERRORS_HPP_
#define VMFCIL_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace vmfcil {

/// Base for every error raised by the library. `exit_code()` follows the CLI
/// contract: 1 for usage/configuration problems, 2 for numeric or invariant
/// failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 2; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

class UsageError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class InvariantViolation : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

}  // namespace vmfcil

#endif  // VMFCIL_ERRORS_HPP_
