#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qkdsim {

/// Base of every error raised by the library. The CLI maps each subclass
/// onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation's preconditions (mismatched inputs etc).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed file or configuration.
class InputError : public Error {
 public:
  InputError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : what + " (line " + std::to_string(line) + ")"),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class NoPeakError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class ReconciliationError : public Error {
 public:
  using Error::Error;
};

class KeyExhaustedError : public Error {
 public:
  using Error::Error;
};

/// CHSH check failed; the session must not produce a key.
class SecurityAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace qkdsim
