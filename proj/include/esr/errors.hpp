#pragma once

#include <stdexcept>
#include <string>

namespace esr {

/// Bad argument to a pure function (wrong length, out-of-range parameter).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Base for recoverable domain failures reported to CLI/service callers.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Well-formed WAV whose rate, channel count or bit depth is not accepted.
class UnsupportedFormatError : public FormatError {
 public:
  UnsupportedFormatError(std::string field, const std::string& what)
      : FormatError(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ValidationError : public DomainError {
 public:
  using DomainError::DomainError;
};

class NotFoundError : public DomainError {
 public:
  using DomainError::DomainError;
};

class ConflictError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Corrupt KB manifest; the message starts with the offending field path.
class SchemaError : public DomainError {
 public:
  using DomainError::DomainError;
};

class TrainingError : public DomainError {
 public:
  using DomainError::DomainError;
};

class CannotRecognizeError : public DomainError {
 public:
  using DomainError::DomainError;
};

class SessionBusyError : public DomainError {
 public:
  using DomainError::DomainError;
};

}  // namespace esr
