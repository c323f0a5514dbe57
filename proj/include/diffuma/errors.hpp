#pragma once

#include <stdexcept>
#include <string>

namespace diffuma {

/// Base class for every error the library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is missing, unknown, or out of range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A value became NaN/Inf, or a numerical precondition was violated.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A file exists but its contents are not a valid container.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Payload checksum did not match the stored footer.
class CorruptArchiveError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Opening, reading or writing a path failed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace diffuma
