#pragma once

#include <stdexcept>
#include <string>

namespace xmad {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid argument value (bad temperature, all-masked softmax, ...).
struct DomainError : Error {
  using Error::Error;
};

/// Caller broke an API contract (shape mismatch, non-scalar loss, ...).
struct ContractError : Error {
  using Error::Error;
};

/// An operation produced NaN/Inf; the message names the op.
struct NumericError : Error {
  using Error::Error;
};

/// Malformed input file; the message carries the line number.
struct ParseError : Error {
  using Error::Error;
};

/// Dataset generation could not satisfy its constraints.
struct GenerationError : Error {
  using Error::Error;
};

/// Calibration inputs were empty or unusable.
struct CalibrationError : Error {
  using Error::Error;
};

/// Dataset content violates what the operation needs (e.g. undefined answers).
struct DataError : Error {
  using Error::Error;
};

/// A referenced file or checkpoint does not exist; message names the path.
struct ResolutionError : Error {
  explicit ResolutionError(const std::string& path)
      : Error("cannot resolve path: " + path), path(path) {}
  std::string path;
};

/// Run configuration failed validation.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace xmad
