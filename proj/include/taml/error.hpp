#pragma once

#include <stdexcept>
#include <string>

namespace taml {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dimension/shape mismatches; messages carry both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Violated precondition or API contract.
struct ContractError : Error {
  using Error::Error;
};

// Out-of-range label, class id or layer index.
struct IndexError : Error {
  using Error::Error;
};

// NaN/Inf reached an exposed value, or a sampler failed to produce one.
struct NumericError : Error {
  using Error::Error;
};

// Bad user-facing configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Benchmark generation exhausted its rejection budget.
struct GenerationError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};
struct BadMagicError : IoError {
  using IoError::IoError;
};
struct VersionMismatchError : IoError {
  using IoError::IoError;
};
struct TruncatedFileError : IoError {
  using IoError::IoError;
};

}  // namespace taml
