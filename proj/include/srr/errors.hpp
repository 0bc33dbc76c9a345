#pragma once

#include <stdexcept>
#include <string>

namespace srr {

/// Shape or size mismatch between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A matrix expected to be symmetric positive definite is not.
struct DefinitenessError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered where finite values are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Inconsistent model, training or grid configuration.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed input file (dataset, checkpoint, manifest).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

} // namespace srr
