#pragma once

#include <stdexcept>
#include <string>

namespace forgeloc {

/// Shape or dimension mismatch between tensors.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value or combination of values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid input data (image sizes, value ranges).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// API misuse, e.g. calling backward() on a non-scalar tensor.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// NaN/Inf encountered, or an optimizer precondition failed at runtime.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training loop failure: missing gradients, non-finite losses.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Synthetic sample generation could not satisfy its placement constraints.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace forgeloc
