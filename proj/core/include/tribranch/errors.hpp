#pragma once

#include <stdexcept>
#include <string>

namespace tribranch {

// Shape or extent mismatch between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Scalar argument outside its admissible domain (tau <= 0, k <= 0, ...).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Index outside the elastic lattice or a block range.
struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Width or depth that is not a lattice value of the grid.
struct GridError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid run configuration. `key` names the offending entry.
struct ConfigError : std::runtime_error {
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Malformed or incompatible checkpoint file.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File could not be opened, read or written.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss during training.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace tribranch
