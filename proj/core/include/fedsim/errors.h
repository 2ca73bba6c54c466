#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedsim {

// Invalid user-supplied configuration: bad field values, impossible setups.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Model does not fit the described hardware at batch size 1.
struct CapacityError : ConfigError {
  using ConfigError::ConfigError;
};

// Shape or structure mismatch between operands that must be combinable.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Out-of-range token id / row index.
struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse: double backward, empty eval set, duplicate names, ...
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unknown client / entry name lookups.
struct LookupError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss or gradient; carries where it happened.
struct DivergenceError : NumericError {
  DivergenceError(const std::string& what, std::size_t round, std::size_t client,
                  std::size_t step)
      : NumericError(what), round(round), client(client), step(step) {}
  std::size_t round;
  std::size_t client;
  std::size_t step;
};

// Filesystem / serialization failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Corrupt or incompatible on-disk artifacts (bad magic, checksum, version).
struct IntegrityError : IoError {
  using IoError::IoError;
};

// Unrecoverable text-format problems (config files, CSV).
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A round could not complete under the selected topology (e.g. ring drop-out).
struct RoundFailureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fedsim
