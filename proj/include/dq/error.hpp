#pragma once

#include <stdexcept>
#include <string>

namespace dq {

// Raised when tensor shapes do not compose (conv channels, dense inner dims, ...).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Misuse of the recording tape: double backward, non-scalar loss.
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::invalid_argument(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Non-finite loss, degenerate inputs to numeric routines.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateActivationError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Malformed binary/CSV input.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dq
