#pragma once

#include <stdexcept>
#include <string>

namespace tobac {

// Error families used across the library. Each one maps to a distinct
// failure class so callers (and the CLI) can report them separately.

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StructuralError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EncodingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LengthError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StampingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SequencingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, long step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace tobac
