#pragma once

#include <stdexcept>
#include <string>

namespace uda {

// Every failure raised by the library derives from Error so that callers can
// separate library faults from std exceptions thrown by dependencies.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class LabelError : public Error { using Error::Error; };
class UsageError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class ConsistencyError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class DegenerateBatchError : public Error { using Error::Error; };
class VersionError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

// Raised by the trainer when a loss or gradient stops being finite. Carries
// the position so a run can be diagnosed without re-running it.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t epoch, std::size_t step, const std::string& what)
      : Error("diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
              ": " + what),
        epoch_(epoch),
        step_(step) {}

  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }

 private:
  std::size_t epoch_;
  std::size_t step_;
};

}  // namespace uda
