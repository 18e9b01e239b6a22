#pragma once

#include <stdexcept>

namespace lfd {

/// Bad input, config, or file contents. CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged (non-finite loss). CLI exit code 3.
class TrainingAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An evaluation stage could not produce its verdict. CLI exit code 4.
class EvaluationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lfd
