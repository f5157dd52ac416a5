#ifndef CVLM_ERRORS_HPP
#define CVLM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace cvlm {

/// Argument outside the mathematical domain of a function (non-finite input,
/// probability outside (0,1), non-positive scale).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Operand dimensions disagree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-positive pivot during a Cholesky factorization.
class FactorizationError : public std::runtime_error {
 public:
  FactorizationError(const std::string& what, long pivot)
      : std::runtime_error(what), pivot_(pivot) {}
  long pivot() const noexcept { return pivot_; }

 private:
  long pivot_;
};

/// A NaN or infinity showed up where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation invoked in the wrong lifecycle state (e.g. backward before forward).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid configuration value or combination.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed user-supplied data (out-of-vocabulary ids, empty corpus).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint could not be restored: bad magic, version, truncation, checksum.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A correctness gate (gradient check, oracle comparison) did not pass.
class VerificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A verification oracle could not produce a trustworthy reference value.
class OracleError : public std::runtime_error {
 public:
  OracleError(const std::string& what, double estimate = 0.0) : std::runtime_error(what), estimate_(estimate) {}
  /// Best value reached before giving up.
  double estimate() const noexcept { return estimate_; }

 private:
  double estimate_;
};

}  // namespace cvlm

#endif  // CVLM_ERRORS_HPP
