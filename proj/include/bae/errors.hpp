#pragma once

#include <stdexcept>
#include <string>

namespace bae {

/// Base class for every recoverable error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition of an operation was violated by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Covariance could not be factorized even after the jitter ladder.
class DegenerateCovarianceError : public Error {
 public:
  using Error::Error;
};

class InsufficientSamplesError : public Error {
 public:
  using Error::Error;
};

/// Error-ensemble construction ran out of attempts.
class BudgetExhaustedError : public Error {
 public:
  BudgetExhaustedError(const std::string& what, double failure_rate)
      : Error(what), failure_rate_(failure_rate) {}
  double failure_rate() const noexcept { return failure_rate_; }

 private:
  double failure_rate_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Pipeline stage invoked before the stage it depends on.
class StageOrderError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const char* message) {
  if (!condition) throw ContractViolation(message);
}
inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace bae
