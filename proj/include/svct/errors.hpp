#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace svct {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside its documented range (k out of bounds, alpha <= 1, shape mismatch...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Input is well-formed but degenerate for the operation (zero norm, zero variance).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Support violation in a divergence.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Request exceeds what a brute-force routine is willing to enumerate.
class ResourceError : public Error {
 public:
  using Error::Error;
};

class EmptyConceptSetError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss during training; carries the iteration where it happened.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

class OutOfScheduleError : public Error {
 public:
  using Error::Error;
};

class AttackFailureError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unknown configuration entries.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace svct
