#pragma once

#include <stdexcept>
#include <string>

namespace senslab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A request exceeds a resource guard (dimension, enumeration size).
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Invalid parameters, unknown names, malformed config files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced during evaluation or training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace senslab
