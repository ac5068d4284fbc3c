#pragma once

#include <stdexcept>
#include <string>

namespace fivelab {

// Base of every library error. The CLI maps the subclasses onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

struct ContractError : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct NumericalError : Error {
  using Error::Error;
};

struct DegenerateSpectrumError : NumericalError {
  using NumericalError::NumericalError;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError("shape mismatch: " + what);
}

}  // namespace fivelab
