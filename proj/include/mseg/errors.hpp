#pragma once

#include <stdexcept>
#include <string>

namespace mseg {

// Base of everything the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed arguments that violate a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Files, datasets, or rasters that are malformed or inconsistent.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf during training or inference.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mseg
