#pragma once

#include <stdexcept>
#include <string>

namespace morphbench {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor / image / latent shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside its documented domain.
class ValueError : public Error {
 public:
  using Error::Error;
};

// NaN / Inf encountered where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed input file (CSV, PNG, weight container).
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ShapeMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace morphbench
