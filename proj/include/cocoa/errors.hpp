#pragma once

#include <stdexcept>
#include <string>

namespace cocoa {

// Error categories map onto CLI exit codes: everything derived from
// NumericError exits with 2, the rest with 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class LabelError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class LeakageError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigurationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DependencyError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ParseError : public FormatError {
 public:
  using FormatError::FormatError;
};

class FileError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DegenerateBatchError : public NumericError {
 public:
  using NumericError::NumericError;
};

class TrainingDivergedError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace cocoa
