#pragma once

#include <stdexcept>
#include <string>

namespace sgz {

// Base of every error raised by the library. Caller-facing problems (bad
// input, bad files, bad arguments) derive from Error; broken internal
// invariants are reported as InternalError.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class UnsupportedFormatError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Input is well-formed but too small for the requested operation.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Parameter shapes disagree with the declared topology.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// Archive or checkpoint content that cannot be decoded.
class FormatError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

class TrainingAbort : public Error {
 public:
  using Error::Error;
};

class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace sgz
