#pragma once

#include <stdexcept>
#include <string>

namespace salgrad {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or rank mismatch between tensors.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An argument value is outside its allowed range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// An index (label, sample, tensor id) is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API contract (non-scalar loss, missing gradient, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// File I/O and serialization failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// A runtime invariant was violated (non-finite value, containment breach).
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace salgrad
