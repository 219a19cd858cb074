#pragma once

#include <stdexcept>
#include <string>

namespace rtnsim {

// Base of every exception the library throws. The C API maps each subclass
// onto one status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An argument violates a documented precondition.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// A physical model is evaluated outside the region where it holds.
class DomainError : public Error {
 public:
  using Error::Error;
};

// A time or index falls outside the simulated horizon.
class RangeError : public Error {
 public:
  using Error::Error;
};

// An input object (density matrix, data series) is malformed.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A configuration document is malformed or names an unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A computation could not produce a result (e.g. every repetition failed).
class RuntimeError : public Error {
 public:
  using Error::Error;
};

}  // namespace rtnsim
