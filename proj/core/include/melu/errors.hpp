#pragma once

#include <stdexcept>
#include <string>

namespace melu {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A profile index or field does not fit the content schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Parameter shapes or model/training configuration are inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller-supplied argument violates a precondition (empty episode, k < 1, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Local adaptation cannot run (empty support set).
class AdaptationError : public Error {
 public:
  using Error::Error;
};

// Input tables are unreadable or unusable.
class DataError : public Error {
 public:
  using Error::Error;
};

// Service-level failures, mapped onto HTTP status codes by the frontend.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

class ServiceUnavailableError : public Error {
 public:
  using Error::Error;
};

}  // namespace melu
