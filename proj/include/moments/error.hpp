#pragma once

#include <stdexcept>
#include <string>

namespace moments {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid counts or parameters passed to a constructor-like operation.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Incompatible field shapes (channel mismatch, odd extent with stride 2, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A statistic is undefined because a variance collapsed to zero.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Requested operation is not defined for the given architecture.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Configuration error; `key()` names the offending key when known.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class RunError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace moments
