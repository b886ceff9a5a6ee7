#pragma once

#include <stdexcept>
#include <string>

namespace nasood {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration value is out of range. Carries the offending field name.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error("config '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class InvalidParameterError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class InternalConsistencyError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

/// Target-domain data reached a training path.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A loss went NaN/Inf; the message names the sub-step that produced it.
class NumericalError : public Error {
 public:
  NumericalError(std::string substep, const std::string& what)
      : Error("non-finite value in sub-step '" + substep + "': " + what), substep_(std::move(substep)) {}
  const std::string& substep() const noexcept { return substep_; }

 private:
  std::string substep_;
};

}  // namespace nasood
