#pragma once

#include <stdexcept>
#include <string>

namespace extruflow {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text; carries the 1-based source line.
class ParseError : public Error {
 public:
  ParseError(int line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

class UnsupportedFeatureError : public Error {
 public:
  UnsupportedFeatureError(int line, const std::string& what)
      : Error("line " + std::to_string(line) + ": unsupported: " + what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Violated caller precondition (sizes, ranges).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of a formula (e.g. a singularity).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Explicit discretization would be unstable (step >= time constant).
class StabilityError : public Error {
 public:
  using Error::Error;
};

/// Not enough data, or data that fails a quality check (including fit quality).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Feature detection in an image or profile failed.
class DetectionError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Bad command-line usage or configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace extruflow
