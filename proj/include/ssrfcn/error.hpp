#pragma once

#include <stdexcept>
#include <string>

namespace ssrfcn {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape or configuration mismatch (kernel channels vs input, degenerate batch, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked outside its contract, e.g. a backward pass without a
/// cached train-mode forward.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Bad runtime input: undersized image, undecodable file, empty dataset.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Manifest parse failure; message carries the file name and line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Weight-file format violation; message names the offending tensor.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Metric undefined for the given scores (e.g. a one-class score set).
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Protocol construction failure: missing tags or subject overlap.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssrfcn
