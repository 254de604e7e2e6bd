#pragma once

#include <stdexcept>
#include <string>

namespace psgcd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape mismatch between operands; message names both shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Numerically unusable input (zero-norm row, empty batch, ...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or constraint violation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; message carries byte offset or field name.
class IngestionError : public Error {
 public:
  using Error::Error;
};

// Split construction failure (e.g. empty class).
class SplitError : public Error {
 public:
  using Error::Error;
};

// Evaluation protocol violation (e.g. cluster count != class count).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Finite-difference probe hit a non-finite loss; message names the parameter
// and entry.
class ProbeError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during optimization; names the offending term.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& msg, std::string term)
      : Error(msg), term_(std::move(term)) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

}  // namespace psgcd
