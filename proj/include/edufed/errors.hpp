#pragma once

#include <stdexcept>
#include <string>

namespace edufed {

// Base of every error the library throws. Subclasses exist so callers (and the
// CLI exit-code mapping) can tell configuration problems from runtime ones.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EncodingError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class OptimizerError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class UndefinedAucError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A failure inside a federated run, with the round and subgroup prepended.
class RunError : public Error {
 public:
  using Error::Error;
};

}  // namespace edufed
