#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sed {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or combination (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data that violates a representation invariant (CLI exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary/text input; carries the byte offset where parsing failed.
class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::uint64_t offset);
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Caller broke an API contract (shape mismatch, misaligned arguments).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Sample longer than the model's maximum sequence length.
class CapacityError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Checkpoints that were not trained against each other (CLI exit code 4).
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace sed
