#pragma once

#include <stdexcept>
#include <string>

namespace mmt {

// Exit codes used by the command-line front end.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kDivergence = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kData; }
};

/// Incompatible tensor extents; the message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Index outside a table or container.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Violated call contract (non-scalar loss, empty pool, K out of range...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kConfig; }
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite training loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kDivergence; }
};

}  // namespace mmt
