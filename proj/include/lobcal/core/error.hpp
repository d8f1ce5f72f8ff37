#pragma once

#include <stdexcept>
#include <string>

namespace lobcal {

/// Broad failure category. Maps onto the CLI exit codes (usage 1, data 2, numeric 3).
enum class ErrorKind { Usage = 1, Data = 2, Numeric = 3 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
  [[nodiscard]] int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
  ErrorKind kind_;
};

/// An order violating the book's input contract (zero volume, non-positive price, wrong kind).
class InvalidOrder : public Error {
public:
  explicit InvalidOrder(const std::string& what) : Error(ErrorKind::Data, "invalid order: " + what) {}
};

/// A model parameter or configuration value outside its valid domain.
class ParameterError : public Error {
public:
  explicit ParameterError(const std::string& what) : Error(ErrorKind::Usage, "parameter error: " + what) {}
};

/// A simulated state became non-finite.
class SimulationDiverged : public Error {
public:
  explicit SimulationDiverged(const std::string& what)
      : Error(ErrorKind::Numeric, "simulation diverged: " + what) {}
};

/// Input data that is too short, malformed or mismatched.
class DataError : public Error {
public:
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

/// Training or density evaluation produced non-finite values.
class NumericError : public Error {
public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

/// Misuse of an API contract (e.g. backward on a non-scalar).
class ContractError : public std::logic_error {
public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace lobcal
