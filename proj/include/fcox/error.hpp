#pragma once

#include <stdexcept>
#include <string>

namespace fcox {

// Caller passed something outside an operation's domain (bad size, bad order, ...).
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// The data itself cannot support the computation (no events, too few events, ...).
struct InvalidData : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& what, long row)
      : std::runtime_error(row >= 0 ? "row " + std::to_string(row) + ": " + what : what), row_(row) {}
  long row() const noexcept { return row_; }

 private:
  long row_;
};

// Singular systems that survive ridge escalation, non-finite objectives.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fcox
