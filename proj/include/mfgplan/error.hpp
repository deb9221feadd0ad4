#pragma once

#include <stdexcept>
#include <string>

namespace mfgplan {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input. Line and column are 1-based; 0 means unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, int line, int column)
      : Error(format(message, line, column)), line_(line), column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

 private:
  static std::string format(const std::string& message, int line, int column) {
    if (line <= 0) return message;
    return "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + message;
  }

  int line_;
  int column_;
};

/// Expression evaluation failure (division by zero, log domain, non-finite result).
class EvalError : public Error {
 public:
  using Error::Error;
};

/// A generator matrix failed the zero-row-sum / nonnegative-off-diagonal test.
class KolmogorovError : public Error {
 public:
  using Error::Error;
};

/// ODE integration left the admissible region (simplex or finite range).
class IntegrationError : public Error {
 public:
  using Error::Error;
};

/// Inputs that do not satisfy an operation's preconditions.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace mfgplan
