#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace llp {

enum class ErrorKind {
  InvalidBag,
  LabelDomain,
  InvalidConfiguration,
  Parse,
  Validation,
  NumericDomain,
  UndefinedPoint,
  NonConvergence,
  Integrity,
  IncompatibleVersion,
  Resolution,
  Diverged,
};

const char* to_string(ErrorKind kind);

/// Base of every error raised by the toolkit. Callers switch on kind() or
/// catch one of the refined subclasses below when they need the payload.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what);

  /// 1-based line of the offending record; 0 when the whole file is unreadable.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, std::vector<double> best_iterate,
                      double best_residual);

  const std::vector<double>& best_iterate() const noexcept { return best_; }
  double best_residual() const noexcept { return residual_; }

 private:
  std::vector<double> best_;
  double residual_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string snapshot);

  /// JSON snapshot of the step and loss components at the point of failure.
  const std::string& snapshot() const noexcept { return snapshot_; }

 private:
  std::string snapshot_;
};

}  // namespace llp
