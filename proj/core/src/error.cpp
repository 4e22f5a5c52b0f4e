#include "llp/error.hpp"

#include <utility>

namespace llp {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidBag: return "invalid-bag";
    case ErrorKind::LabelDomain: return "label-domain";
    case ErrorKind::InvalidConfiguration: return "invalid-configuration";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::NumericDomain: return "numeric-domain";
    case ErrorKind::UndefinedPoint: return "undefined-point";
    case ErrorKind::NonConvergence: return "non-convergence";
    case ErrorKind::Integrity: return "integrity";
    case ErrorKind::IncompatibleVersion: return "incompatible-version";
    case ErrorKind::Resolution: return "resolution";
    case ErrorKind::Diverged: return "diverged";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

ParseError::ParseError(std::size_t line, const std::string& what)
    : Error(ErrorKind::Parse, "line " + std::to_string(line) + ": " + what), line_(line) {}

NonConvergenceError::NonConvergenceError(const std::string& what, std::vector<double> best_iterate,
                                         double best_residual)
    : Error(ErrorKind::NonConvergence, what),
      best_(std::move(best_iterate)),
      residual_(best_residual) {}

DivergenceError::DivergenceError(const std::string& what, std::string snapshot)
    : Error(ErrorKind::Diverged, what), snapshot_(std::move(snapshot)) {}

}  // namespace llp
