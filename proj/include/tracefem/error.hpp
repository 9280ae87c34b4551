// Library error type. Every failure mode carries a code so callers and the
// CLI can map it to a stable name in manifests and exit codes.
#pragma once

#include <stdexcept>
#include <string>

namespace tracefem {

enum class ErrorCode {
  NonConvergence,
  DegenerateGradient,
  UnknownProblemId,
  NonDivisibleResolution,
  MaxLevelExceeded,
  EmptyBand,
  DegenerateCell,
  NonManifoldEdge,
  PointOutsideCell,
  EmptyTriangulation,
  NonFiniteEntry,
  NotApplicable,
  SingularMatrix,
  NoConvergence,
  ZeroDiagonal,
  MissingExactSolution,
  BoundaryEdge,
  EmptyRegion,
  InsufficientLevels,
  BudgetExceeded,
  ConfigError,
  IoError,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::DegenerateGradient: return "DegenerateGradient";
    case ErrorCode::UnknownProblemId: return "UnknownProblemId";
    case ErrorCode::NonDivisibleResolution: return "NonDivisibleResolution";
    case ErrorCode::MaxLevelExceeded: return "MaxLevelExceeded";
    case ErrorCode::EmptyBand: return "EmptyBand";
    case ErrorCode::DegenerateCell: return "DegenerateCell";
    case ErrorCode::NonManifoldEdge: return "NonManifoldEdge";
    case ErrorCode::PointOutsideCell: return "PointOutsideCell";
    case ErrorCode::EmptyTriangulation: return "EmptyTriangulation";
    case ErrorCode::NonFiniteEntry: return "NonFiniteEntry";
    case ErrorCode::NotApplicable: return "NotApplicable";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::ZeroDiagonal: return "ZeroDiagonal";
    case ErrorCode::MissingExactSolution: return "MissingExactSolution";
    case ErrorCode::BoundaryEdge: return "BoundaryEdge";
    case ErrorCode::EmptyRegion: return "EmptyRegion";
    case ErrorCode::InsufficientLevels: return "InsufficientLevels";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tracefem
