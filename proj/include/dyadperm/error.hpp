#pragma once

#include <stdexcept>
#include <string>

namespace dyadperm {

// Failure taxonomy shared by every layer. The CLI maps these to process exit
// codes: usage problems exit 2, data/validation problems exit 3, numeric
// failures (degeneracy, singularity) exit 4.
enum class ErrorCode {
  // matrix construction
  NotSquare,
  AsymmetricBeyondTolerance,
  NonzeroDiagonal,
  TooSmall,
  NonFiniteEntry,
  // permutations
  PermutationLengthMismatch,
  NotBijection,
  // estimation
  DimensionMismatch,
  DegenerateMatrix,
  ZeroVariance,
  SingularDesign,
  SingularVariance,
  EmptyReplicates,
  // simulation references
  UnknownSpec,
  NoClosedForm,
  // ingestion
  ParseError,
  ConflictingDuplicateEdge,
  SelfLoop,
  UnknownLabel,
  // command line
  UsageError,
};

inline const char* error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::NotSquare: return "NotSquare";
    case ErrorCode::AsymmetricBeyondTolerance: return "AsymmetricBeyondTolerance";
    case ErrorCode::NonzeroDiagonal: return "NonzeroDiagonal";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::NonFiniteEntry: return "NonFiniteEntry";
    case ErrorCode::PermutationLengthMismatch: return "PermutationLengthMismatch";
    case ErrorCode::NotBijection: return "NotBijection";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegenerateMatrix: return "DegenerateMatrix";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::SingularVariance: return "SingularVariance";
    case ErrorCode::EmptyReplicates: return "EmptyReplicates";
    case ErrorCode::UnknownSpec: return "UnknownSpec";
    case ErrorCode::NoClosedForm: return "NoClosedForm";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ConflictingDuplicateEdge: return "ConflictingDuplicateEdge";
    case ErrorCode::SelfLoop: return "SelfLoop";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::UsageError: return "UsageError";
  }
  return "UnknownError";
}

inline int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::UsageError:
      return 2;
    case ErrorCode::DegenerateMatrix:
    case ErrorCode::ZeroVariance:
    case ErrorCode::SingularDesign:
    case ErrorCode::SingularVariance:
      return 4;
    default:
      return 3;
  }
}

class DyadError : public std::runtime_error {
 public:
  DyadError(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what),
        code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw DyadError(code, what);
}

}  // namespace dyadperm
