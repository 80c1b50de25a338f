#pragma once

#include <stdexcept>
#include <string>

namespace behave {

enum class ErrorKind {
  ZeroNormInput,
  ShapeMismatch,
  DimensionMismatch,
  NonFiniteInput,
  NonFiniteState,
  InvalidSpec,
  LengthNotCompressible,
  NonUnitInput,
  DegenerateBatch,
  DivergenceDetected,
  RangeError,
  EmptyClause,
  OverlapTooLarge,
  CountMismatch,
  BoundaryOutOfRange,
  TooFewSamples,
  UnstableWorld,
  DegenerateRho,
  PreconditionViolated,
  UnknownToken,
  ConfigInvalid,
  MissingArtifact,
  FormatError,
};

const char* to_string(ErrorKind kind) noexcept;

/// Every recoverable failure in the library is reported as an Error carrying
/// its kind; callers (the CLI in particular) map kinds to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace behave
