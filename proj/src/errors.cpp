#include "behave/errors.hpp"

namespace behave {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::ZeroNormInput: return "ZeroNormInput";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::NonFiniteState: return "NonFiniteState";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::LengthNotCompressible: return "LengthNotCompressible";
    case ErrorKind::NonUnitInput: return "NonUnitInput";
    case ErrorKind::DegenerateBatch: return "DegenerateBatch";
    case ErrorKind::DivergenceDetected: return "DivergenceDetected";
    case ErrorKind::RangeError: return "RangeError";
    case ErrorKind::EmptyClause: return "EmptyClause";
    case ErrorKind::OverlapTooLarge: return "OverlapTooLarge";
    case ErrorKind::CountMismatch: return "CountMismatch";
    case ErrorKind::BoundaryOutOfRange: return "BoundaryOutOfRange";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::UnstableWorld: return "UnstableWorld";
    case ErrorKind::DegenerateRho: return "DegenerateRho";
    case ErrorKind::PreconditionViolated: return "PreconditionViolated";
    case ErrorKind::UnknownToken: return "UnknownToken";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::MissingArtifact: return "MissingArtifact";
    case ErrorKind::FormatError: return "FormatError";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace behave
