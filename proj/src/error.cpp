#include "matex/error.hpp"

namespace matex {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingManifest: return "MissingManifest";
    case ErrorCode::MissingTensorFile: return "MissingTensorFile";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteTensor: return "NonFiniteTensor";
    case ErrorCode::BadManifest: return "BadManifest";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::DegenerateRange: return "DegenerateRange";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ValueNormsMissing: return "ValueNormsMissing";
    case ErrorCode::TextTensorsMissing: return "TextTensorsMissing";
    case ErrorCode::OracleFailure: return "OracleFailure";
    case ErrorCode::NoGroundTruth: return "NoGroundTruth";
    case ErrorCode::ZeroMass: return "ZeroMass";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::BadLexicon: return "BadLexicon";
  }
  return "Unknown";
}

}  // namespace matex
