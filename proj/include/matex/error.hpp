#pragma once

#include <stdexcept>
#include <string>

namespace matex {

enum class ErrorCode {
  MissingManifest,
  MissingTensorFile,
  ShapeMismatch,
  NonFiniteTensor,
  BadManifest,
  Io,
  DegenerateRange,
  DimensionMismatch,
  ValueNormsMissing,
  TextTensorsMissing,
  OracleFailure,
  NoGroundTruth,
  ZeroMass,
  InvalidArgument,
  BadLexicon,
};

const char* to_string(ErrorCode code) noexcept;

// Single exception type for the engine; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace matex
