#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace moca3d {

enum class ErrorCode {
  InvalidArgument,
  NonPositiveDepth,
  VirtualDepthNotConverted,
  NonPositiveInput,
  DegenerateBox,
  ShapeMismatch,
  Diverged,
  NonFiniteCost,
  NonPositiveDiagonal,
  DegenerateCorners,
  DepthSpaceMismatch,
  NonPositiveGtDepth,
  MissingIntrinsics,
  UnmatchedInstance,
  SchemaError,
  GenerationExhausted,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::VirtualDepthNotConverted: return "VirtualDepthNotConverted";
    case ErrorCode::NonPositiveInput: return "NonPositiveInput";
    case ErrorCode::DegenerateBox: return "DegenerateBox";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::NonFiniteCost: return "NonFiniteCost";
    case ErrorCode::NonPositiveDiagonal: return "NonPositiveDiagonal";
    case ErrorCode::DegenerateCorners: return "DegenerateCorners";
    case ErrorCode::DepthSpaceMismatch: return "DepthSpaceMismatch";
    case ErrorCode::NonPositiveGtDepth: return "NonPositiveGtDepth";
    case ErrorCode::MissingIntrinsics: return "MissingIntrinsics";
    case ErrorCode::UnmatchedInstance: return "UnmatchedInstance";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::GenerationExhausted: return "GenerationExhausted";
  }
  return "Unknown";
}

// All library failures are reported through this type; code() is stable and
// machine-checkable, what() carries the human-readable context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace moca3d
