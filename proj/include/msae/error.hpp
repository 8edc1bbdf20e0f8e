#pragma once

#include <stdexcept>
#include <string>

namespace msae {

enum class ErrorCode {
  DegenerateBout,
  SliceMisaligned,
  ParseError,
  ShapeError,
  Io,
  VersionMismatch,
  ChecksumMismatch,
  EmptyVisible,
  PlanMismatch,
  PositionOutOfRange,
  EmptyLossSupport,
  NonFiniteGradient,
  InvalidConfig,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateBout: return "DegenerateBout";
    case ErrorCode::SliceMisaligned: return "SliceMisaligned";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::EmptyVisible: return "EmptyVisible";
    case ErrorCode::PlanMismatch: return "PlanMismatch";
    case ErrorCode::PositionOutOfRange: return "PositionOutOfRange";
    case ErrorCode::EmptyLossSupport: return "EmptyLossSupport";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a code so callers (notably
/// the CLI) can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace msae
