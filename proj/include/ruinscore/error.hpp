#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ruinscore {

enum class ErrorKind {
  MissingFile,
  SchemaViolation,
  DuplicateImageId,
  BadLine,
  UnknownClass,
  InvalidConfig,
  BackendUnavailable,
  MissingEvidence,
  ProcessExited,
  ProtocolViolation,
  Timeout,
  MissingMeta,
  DimensionMismatch,
  NonFiniteLoss,
  DegenerateData,
  LayoutMismatch,
  EmptyMatrix,
  NoGroundTruth,
  IoFailure,
};

inline constexpr std::string_view to_string(ErrorKind k) noexcept {
  switch (k) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::DuplicateImageId: return "DuplicateImageId";
    case ErrorKind::BadLine: return "BadLine";
    case ErrorKind::UnknownClass: return "UnknownClass";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::BackendUnavailable: return "BackendUnavailable";
    case ErrorKind::MissingEvidence: return "MissingEvidence";
    case ErrorKind::ProcessExited: return "ProcessExited";
    case ErrorKind::ProtocolViolation: return "ProtocolViolation";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::MissingMeta: return "MissingMeta";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::DegenerateData: return "DegenerateData";
    case ErrorKind::LayoutMismatch: return "LayoutMismatch";
    case ErrorKind::EmptyMatrix: return "EmptyMatrix";
    case ErrorKind::NoGroundTruth: return "NoGroundTruth";
    case ErrorKind::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

// Every failure raised by the library. `detail()` carries the payload the
// caller usually wants to match on (a field path, an image id, a task name).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string detail)
      : std::runtime_error(std::string(to_string(kind)) + "(" + detail + ")"),
        kind_(kind),
        detail_(std::move(detail)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

// BadLine carries its 1-based line number separately so tests and callers
// need not parse it back out of the message.
class BadLineError : public Error {
 public:
  BadLineError(std::size_t line, std::string reason)
      : Error(ErrorKind::BadLine, std::to_string(line) + ", " + reason),
        line_(line),
        reason_(std::move(reason)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::size_t line_;
  std::string reason_;
};

}  // namespace ruinscore
