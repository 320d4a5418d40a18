#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ftf {

enum class ErrorKind {
  // label registry
  DuplicateLabel,
  EmptyExtension,
  InvalidLabel,
  // classifier
  NoFaceDetected,
  DimensionMismatch,
  EmptyTrainingSet,
  ModelUnavailable,
  EmptyEvaluationSet,
  InvalidRecord,
  // sessions
  InvalidTimeout,
  UnknownSession,
  Unresolved,
  SessionUnresolved,
  // updates
  HoldoutMissing,
  InvalidPolicy,
  // metrics
  EmptyReport,
  EmptyWindow,
  // simulator / io
  InvalidSpec,
  InvalidConfig,
  ParseError,
  Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries a machine-readable kind so
/// callers (the HTTP layer in particular) can map it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ftf
