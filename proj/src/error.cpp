#include "ftf/error.hpp"

namespace ftf {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::DuplicateLabel: return "DuplicateLabel";
    case ErrorKind::EmptyExtension: return "EmptyExtension";
    case ErrorKind::InvalidLabel: return "InvalidLabel";
    case ErrorKind::NoFaceDetected: return "NoFaceDetected";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorKind::ModelUnavailable: return "ModelUnavailable";
    case ErrorKind::EmptyEvaluationSet: return "EmptyEvaluationSet";
    case ErrorKind::InvalidRecord: return "InvalidRecord";
    case ErrorKind::InvalidTimeout: return "InvalidTimeout";
    case ErrorKind::UnknownSession: return "UnknownSession";
    case ErrorKind::Unresolved: return "Unresolved";
    case ErrorKind::SessionUnresolved: return "SessionUnresolved";
    case ErrorKind::HoldoutMissing: return "HoldoutMissing";
    case ErrorKind::InvalidPolicy: return "InvalidPolicy";
    case ErrorKind::EmptyReport: return "EmptyReport";
    case ErrorKind::EmptyWindow: return "EmptyWindow";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

}  // namespace ftf
