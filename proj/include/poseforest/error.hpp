#pragma once

#include <stdexcept>
#include <string>

namespace pf {

enum class ErrorKind {
  BehindCamera,
  NonPositiveDepth,
  EmptyMesh,
  InvalidMesh,
  NothingVisible,
  InsufficientSamples,
  CorruptModel,
  EmptyTrainingSet,
  ModelMismatch,
  InvalidRange,
  DegenerateView,
  TooFewFrames,
  InvalidArgument,
  Io,
};

const char* to_string(ErrorKind kind);

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::BehindCamera: return "BehindCamera";
    case ErrorKind::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorKind::EmptyMesh: return "EmptyMesh";
    case ErrorKind::InvalidMesh: return "InvalidMesh";
    case ErrorKind::NothingVisible: return "NothingVisible";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::CorruptModel: return "CorruptModel";
    case ErrorKind::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorKind::ModelMismatch: return "ModelMismatch";
    case ErrorKind::InvalidRange: return "InvalidRange";
    case ErrorKind::DegenerateView: return "DegenerateView";
    case ErrorKind::TooFewFrames: return "TooFewFrames";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace pf
