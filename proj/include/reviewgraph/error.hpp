#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rvg {

enum class ErrorKind {
  // graph-core
  UnknownNode,
  EmptyGraph,
  BadGraphFile,
  // extraction
  MalformedTriple,
  WrongGroupSpeaker,
  UnknownRelationLabel,
  NotJson,
  MissingArrayKey,
  TooManyMalformed,
  MissingDimensionAssignment,
  UnknownCategory,
  // numerics
  ShapeMismatch,
  EmptyVector,
  BadLabel,
  NonFiniteLoss,
  // hgt-model
  MissingEmbedding,
  DimMismatch,
  BadConfig,
  // training
  NonFiniteGradient,
  EmptySplit,
  LengthMismatch,
  DegenerateSample,
  IoError,
  VersionMismatch,
  CorruptPayload,
  // orchestration
  EndpointError,
  EmptyCompletion,
  ExtractionFailed,
  ClassificationFailed,
  InconsistentDimension,
  // cli
  Usage,
  GradcheckFailed,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownNode: return "UnknownNode";
    case ErrorKind::EmptyGraph: return "EmptyGraph";
    case ErrorKind::BadGraphFile: return "BadGraphFile";
    case ErrorKind::MalformedTriple: return "MalformedTriple";
    case ErrorKind::WrongGroupSpeaker: return "WrongGroupSpeaker";
    case ErrorKind::UnknownRelationLabel: return "UnknownRelationLabel";
    case ErrorKind::NotJson: return "NotJson";
    case ErrorKind::MissingArrayKey: return "MissingArrayKey";
    case ErrorKind::TooManyMalformed: return "TooManyMalformed";
    case ErrorKind::MissingDimensionAssignment: return "MissingDimensionAssignment";
    case ErrorKind::UnknownCategory: return "UnknownCategory";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyVector: return "EmptyVector";
    case ErrorKind::BadLabel: return "BadLabel";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::MissingEmbedding: return "MissingEmbedding";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::BadConfig: return "BadConfig";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::DegenerateSample: return "DegenerateSample";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptPayload: return "CorruptPayload";
    case ErrorKind::EndpointError: return "EndpointError";
    case ErrorKind::EmptyCompletion: return "EmptyCompletion";
    case ErrorKind::ExtractionFailed: return "ExtractionFailed";
    case ErrorKind::ClassificationFailed: return "ClassificationFailed";
    case ErrorKind::InconsistentDimension: return "InconsistentDimension";
    case ErrorKind::Usage: return "Usage";
    case ErrorKind::GradcheckFailed: return "GradcheckFailed";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above so
/// callers (and the CLI exit-code mapping) can dispatch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace rvg
