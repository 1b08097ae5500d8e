// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace deltaforge {

enum class ErrorKind {
  // container format / IO
  MalformedHeader,
  UnsupportedDtype,
  MissingShard,
  UnknownTensor,
  TruncatedFile,
  DuplicateName,
  IoFailure,
  // weight-space algebra
  NameSetMismatch,
  ShapeMismatch,
  IntegerTensorDiffers,
  PlanMismatch,
  EmptyDiffList,
  // connectivity / evaluation
  IndexMisalignment,
  InvalidSize,
  SpecMismatch,
  MissingDiffSource,
  FinetunerFailed,
  InvalidArgument,
  // numeric failures
  NonFiniteResult,
  NonFiniteLoss,
  NonFiniteMetric,
  DivergedLoss,
};

const char* error_kind_name(ErrorKind kind);

// True for error kinds caused by NaN/Inf or divergence rather than bad data.
bool is_numeric_failure(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorKind::MissingShard: return "MissingShard";
    case ErrorKind::UnknownTensor: return "UnknownTensor";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::DuplicateName: return "DuplicateName";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::NameSetMismatch: return "NameSetMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::IntegerTensorDiffers: return "IntegerTensorDiffers";
    case ErrorKind::PlanMismatch: return "PlanMismatch";
    case ErrorKind::EmptyDiffList: return "EmptyDiffList";
    case ErrorKind::IndexMisalignment: return "IndexMisalignment";
    case ErrorKind::InvalidSize: return "InvalidSize";
    case ErrorKind::SpecMismatch: return "SpecMismatch";
    case ErrorKind::MissingDiffSource: return "MissingDiffSource";
    case ErrorKind::FinetunerFailed: return "FinetunerFailed";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NonFiniteResult: return "NonFiniteResult";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::NonFiniteMetric: return "NonFiniteMetric";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
  }
  return "Error";
}

inline bool is_numeric_failure(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonFiniteResult:
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::NonFiniteMetric:
    case ErrorKind::DivergedLoss:
      return true;
    default:
      return false;
  }
}

}  // namespace deltaforge
