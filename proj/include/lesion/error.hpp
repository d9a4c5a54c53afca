#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lesion {

enum class ErrorCode {
  // dataset
  MissingHeader,
  DuplicateImageId,
  LabelOutOfDomain,
  RaggedRow,
  InvalidImageId,
  MissingImageFile,
  EmptyDataset,
  // images / preprocess
  DecodeError,
  ZeroDimension,
  PixelOutOfRange,
  FractionOutOfRange,
  // embedding
  WrongInputShape,
  BackendFailure,
  ModelLoadError,
  ShapeMismatch,
  CacheFormatError,
  BackendMismatch,
  // mlp / train
  NonFiniteInput,
  NonFiniteGradient,
  NonFiniteLoss,
  LabelMissing,
  InvalidConfig,
  // checkpoint
  BadMagic,
  UnsupportedVersion,
  TruncatedFile,
  DimensionMismatch,
  // eval
  LengthMismatch,
  Empty,
  DegenerateLabels,
  IdMismatch,
  // misc
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingHeader: return "MissingHeader";
    case ErrorCode::DuplicateImageId: return "DuplicateImageId";
    case ErrorCode::LabelOutOfDomain: return "LabelOutOfDomain";
    case ErrorCode::RaggedRow: return "RaggedRow";
    case ErrorCode::InvalidImageId: return "InvalidImageId";
    case ErrorCode::MissingImageFile: return "MissingImageFile";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::ZeroDimension: return "ZeroDimension";
    case ErrorCode::PixelOutOfRange: return "PixelOutOfRange";
    case ErrorCode::FractionOutOfRange: return "FractionOutOfRange";
    case ErrorCode::WrongInputShape: return "WrongInputShape";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::ModelLoadError: return "ModelLoadError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::CacheFormatError: return "CacheFormatError";
    case ErrorCode::BackendMismatch: return "BackendMismatch";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::LabelMissing: return "LabelMissing";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::Empty: return "Empty";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code;
/// the message is prefixed with the code name.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lesion
