#include "distmark/errors.hpp"

namespace distmark {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::AlphaTooSmall: return "AlphaTooSmall";
    case ErrorCode::Unbalanced: return "Unbalanced";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::KindMismatch: return "KindMismatch";
    case ErrorCode::EmptyKey: return "EmptyKey";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::TooFewLevels: return "TooFewLevels";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::CvmMutated: return "CvmMutated";
    case ErrorCode::DuplicateUser: return "DuplicateUser";
    case ErrorCode::EmptyTestSet: return "EmptyTestSet";
    case ErrorCode::MissingTestSet: return "MissingTestSet";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::EmptyBank: return "EmptyBank";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::IncompleteReport: return "IncompleteReport";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "UnknownError";
}

}  // namespace distmark
