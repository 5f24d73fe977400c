#pragma once

#include <stdexcept>
#include <string>

namespace distmark {

// Failure categories surfaced across the library. Each maps to one named
// error condition in the public contracts; the CLI turns any of them into
// exit code 1.
enum class ErrorCode {
  AlphaTooSmall,
  Unbalanced,
  ShapeMismatch,
  KindMismatch,
  EmptyKey,
  NonFiniteActivation,
  NonFiniteGradient,
  EmptyBatch,
  ImageTooSmall,
  TooFewLevels,
  DivergenceDetected,
  CvmMutated,
  DuplicateUser,
  EmptyTestSet,
  MissingTestSet,
  TooFewSamples,
  EmptyBank,
  ZeroVector,
  DimensionMismatch,
  IncompleteReport,
  IoError,
  InvalidConfig,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace distmark
