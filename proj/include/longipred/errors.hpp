#pragma once

#include <stdexcept>
#include <string>

namespace longipred {

/// Error categories used across the library. The CLI maps NotConverged to
/// exit code 3 and everything else to exit code 2.
enum class ErrorCode {
  MissingSubject,
  BadGenotype,
  RaggedRow,
  NonFiniteValue,
  InvalidValue,
  LengthMismatch,
  NonPositiveVariance,
  DegenerateCohort,
  SingularV,
  NotConverged,
  DegenerateDesign,
  TooFewSamples,
  NotInvertible,
  DimensionMismatch,
  UnconvergedModel,
  ZeroTruth,
  InvalidScenario,
  IoError,
  ParseError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace longipred
