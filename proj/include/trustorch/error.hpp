#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace trustorch {

// Every failure the library can report. The numeric values are mirrored by
// tor_status in trustorch.h and must stay in sync.
enum class ErrorCode : int {
  Ok = 0,
  UnknownLabel = 1,
  EmptyLog = 2,
  DegenerateLog = 3,
  LengthMismatch = 4,
  ZeroMass = 5,
  MissingMetric = 6,
  ZeroVector = 7,
  DimensionMismatch = 8,
  DuplicateId = 9,
  EmptyIndex = 10,
  EmptyHits = 11,
  ZeroSimilarityMass = 12,
  FormatVersionMismatch = 13,
  CorruptRecord = 14,
  EmptyVotes = 15,
  NoJsonFound = 16,
  MissingKey = 17,
  ConfidenceOutOfRange = 18,
  AgentUnreachable = 19,
  FormatExhausted = 20,
  MissingFixtureEntry = 21,
  NoPredictions = 22,
  IndexUnavailable = 23,
  ConfigError = 24,
  NoErrors = 25,
  AlignmentError = 26,
  MissingLog = 27,
  UnknownLabelDir = 28,
  EmptyClass = 29,
  InvalidArgument = 30,
  Io = 31,
  Internal = 99,
};

std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised when parsing a persisted record fails; carries the 1-based line.
class CorruptRecordError : public Error {
 public:
  CorruptRecordError(std::size_t line, const std::string& message)
      : Error(ErrorCode::CorruptRecord,
              "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace trustorch
