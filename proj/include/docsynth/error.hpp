#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace docsynth {

enum class ErrorCode {
    // core
    MissingDirectory,
    NonContiguousPageNumbers,
    EmptyDocument,
    InvalidPage,
    InvalidRange,
    InconsistentBounds,
    UnknownKey,
    InvalidType,
    InvalidQuestion,
    // backend
    ExhaustedRetries,
    MalformedResponse,
    Transport,
    HttpStatus,
    ScriptMiss,
    // generation
    SpanTooLarge,
    EmptyGeneration,
    BackendFailure,
    UnparseableScore,
    MissingEvidence,
    NoEvidence,
    DuplicatePage,
    InvariantViolation,
    // dataset
    MalformedThinkBlock,
    SourceTooSmall,
    InvalidMixSpec,
    MalformedLine,
    // merge
    IncompatibleStores,
    IoFailure,
    InvalidCheckpoint,
    InvalidPlan,
    // evalstats
    EmptyColumn,
    NonPositiveMax,
    MissingScore,
    UnknownBase,
    UnknownModel,
    UnknownBenchmark,
    AxisMismatch,
    InsufficientRuns,
    MalformedTable,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Base exception for every failure raised by the library. The code is the
/// stable, testable part; the message is for humans.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// A single failed backend attempt. `transient` marks failures worth retrying
/// (timeouts, connection resets, HTTP 408/429/5xx).
class BackendError : public Error {
public:
    BackendError(ErrorCode code, const std::string& message, bool transient, int http_status = 0)
        : Error(code, message), transient_(transient), http_status_(http_status) {}

    bool transient() const noexcept { return transient_; }
    int http_status() const noexcept { return http_status_; }

private:
    bool transient_;
    int http_status_;
};

/// Raised when a request gave up; carries the last underlying error.
class ExhaustedRetriesError : public Error {
public:
    ExhaustedRetriesError(int attempts, ErrorCode last_code, const std::string& last_message)
        : Error(ErrorCode::ExhaustedRetries,
                "gave up after " + std::to_string(attempts) + " attempt(s); last error: " + last_message),
          attempts_(attempts), last_code_(last_code), last_message_(last_message) {}

    int attempts() const noexcept { return attempts_; }
    ErrorCode last_code() const noexcept { return last_code_; }
    const std::string& last_message() const noexcept { return last_message_; }

private:
    int attempts_;
    ErrorCode last_code_;
    std::string last_message_;
};

class MalformedLineError : public Error {
public:
    MalformedLineError(std::size_t line, const std::string& message)
        : Error(ErrorCode::MalformedLine, "line " + std::to_string(line) + ": " + message), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Failure inside a multi-step merge plan, tagged with the 0-based step.
class MergeStepError : public Error {
public:
    MergeStepError(std::size_t step, ErrorCode code, const std::string& message)
        : Error(code, "merge step " + std::to_string(step) + ": " + message), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

}  // namespace docsynth
