#include "docsynth/error.hpp"

namespace docsynth {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::MissingDirectory: return "MissingDirectory";
        case ErrorCode::NonContiguousPageNumbers: return "NonContiguousPageNumbers";
        case ErrorCode::EmptyDocument: return "EmptyDocument";
        case ErrorCode::InvalidPage: return "InvalidPage";
        case ErrorCode::InvalidRange: return "InvalidRange";
        case ErrorCode::InconsistentBounds: return "InconsistentBounds";
        case ErrorCode::UnknownKey: return "UnknownKey";
        case ErrorCode::InvalidType: return "InvalidType";
        case ErrorCode::InvalidQuestion: return "InvalidQuestion";
        case ErrorCode::ExhaustedRetries: return "ExhaustedRetries";
        case ErrorCode::MalformedResponse: return "MalformedResponse";
        case ErrorCode::Transport: return "Transport";
        case ErrorCode::HttpStatus: return "HttpStatus";
        case ErrorCode::ScriptMiss: return "ScriptMiss";
        case ErrorCode::SpanTooLarge: return "SpanTooLarge";
        case ErrorCode::EmptyGeneration: return "EmptyGeneration";
        case ErrorCode::BackendFailure: return "BackendFailure";
        case ErrorCode::UnparseableScore: return "UnparseableScore";
        case ErrorCode::MissingEvidence: return "MissingEvidence";
        case ErrorCode::NoEvidence: return "NoEvidence";
        case ErrorCode::DuplicatePage: return "DuplicatePage";
        case ErrorCode::InvariantViolation: return "InvariantViolation";
        case ErrorCode::MalformedThinkBlock: return "MalformedThinkBlock";
        case ErrorCode::SourceTooSmall: return "SourceTooSmall";
        case ErrorCode::InvalidMixSpec: return "InvalidMixSpec";
        case ErrorCode::MalformedLine: return "MalformedLine";
        case ErrorCode::IncompatibleStores: return "IncompatibleStores";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::InvalidCheckpoint: return "InvalidCheckpoint";
        case ErrorCode::InvalidPlan: return "InvalidPlan";
        case ErrorCode::EmptyColumn: return "EmptyColumn";
        case ErrorCode::NonPositiveMax: return "NonPositiveMax";
        case ErrorCode::MissingScore: return "MissingScore";
        case ErrorCode::UnknownBase: return "UnknownBase";
        case ErrorCode::UnknownModel: return "UnknownModel";
        case ErrorCode::UnknownBenchmark: return "UnknownBenchmark";
        case ErrorCode::AxisMismatch: return "AxisMismatch";
        case ErrorCode::InsufficientRuns: return "InsufficientRuns";
        case ErrorCode::MalformedTable: return "MalformedTable";
    }
    return "Unknown";
}

}  // namespace docsynth
