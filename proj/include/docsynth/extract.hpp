#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "docsynth/backend.hpp"
#include "docsynth/core.hpp"
#include "docsynth/prompts.hpp"

namespace docsynth {

struct EvidenceRecord {
    int page_index = 0;
    std::string snippet;
    double score = 0.0;
    bool was_clamped = false;
    bool is_source = false;

    bool operator==(const EvidenceRecord&) const = default;
};

/// Threshold-filtered, relevance-sorted, top-K evidence. The constructor
/// rejects (InvariantViolation) anything that is not: at most k_limit entries,
/// scores non-increasing, every score >= threshold, unique page indices.
class RankedEvidence {
public:
    RankedEvidence(std::vector<EvidenceRecord> entries, int k_limit, double threshold);

    std::span<const EvidenceRecord> entries() const noexcept { return entries_; }
    int k_limit() const noexcept { return k_limit_; }
    double threshold() const noexcept { return threshold_; }
    bool empty() const noexcept { return entries_.empty(); }
    std::size_t size() const noexcept { return entries_.size(); }

    bool operator==(const RankedEvidence&) const = default;

private:
    std::vector<EvidenceRecord> entries_;
    int k_limit_;
    double threshold_;
};

/// One image part (the page) plus the question and response-format
/// instructions. Source pages additionally get the score-floor instruction.
ChatRequest build_extraction_prompt(const PageImage& page, const Question& question, bool is_source,
                                    const PipelineConfig& cfg, const PromptTemplates& prompts = {});

/// Parses "RELEVANCE: <real>" followed by "EVIDENCE: <text to end>".
/// page_index and is_source are left for the caller. Throws UnparseableScore,
/// or MissingEvidence when a score at or above the threshold comes without text.
EvidenceRecord parse_extraction(const ChatResponse& response, const PipelineConfig& cfg);

enum class ExtractionStatus { ok, retried, degraded };

std::string_view to_string(ExtractionStatus status) noexcept;

/// Per-page outcome, written to the extraction log.
struct ExtractionEvent {
    int page_index = 0;
    ExtractionStatus status = ExtractionStatus::ok;
    double score = 0.0;
    bool was_clamped = false;
    bool is_source = false;
    bool source_below_floor = false;
    std::size_t snippet_chars = 0;
    std::string error;
};

struct DocumentExtraction {
    std::vector<EvidenceRecord> records;  // exactly page_count, page order
    std::vector<ExtractionEvent> events;  // same order as records
    std::size_t backend_calls = 0;
    std::size_t failed_calls = 0;
    std::size_t degraded_pages = 0;
};

/// Scores every page independently through complete_batch. Pages whose call
/// fails, or whose reply stays unparseable after one retry, degrade to score
/// 0.0 with an empty snippet; the document never aborts.
DocumentExtraction extract_document(const DocumentRef& doc, const Question& question, const PipelineConfig& cfg,
                                    ChatBackend& backend, const RetryPolicy& policy,
                                    const PromptTemplates& prompts = {});

nlohmann::json to_json(const ExtractionEvent& event);

/// Filter score >= threshold, sort by (score desc, page asc), keep top_k.
/// Throws DuplicatePage if two records share a page index.
RankedEvidence rank_and_select(std::span<const EvidenceRecord> records, double threshold, int top_k);
RankedEvidence rank_and_select(std::span<const EvidenceRecord> records, const PipelineConfig& cfg);

}  // namespace docsynth
