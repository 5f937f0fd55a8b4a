#pragma once

#include <set>
#include <string>

#include "docsynth/backend.hpp"
#include "docsynth/core.hpp"
#include "docsynth/prompts.hpp"
#include "docsynth/rng.hpp"

namespace docsynth {

struct QuestionSpec {
    SourceMode mode = SourceMode::single;
    int span_len = 1;  // ignored for single mode
    std::string question_type;
};

/// single -> one page; contiguous -> an unbroken run of span_len pages;
/// random -> span_len distinct pages. Throws SpanTooLarge if span_len > page_count.
std::set<int> sample_source_pages(int page_count, const QuestionSpec& spec, Rng& rng);

/// Uniform in [2, min(8, page_count)]; 1 for single-page documents.
int default_span_len(int page_count, Rng& rng);

/// Draws mode, question type and span length from the configured lists.
QuestionSpec draw_question_spec(int page_count, const PipelineConfig& cfg, Rng& rng);

/// User turn holds "Page X:" + image for each selected page (ascending), then
/// the type-specific instruction.
ChatRequest build_question_request(const DocumentRef& doc, const std::set<int>& pages, const QuestionSpec& spec,
                                   const PipelineConfig& cfg, const PromptTemplates& prompts);

/// Throws BackendFailure when the backend gives up and EmptyGeneration when
/// the reply is blank.
Question generate_question(const DocumentRef& doc, const std::set<int>& pages, const QuestionSpec& spec,
                           ChatBackend& backend, const RetryPolicy& policy, const PipelineConfig& cfg,
                           const PromptTemplates& prompts);

}  // namespace docsynth
