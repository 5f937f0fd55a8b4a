#pragma once

#include <string>
#include <vector>

#include "docsynth/backend.hpp"
#include "docsynth/core.hpp"
#include "docsynth/extract.hpp"
#include "docsynth/prompts.hpp"
#include "docsynth/rng.hpp"

namespace docsynth {

enum class Branch { visual, text };

std::string_view to_string(Branch branch) noexcept;
Branch parse_branch(std::string_view text);

struct AnswerRecord {
    std::string text;
    Branch branch = Branch::visual;
    std::string teacher_model;
    std::vector<int> input_page_indices;  // empty for the text branch

    bool operator==(const AnswerRecord&) const = default;
};

/// text with probability text_ratio.
Branch choose_branch(Rng& rng, double text_ratio);

/// Pages handed to the visual teacher: the ranked pages in ascending order, or
/// the question's source pages when nothing survived ranking.
std::vector<int> visual_branch_pages(const RankedEvidence& ranked, const Question& question);

/// "Page X:" + image for each page of visual_branch_pages(), then the
/// question. Never carries evidence text.
ChatRequest build_visual_branch_request(const DocumentRef& doc, const RankedEvidence& ranked,
                                        const Question& question, const PipelineConfig& cfg,
                                        const PromptTemplates& prompts = {});

/// "Page X: <snippet>" lines in ranked order, then the question. No images.
/// Throws NoEvidence when `ranked` is empty.
ChatRequest build_text_branch_request(const RankedEvidence& ranked, const Question& question,
                                      const PipelineConfig& cfg, const PromptTemplates& prompts = {});

/// The rendered evidence block shared by the text branch and v2 traces.
std::string render_evidence_lines(const RankedEvidence& ranked);

/// Sends the branch request and wraps the reply. Throws BackendFailure or
/// EmptyGeneration. An empty ranking always routes to the visual branch.
AnswerRecord generate_answer(Branch branch, const DocumentRef& doc, const RankedEvidence& ranked,
                             const Question& question, ChatBackend& backend, const RetryPolicy& policy,
                             const PipelineConfig& cfg, const PromptTemplates& prompts = {});

}  // namespace docsynth
