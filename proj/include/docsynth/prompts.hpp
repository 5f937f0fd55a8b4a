#pragma once

#include <map>
#include <string>

#include "docsynth/core.hpp"

namespace docsynth {

/// Prompt text used by the request builders. Every field can be overridden by
/// a file in the configured prompt directory:
///
///   question_<type>.txt   question synthesis, one per question type
///   question.txt          fallback for types without their own file
///   extract.txt           per-page evidence extraction
///   extract_source.txt    extra instruction appended for source pages
///   answer_visual.txt     visual-branch answer instruction
///   answer_text.txt       text-branch answer instruction
///
/// Placeholders: {question}, {type}, {floor}, {max}, {min}, {page}.
struct PromptTemplates {
    std::map<std::string, std::string> question_by_type;
    std::string question_fallback =
        "Write one {type} question that can be answered using only the pages shown above. "
        "Reply with the question text only.";
    std::string extract =
        "You are shown one page of a longer document and a question about the document.\n"
        "Question: {question}\n"
        "Extract any content from this page that helps answer the question, including descriptions of "
        "relevant charts, figures or tables. Then rate how relevant this page is to the question on a "
        "scale from {min} to {max}.\n"
        "Reply in exactly this format:\n"
        "RELEVANCE: <number between {min} and {max}>\n"
        "EVIDENCE: <extracted evidence, or nothing if the page is irrelevant>";
    std::string extract_source =
        "This page is one of the source pages the question was written from. "
        "Assign it a score between {floor} and {max}.";
    std::string answer_visual = "Answer the question using the document pages above.\nQuestion: {question}";
    std::string answer_text = "Answer the question using the evidence above.\nQuestion: {question}";

    const std::string& question_for(const std::string& type) const;

    /// Built-in defaults overlaid with any files found in `dir`.
    static PromptTemplates load(const fs::path& dir);
};

}  // namespace docsynth
