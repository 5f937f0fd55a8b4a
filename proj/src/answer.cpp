#include "docsynth/answer.hpp"

#include <algorithm>

#include "docsynth/text.hpp"

namespace docsynth {

std::string_view to_string(Branch branch) noexcept { return branch == Branch::text ? "text" : "visual"; }

Branch parse_branch(std::string_view text) {
    if (text == "visual") return Branch::visual;
    if (text == "text") return Branch::text;
    throw Error(ErrorCode::InvalidType, "unknown branch '" + std::string(text) + "'");
}

Branch choose_branch(Rng& rng, double text_ratio) {
    if (text_ratio < 0.0 || text_ratio > 1.0) {
        throw Error(ErrorCode::InvalidRange, "text_ratio must lie in [0, 1]");
    }
    return rng.uniform01() < text_ratio ? Branch::text : Branch::visual;
}

std::vector<int> visual_branch_pages(const RankedEvidence& ranked, const Question& question) {
    std::vector<int> pages;
    if (ranked.empty()) {
        pages.assign(question.source_pages.begin(), question.source_pages.end());
    } else {
        for (const auto& e : ranked.entries()) pages.push_back(e.page_index);
        std::sort(pages.begin(), pages.end());
    }
    return pages;
}

ChatRequest build_visual_branch_request(const DocumentRef& doc, const RankedEvidence& ranked,
                                        const Question& question, const PipelineConfig& cfg,
                                        const PromptTemplates& prompts) {
    ChatMessage user{Role::user, {}};
    for (int p : visual_branch_pages(ranked, question)) {
        user.parts.emplace_back(TextPart{page_marker(p)});
        user.parts.emplace_back(ImagePart{doc.page(p)});
    }
    user.parts.emplace_back(TextPart{replace_all(prompts.answer_visual, "{question}", question.text)});

    ChatRequest request;
    request.model_id = cfg.visual_teacher_model;
    request.messages.push_back(std::move(user));
    request.max_tokens = cfg.answer_max_tokens;
    request.temperature = cfg.answer_temperature;
    return request;
}

std::string render_evidence_lines(const RankedEvidence& ranked) {
    std::string out;
    for (const auto& e : ranked.entries()) {
        if (!out.empty()) out += '\n';
        out += page_marker(e.page_index);
        out += ' ';
        out += single_line(e.snippet);
    }
    return out;
}

ChatRequest build_text_branch_request(const RankedEvidence& ranked, const Question& question,
                                      const PipelineConfig& cfg, const PromptTemplates& prompts) {
    if (ranked.empty()) {
        throw Error(ErrorCode::NoEvidence, "text branch needs at least one ranked evidence entry");
    }
    ChatMessage user{Role::user, {}};
    user.parts.emplace_back(TextPart{render_evidence_lines(ranked)});
    user.parts.emplace_back(TextPart{replace_all(prompts.answer_text, "{question}", question.text)});

    ChatRequest request;
    request.model_id = cfg.text_teacher_model;
    request.messages.push_back(std::move(user));
    request.max_tokens = cfg.answer_max_tokens;
    request.temperature = cfg.answer_temperature;
    return request;
}

AnswerRecord generate_answer(Branch branch, const DocumentRef& doc, const RankedEvidence& ranked,
                             const Question& question, ChatBackend& backend, const RetryPolicy& policy,
                             const PipelineConfig& cfg, const PromptTemplates& prompts) {
    if (ranked.empty()) branch = Branch::visual;

    AnswerRecord answer;
    answer.branch = branch;
    ChatRequest request;
    if (branch == Branch::text) {
        request = build_text_branch_request(ranked, question, cfg, prompts);
        answer.teacher_model = cfg.text_teacher_model;
    } else {
        request = build_visual_branch_request(doc, ranked, question, cfg, prompts);
        answer.teacher_model = cfg.visual_teacher_model;
        answer.input_page_indices = visual_branch_pages(ranked, question);
    }

    ChatResponse response;
    try {
        response = complete(backend, request, policy);
    } catch (const Error& e) {
        throw Error(ErrorCode::BackendFailure, std::string("answer generation: ") + e.what());
    }
    answer.text = trim(sanitize_generated(response.text));
    if (answer.text.empty()) {
        throw Error(ErrorCode::EmptyGeneration, "teacher returned a blank answer");
    }
    return answer;
}

}  // namespace docsynth
