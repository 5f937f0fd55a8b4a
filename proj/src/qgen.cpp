#include "docsynth/qgen.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "docsynth/text.hpp"

namespace docsynth {

std::set<int> sample_source_pages(int page_count, const QuestionSpec& spec, Rng& rng) {
    if (page_count < 1) {
        throw Error(ErrorCode::EmptyDocument, "cannot sample pages from an empty document");
    }
    const int span = spec.mode == SourceMode::single ? 1 : spec.span_len;
    if (span < 1) {
        throw Error(ErrorCode::InvalidRange, "span_len must be >= 1");
    }
    if (span > page_count) {
        throw Error(ErrorCode::SpanTooLarge,
                    "span_len " + std::to_string(span) + " exceeds page_count " + std::to_string(page_count));
    }

    std::set<int> pages;
    switch (spec.mode) {
        case SourceMode::single:
            pages.insert(static_cast<int>(rng.uniform_int(1, page_count)));
            break;
        case SourceMode::contiguous: {
            const int first = static_cast<int>(rng.uniform_int(1, page_count - span + 1));
            for (int p = first; p < first + span; ++p) pages.insert(p);
            break;
        }
        case SourceMode::random: {
            // Partial Fisher-Yates over 1..N.
            std::vector<int> all(static_cast<std::size_t>(page_count));
            std::iota(all.begin(), all.end(), 1);
            for (int i = 0; i < span; ++i) {
                const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(page_count - i));
                std::swap(all[static_cast<std::size_t>(i)], all[j]);
                pages.insert(all[static_cast<std::size_t>(i)]);
            }
            break;
        }
    }
    return pages;
}

int default_span_len(int page_count, Rng& rng) {
    if (page_count < 2) return 1;
    return static_cast<int>(rng.uniform_int(2, std::min(8, page_count)));
}

QuestionSpec draw_question_spec(int page_count, const PipelineConfig& cfg, Rng& rng) {
    QuestionSpec spec;
    spec.mode = cfg.source_modes[rng.below(cfg.source_modes.size())];
    spec.question_type = cfg.question_types[rng.below(cfg.question_types.size())];
    spec.span_len = spec.mode == SourceMode::single ? 1 : default_span_len(page_count, rng);
    return spec;
}

ChatRequest build_question_request(const DocumentRef& doc, const std::set<int>& pages, const QuestionSpec& spec,
                                   const PipelineConfig& cfg, const PromptTemplates& prompts) {
    ChatMessage user{Role::user, {}};
    for (int p : pages) {
        user.parts.emplace_back(TextPart{page_marker(p)});
        user.parts.emplace_back(ImagePart{doc.page(p)});
    }
    std::string instruction = replace_all(prompts.question_for(spec.question_type), "{type}", spec.question_type);
    user.parts.emplace_back(TextPart{std::move(instruction)});

    ChatRequest request;
    request.model_id = cfg.question_model;
    request.messages.push_back(std::move(user));
    request.max_tokens = cfg.question_max_tokens;
    request.temperature = cfg.question_temperature;
    return request;
}

Question generate_question(const DocumentRef& doc, const std::set<int>& pages, const QuestionSpec& spec,
                           ChatBackend& backend, const RetryPolicy& policy, const PipelineConfig& cfg,
                           const PromptTemplates& prompts) {
    Question question;
    question.source_pages = pages;
    question.source_mode = spec.mode;
    question.question_type = spec.question_type;
    validate_question(question, doc.page_count());

    const ChatRequest request = build_question_request(doc, pages, spec, cfg, prompts);
    ChatResponse response;
    try {
        response = complete(backend, request, policy);
    } catch (const Error& e) {
        throw Error(ErrorCode::BackendFailure, std::string("question generation: ") + e.what());
    }
    question.text = trim(sanitize_generated(response.text));
    if (question.text.empty()) {
        throw Error(ErrorCode::EmptyGeneration, "question generation returned blank text");
    }
    return question;
}

}  // namespace docsynth
