#include "docsynth/extract.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>
#include <set>

#include "docsynth/text.hpp"

namespace docsynth {

using nlohmann::json;

RankedEvidence::RankedEvidence(std::vector<EvidenceRecord> entries, int k_limit, double threshold)
    : entries_(std::move(entries)), k_limit_(k_limit), threshold_(threshold) {
    if (k_limit_ < 1) {
        throw Error(ErrorCode::InvariantViolation, "k_limit must be >= 1");
    }
    if (entries_.size() > static_cast<std::size_t>(k_limit_)) {
        throw Error(ErrorCode::InvariantViolation, std::to_string(entries_.size()) + " entries exceed k_limit " +
                                                       std::to_string(k_limit_));
    }
    std::set<int> seen;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& e = entries_[i];
        if (e.score < threshold_) {
            throw Error(ErrorCode::InvariantViolation, "entry below threshold at page " + std::to_string(e.page_index));
        }
        if (i > 0 && e.score > entries_[i - 1].score) {
            throw Error(ErrorCode::InvariantViolation, "scores must be non-increasing");
        }
        if (!seen.insert(e.page_index).second) {
            throw Error(ErrorCode::InvariantViolation, "duplicate page " + std::to_string(e.page_index));
        }
    }
}

ChatRequest build_extraction_prompt(const PageImage& page, const Question& question, bool is_source,
                                    const PipelineConfig& cfg, const PromptTemplates& prompts) {
    auto fill = [&](std::string text) {
        text = replace_all(std::move(text), "{question}", question.text);
        text = replace_all(std::move(text), "{floor}", format_score(cfg.source_score_floor));
        text = replace_all(std::move(text), "{max}", format_score(cfg.score_max));
        text = replace_all(std::move(text), "{min}", format_score(cfg.score_min));
        return replace_all(std::move(text), "{page}", std::to_string(page.index));
    };

    std::string instruction = fill(prompts.extract);
    if (is_source) {
        instruction += "\n" + fill(prompts.extract_source);
    }

    ChatMessage user{Role::user, {}};
    user.parts.emplace_back(ImagePart{page});
    user.parts.emplace_back(TextPart{std::move(instruction)});

    ChatRequest request;
    request.model_id = cfg.extractor_model;
    request.messages.push_back(std::move(user));
    request.max_tokens = cfg.extract_max_tokens;
    request.temperature = cfg.extract_temperature;
    return request;
}

namespace {

/// Case-insensitive match of `key` at the start of `line` (after leading
/// whitespace); returns the remainder after the key.
std::optional<std::string_view> strip_key(std::string_view line, std::string_view key) {
    const auto start = line.find_first_not_of(" \t");
    if (start == std::string_view::npos) return std::nullopt;
    line.remove_prefix(start);
    if (line.size() < key.size()) return std::nullopt;
    for (std::size_t i = 0; i < key.size(); ++i) {
        if (std::toupper(static_cast<unsigned char>(line[i])) != key[i]) return std::nullopt;
    }
    return line.substr(key.size());
}

}  // namespace

EvidenceRecord parse_extraction(const ChatResponse& response, const PipelineConfig& cfg) {
    const std::string_view text = response.text;

    std::optional<double> score;
    std::optional<std::size_t> evidence_at;
    std::size_t line_start = 0;
    // reasoning extractors may prepend a think block; scan after it
    if (const auto open = text.find_first_not_of(" \t\r\n");
        open != std::string_view::npos && text.substr(open).starts_with("<think>")) {
        if (const auto close = text.find("</think>", open); close != std::string_view::npos) {
            line_start = close + std::string_view("</think>").size();
        }
    }
    while (line_start <= text.size()) {
        auto line_end = text.find('\n', line_start);
        if (line_end == std::string_view::npos) line_end = text.size();
        const std::string_view line = text.substr(line_start, line_end - line_start);

        if (!score) {
            if (auto rest = strip_key(line, "RELEVANCE:")) {
                const std::string value = trim(*rest);
                double parsed = 0.0;
                const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), parsed);
                if (ec != std::errc{} || ptr == value.data() || !std::isfinite(parsed)) {
                    throw Error(ErrorCode::UnparseableScore, "non-numeric relevance '" + value + "'");
                }
                score = parsed;
            }
        } else if (auto rest = strip_key(line, "EVIDENCE:")) {
            evidence_at = static_cast<std::size_t>(rest->data() - text.data());
            break;
        }
        line_start = line_end + 1;
    }
    if (!score) {
        throw Error(ErrorCode::UnparseableScore, "no RELEVANCE line in extractor output");
    }

    EvidenceRecord record;
    record.score = *score;
    if (record.score < cfg.score_min) {
        record.score = cfg.score_min;
        record.was_clamped = true;
    } else if (record.score > cfg.score_max) {
        record.score = cfg.score_max;
        record.was_clamped = true;
    }
    if (evidence_at) {
        record.snippet = trim(sanitize_generated(text.substr(*evidence_at)));
    }
    if (record.snippet.empty() && record.score >= cfg.relevance_threshold) {
        throw Error(ErrorCode::MissingEvidence, "relevance " + format_score(record.score) + " without evidence text");
    }
    return record;
}

std::string_view to_string(ExtractionStatus status) noexcept {
    switch (status) {
        case ExtractionStatus::ok: return "ok";
        case ExtractionStatus::retried: return "retried";
        case ExtractionStatus::degraded: return "degraded";
    }
    return "ok";
}

DocumentExtraction extract_document(const DocumentRef& doc, const Question& question, const PipelineConfig& cfg,
                                    ChatBackend& backend, const RetryPolicy& policy, const PromptTemplates& prompts) {
    const auto n = static_cast<std::size_t>(doc.page_count());
    std::vector<ChatRequest> requests;
    requests.reserve(n);
    for (const auto& page : doc.pages()) {
        requests.push_back(build_extraction_prompt(page, question, question.source_pages.contains(page.index), cfg,
                                                   prompts));
    }

    DocumentExtraction out;
    out.records.resize(n);
    out.events.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.records[i].page_index = static_cast<int>(i) + 1;
        out.records[i].is_source = question.source_pages.contains(static_cast<int>(i) + 1);
        out.events[i].page_index = out.records[i].page_index;
        out.events[i].is_source = out.records[i].is_source;
    }

    auto degrade = [&](std::size_t i, const std::string& why) {
        auto& record = out.records[i];
        record.score = std::clamp(0.0, cfg.score_min, cfg.score_max);
        record.snippet.clear();
        record.was_clamped = false;
        out.events[i].status = ExtractionStatus::degraded;
        out.events[i].error = why;
        ++out.degraded_pages;
        logger().log(LogLevel::warn, "page_degraded",
                     {{"doc_id", doc.doc_id()}, {"page", record.page_index}, {"error", why}});
    };

    // Parse failures get exactly one more attempt.
    std::vector<std::size_t> unparseable;
    auto absorb = [&](std::size_t i, const BatchResult& result, bool final_attempt) {
        ++out.backend_calls;
        if (const auto* failure = std::get_if<BatchFailure>(&result)) {
            ++out.failed_calls;
            degrade(i, failure->message);
            return;
        }
        try {
            EvidenceRecord parsed = parse_extraction(std::get<ChatResponse>(result), cfg);
            parsed.page_index = out.records[i].page_index;
            parsed.is_source = out.records[i].is_source;
            out.records[i] = std::move(parsed);
        } catch (const Error& e) {
            if (!final_attempt) {
                unparseable.push_back(i);
                out.events[i].status = ExtractionStatus::retried;
            } else {
                degrade(i, e.what());
            }
        }
    };

    const auto first = complete_batch(backend, requests, policy);
    for (std::size_t i = 0; i < n; ++i) absorb(i, first[i], false);

    if (!unparseable.empty()) {
        std::vector<ChatRequest> again;
        again.reserve(unparseable.size());
        for (auto i : unparseable) again.push_back(requests[i]);
        const auto second = complete_batch(backend, again, policy);
        const auto retry_pages = unparseable;
        unparseable.clear();
        for (std::size_t j = 0; j < retry_pages.size(); ++j) absorb(retry_pages[j], second[j], true);
    }

    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = out.records[i];
        auto& ev = out.events[i];
        ev.score = r.score;
        ev.was_clamped = r.was_clamped;
        ev.snippet_chars = r.snippet.size();
        // Kept as scored, only flagged.
        if (r.is_source && ev.status != ExtractionStatus::degraded && r.score < cfg.source_score_floor) {
            ev.source_below_floor = true;
            logger().log(LogLevel::info, "source_page_below_floor",
                         {{"doc_id", doc.doc_id()}, {"page", r.page_index}, {"score", r.score}});
        }
    }
    return out;
}

json to_json(const ExtractionEvent& e) {
    json j{{"page", e.page_index},
           {"status", to_string(e.status)},
           {"score", e.score},
           {"was_clamped", e.was_clamped},
           {"is_source", e.is_source},
           {"source_below_floor", e.source_below_floor},
           {"snippet_chars", e.snippet_chars}};
    if (!e.error.empty()) j["error"] = e.error;
    return j;
}

RankedEvidence rank_and_select(std::span<const EvidenceRecord> records, double threshold, int top_k) {
    std::vector<EvidenceRecord> kept;
    std::set<int> seen;
    for (const auto& r : records) {
        if (!seen.insert(r.page_index).second) {
            throw Error(ErrorCode::DuplicatePage, "page " + std::to_string(r.page_index) + " appears twice");
        }
        if (r.score >= threshold) kept.push_back(r);
    }
    std::sort(kept.begin(), kept.end(), [](const EvidenceRecord& a, const EvidenceRecord& b) {
        return a.score != b.score ? a.score > b.score : a.page_index < b.page_index;
    });
    if (kept.size() > static_cast<std::size_t>(top_k)) kept.resize(static_cast<std::size_t>(top_k));
    return RankedEvidence(std::move(kept), top_k, threshold);
}

RankedEvidence rank_and_select(std::span<const EvidenceRecord> records, const PipelineConfig& cfg) {
    return rank_and_select(records, cfg.relevance_threshold, cfg.top_k);
}

}  // namespace docsynth
