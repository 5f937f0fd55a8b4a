#include "docsynth/core.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <functional>
#include <map>
#include <ostream>
#include <regex>
#include <sstream>

namespace docsynth {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Documents

DocumentRef::DocumentRef(std::string doc_id, std::vector<PageImage> pages)
    : doc_id_(std::move(doc_id)), pages_(std::move(pages)) {
    if (pages_.empty()) {
        throw Error(ErrorCode::EmptyDocument, "document '" + doc_id_ + "' has no pages");
    }
    for (std::size_t i = 0; i < pages_.size(); ++i) {
        if (pages_[i].index != static_cast<int>(i) + 1) {
            throw Error(ErrorCode::NonContiguousPageNumbers,
                        "document '" + doc_id_ + "': expected page " + std::to_string(i + 1) + ", found " +
                            std::to_string(pages_[i].index));
        }
    }
}

const PageImage& DocumentRef::page(int index) const {
    if (index < 1 || index > page_count()) {
        throw Error(ErrorCode::InvalidPage, "page " + std::to_string(index) + " outside 1.." +
                                                std::to_string(page_count()) + " of '" + doc_id_ + "'");
    }
    return pages_[static_cast<std::size_t>(index - 1)];
}

DocumentRef load_document(const fs::path& dir) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) {
        throw Error(ErrorCode::MissingDirectory, dir.string());
    }

    static const std::regex page_name(R"(page_(\d+)\.[A-Za-z0-9]+)");
    std::vector<PageImage> pages;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        std::smatch m;
        if (!std::regex_match(name, m, page_name)) continue;

        PageImage page;
        const std::string digits = m[1].str();
        auto [ptr, err] = std::from_chars(digits.data(), digits.data() + digits.size(), page.index);
        if (err != std::errc{}) {
            throw Error(ErrorCode::InvalidPage, "unreadable page number in " + name);
        }
        page.image_path = fs::absolute(entry.path());
        page.byte_len = entry.file_size();
        if (page.byte_len == 0) {
            throw Error(ErrorCode::InvalidPage, "empty page image " + entry.path().string());
        }
        pages.push_back(std::move(page));
    }
    if (pages.empty()) {
        throw Error(ErrorCode::EmptyDocument, "no page_NNNN.* files in " + dir.string());
    }

    // directory_iterator order is unspecified; sort by number, then by name so
    // duplicates (page_1.png + page_0001.jpg) are reported deterministically.
    std::sort(pages.begin(), pages.end(), [](const PageImage& a, const PageImage& b) {
        return a.index != b.index ? a.index < b.index : a.image_path < b.image_path;
    });
    for (std::size_t i = 0; i < pages.size(); ++i) {
        const int expected = static_cast<int>(i) + 1;
        if (pages[i].index != expected) {
            const bool duplicate = i > 0 && pages[i].index == pages[i - 1].index;
            throw Error(ErrorCode::NonContiguousPageNumbers,
                        dir.string() + (duplicate ? ": duplicate page " : ": missing page ") +
                            std::to_string(duplicate ? pages[i].index : expected));
        }
    }

    std::string doc_id = fs::absolute(dir).lexically_normal().filename().string();
    if (doc_id.empty()) doc_id = fs::absolute(dir).lexically_normal().parent_path().filename().string();
    return DocumentRef(std::move(doc_id), std::move(pages));
}

std::vector<DocumentRef> load_corpus(const fs::path& root) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) {
        throw Error(ErrorCode::MissingDirectory, root.string());
    }
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    std::vector<DocumentRef> docs;
    docs.reserve(dirs.size());
    for (const auto& dir : dirs) docs.push_back(load_document(dir));
    return docs;
}

std::string relative_page_path(const DocumentRef& doc, const PageImage& page) {
    return (fs::path(doc.doc_id()) / page.image_path.filename()).generic_string();
}

// ---------------------------------------------------------------------------
// Questions

std::string_view to_string(SourceMode mode) noexcept {
    switch (mode) {
        case SourceMode::single: return "single";
        case SourceMode::contiguous: return "contiguous";
        case SourceMode::random: return "random";
    }
    return "single";
}

SourceMode parse_source_mode(std::string_view text) {
    if (text == "single") return SourceMode::single;
    if (text == "contiguous") return SourceMode::contiguous;
    if (text == "random") return SourceMode::random;
    throw Error(ErrorCode::InvalidType, "unknown source mode '" + std::string(text) + "'");
}

void validate_question(const Question& question, int page_count) {
    if (question.source_pages.empty()) {
        throw Error(ErrorCode::InvalidQuestion, "question has no source pages");
    }
    if (*question.source_pages.begin() < 1 || *question.source_pages.rbegin() > page_count) {
        throw Error(ErrorCode::InvalidQuestion,
                    "source pages outside 1.." + std::to_string(page_count));
    }
    if (question.source_mode == SourceMode::contiguous) {
        const int span = *question.source_pages.rbegin() - *question.source_pages.begin() + 1;
        if (span != static_cast<int>(question.source_pages.size())) {
            throw Error(ErrorCode::InvalidQuestion, "contiguous source set has gaps");
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration

std::string_view to_string(TraceFormat format) noexcept {
    switch (format) {
        case TraceFormat::v1: return "v1";
        case TraceFormat::v2: return "v2";
        case TraceFormat::none: return "none";
    }
    return "none";
}

TraceFormat parse_trace_format(std::string_view text) {
    if (text == "v1") return TraceFormat::v1;
    if (text == "v2") return TraceFormat::v2;
    if (text == "none") return TraceFormat::none;
    throw Error(ErrorCode::InvalidType, "unknown trace format '" + std::string(text) + "'");
}

namespace {

double get_real(const json& v, const std::string& key) {
    if (!v.is_number()) throw Error(ErrorCode::InvalidType, key + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw Error(ErrorCode::InvalidRange, key + " must be finite");
    return d;
}

int get_int(const json& v, const std::string& key) {
    if (!v.is_number_integer()) throw Error(ErrorCode::InvalidType, key + " must be an integer");
    const auto i = v.get<std::int64_t>();
    if (i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max()) {
        throw Error(ErrorCode::InvalidRange, key + " out of range");
    }
    return static_cast<int>(i);
}

std::string get_string(const json& v, const std::string& key) {
    if (!v.is_string()) throw Error(ErrorCode::InvalidType, key + " must be a string");
    return v.get<std::string>();
}

std::vector<std::string> get_string_list(const json& v, const std::string& key) {
    if (!v.is_array()) throw Error(ErrorCode::InvalidType, key + " must be a list of strings");
    std::vector<std::string> out;
    for (const auto& item : v) out.push_back(get_string(item, key));
    return out;
}

void require_probability(double p, const std::string& key) {
    if (p < 0.0 || p > 1.0) {
        throw Error(ErrorCode::InvalidRange, key + " = " + std::to_string(p) + " is outside [0, 1]");
    }
}

void require_positive(int v, const std::string& key) {
    if (v < 1) throw Error(ErrorCode::InvalidRange, key + " must be >= 1");
}

using Setter = std::function<void(PipelineConfig&, const json&, const fs::path&)>;

fs::path resolve(const fs::path& base, const std::string& text) {
    fs::path p(text);
    if (text.empty() || p.is_absolute() || base.empty()) return p;
    return (base / p).lexically_normal();
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto real = [&t](const char* key, double PipelineConfig::*field) {
            t[key] = [key, field](PipelineConfig& c, const json& v, const fs::path&) { c.*field = get_real(v, key); };
        };
        auto integer = [&t](const char* key, int PipelineConfig::*field) {
            t[key] = [key, field](PipelineConfig& c, const json& v, const fs::path&) { c.*field = get_int(v, key); };
        };
        auto string = [&t](const char* key, std::string PipelineConfig::*field) {
            t[key] = [key, field](PipelineConfig& c, const json& v, const fs::path&) { c.*field = get_string(v, key); };
        };
        auto path = [&t](const char* key, fs::path PipelineConfig::*field) {
            t[key] = [key, field](PipelineConfig& c, const json& v, const fs::path& base) {
                c.*field = resolve(base, get_string(v, key));
            };
        };

        real("relevance_threshold", &PipelineConfig::relevance_threshold);
        integer("top_k", &PipelineConfig::top_k);
        real("score_min", &PipelineConfig::score_min);
        real("score_max", &PipelineConfig::score_max);
        real("source_score_floor", &PipelineConfig::source_score_floor);
        real("cot_probability", &PipelineConfig::cot_probability);
        real("text_branch_ratio", &PipelineConfig::text_branch_ratio);
        t["trace_format"] = [](PipelineConfig& c, const json& v, const fs::path&) {
            c.trace_format = parse_trace_format(get_string(v, "trace_format"));
            if (c.trace_format == TraceFormat::none) {
                throw Error(ErrorCode::InvalidRange, "trace_format must be v1 or v2");
            }
        };
        t["rng_seed"] = [](PipelineConfig& c, const json& v, const fs::path&) {
            if (v.is_number_unsigned()) {
                c.rng_seed = v.get<std::uint64_t>();
            } else if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
                c.rng_seed = static_cast<std::uint64_t>(v.get<std::int64_t>());
            } else {
                throw Error(ErrorCode::InvalidType, "rng_seed must be a non-negative integer");
            }
        };

        t["question_types"] = [](PipelineConfig& c, const json& v, const fs::path&) {
            c.question_types = get_string_list(v, "question_types");
        };
        t["source_modes"] = [](PipelineConfig& c, const json& v, const fs::path&) {
            c.source_modes.clear();
            for (const auto& s : get_string_list(v, "source_modes")) c.source_modes.push_back(parse_source_mode(s));
        };
        integer("questions_per_document", &PipelineConfig::questions_per_document);

        string("question_model", &PipelineConfig::question_model);
        string("extractor_model", &PipelineConfig::extractor_model);
        string("visual_teacher_model", &PipelineConfig::visual_teacher_model);
        string("text_teacher_model", &PipelineConfig::text_teacher_model);
        real("question_temperature", &PipelineConfig::question_temperature);
        real("extract_temperature", &PipelineConfig::extract_temperature);
        real("answer_temperature", &PipelineConfig::answer_temperature);
        integer("question_max_tokens", &PipelineConfig::question_max_tokens);
        integer("extract_max_tokens", &PipelineConfig::extract_max_tokens);
        integer("answer_max_tokens", &PipelineConfig::answer_max_tokens);
        string("system_prompt", &PipelineConfig::system_prompt);
        path("prompt_dir", &PipelineConfig::prompt_dir);

        path("documents_dir", &PipelineConfig::documents_dir);
        path("output", &PipelineConfig::output);
        path("extraction_log_dir", &PipelineConfig::extraction_log_dir);
        string("backend", &PipelineConfig::backend);
        string("endpoint", &PipelineConfig::endpoint);
        string("api_key_env", &PipelineConfig::api_key_env);
        path("script", &PipelineConfig::script);
        integer("max_parallel", &PipelineConfig::max_parallel);
        integer("max_attempts", &PipelineConfig::max_attempts);
        integer("base_backoff_ms", &PipelineConfig::base_backoff_ms);
        integer("request_timeout_s", &PipelineConfig::request_timeout_s);
        integer("document_workers", &PipelineConfig::document_workers);
        real("failure_rate_ceiling", &PipelineConfig::failure_rate_ceiling);
        return t;
    }();
    return table;
}

}  // namespace

PipelineConfig validate_config(const json& raw, const fs::path& base_dir) {
    if (!raw.is_object()) {
        throw Error(ErrorCode::InvalidType, "config must be a JSON object");
    }
    PipelineConfig cfg;
    const auto& table = setters();
    for (const auto& [key, value] : raw.items()) {
        auto it = table.find(key);
        if (it == table.end()) {
            throw Error(ErrorCode::UnknownKey, "unknown config key '" + key + "'");
        }
        it->second(cfg, value, base_dir);
    }

    if (cfg.relevance_threshold < 0.0) {
        throw Error(ErrorCode::InvalidRange, "relevance_threshold must be >= 0");
    }
    if (!(cfg.score_min < cfg.score_max)) {
        throw Error(ErrorCode::InconsistentBounds, "score_min must be below score_max");
    }
    if (cfg.relevance_threshold > cfg.score_max) {
        throw Error(ErrorCode::InconsistentBounds, "relevance_threshold " + format_score(cfg.relevance_threshold) +
                                                       " exceeds score_max " + format_score(cfg.score_max));
    }
    if (!(cfg.score_min < cfg.source_score_floor) || cfg.source_score_floor > cfg.score_max) {
        throw Error(ErrorCode::InconsistentBounds, "source_score_floor must lie in (score_min, score_max]");
    }
    require_probability(cfg.cot_probability, "cot_probability");
    require_probability(cfg.text_branch_ratio, "text_branch_ratio");
    require_probability(cfg.failure_rate_ceiling, "failure_rate_ceiling");
    require_positive(cfg.top_k, "top_k");
    require_positive(cfg.questions_per_document, "questions_per_document");
    require_positive(cfg.question_max_tokens, "question_max_tokens");
    require_positive(cfg.extract_max_tokens, "extract_max_tokens");
    require_positive(cfg.answer_max_tokens, "answer_max_tokens");
    require_positive(cfg.max_parallel, "max_parallel");
    require_positive(cfg.max_attempts, "max_attempts");
    require_positive(cfg.document_workers, "document_workers");
    require_positive(cfg.request_timeout_s, "request_timeout_s");
    if (cfg.base_backoff_ms < 0) throw Error(ErrorCode::InvalidRange, "base_backoff_ms must be >= 0");
    for (double t : {cfg.question_temperature, cfg.extract_temperature, cfg.answer_temperature}) {
        if (t < 0.0) throw Error(ErrorCode::InvalidRange, "temperatures must be >= 0");
    }
    if (cfg.question_types.empty()) throw Error(ErrorCode::InvalidRange, "question_types must not be empty");
    if (cfg.source_modes.empty()) throw Error(ErrorCode::InvalidRange, "source_modes must not be empty");
    if (cfg.backend != "scripted" && cfg.backend != "http") {
        throw Error(ErrorCode::InvalidRange, "backend must be 'scripted' or 'http'");
    }
    return cfg;
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open config " + path.string());
    json raw;
    try {
        raw = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::InvalidType, "config " + path.string() + " is not valid JSON: " + e.what());
    }
    return validate_config(raw, fs::absolute(path).parent_path());
}

json to_json(const PipelineConfig& c) {
    json modes = json::array();
    for (auto m : c.source_modes) modes.push_back(to_string(m));
    return json{
        {"relevance_threshold", c.relevance_threshold},
        {"top_k", c.top_k},
        {"score_min", c.score_min},
        {"score_max", c.score_max},
        {"source_score_floor", c.source_score_floor},
        {"cot_probability", c.cot_probability},
        {"text_branch_ratio", c.text_branch_ratio},
        {"trace_format", to_string(c.trace_format)},
        {"rng_seed", c.rng_seed},
        {"question_types", c.question_types},
        {"source_modes", modes},
        {"questions_per_document", c.questions_per_document},
        {"question_model", c.question_model},
        {"extractor_model", c.extractor_model},
        {"visual_teacher_model", c.visual_teacher_model},
        {"text_teacher_model", c.text_teacher_model},
        {"question_temperature", c.question_temperature},
        {"extract_temperature", c.extract_temperature},
        {"answer_temperature", c.answer_temperature},
        {"question_max_tokens", c.question_max_tokens},
        {"extract_max_tokens", c.extract_max_tokens},
        {"answer_max_tokens", c.answer_max_tokens},
        {"system_prompt", c.system_prompt},
        {"prompt_dir", c.prompt_dir.string()},
        {"documents_dir", c.documents_dir.string()},
        {"output", c.output.string()},
        {"extraction_log_dir", c.extraction_log_dir.string()},
        {"backend", c.backend},
        {"endpoint", c.endpoint},
        {"api_key_env", c.api_key_env},
        {"script", c.script.string()},
        {"max_parallel", c.max_parallel},
        {"max_attempts", c.max_attempts},
        {"base_backoff_ms", c.base_backoff_ms},
        {"request_timeout_s", c.request_timeout_s},
        {"document_workers", c.document_workers},
        {"failure_rate_ceiling", c.failure_rate_ceiling},
    };
}

// ---------------------------------------------------------------------------
// Logging

void Logger::log(LogLevel level, std::string_view event, const json& fields) {
    static constexpr const char* names[] = {"debug", "info", "warn", "error"};
    std::lock_guard lock(mutex_);
    if (sink_ == nullptr || level < level_) return;
    json line = fields.is_object() ? fields : json{{"detail", fields}};
    line["level"] = names[static_cast<int>(level)];
    line["event"] = event;
    line["ts"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::system_clock::now().time_since_epoch())
                     .count();
    *sink_ << line.dump() << '\n';
    sink_->flush();
}

Logger& logger() {
    static Logger instance;
    return instance;
}

// ---------------------------------------------------------------------------
// Text helpers

std::string trim(std::string_view text) {
    constexpr std::string_view ws = " \t\r\n\f\v";
    const auto first = text.find_first_not_of(ws);
    if (first == std::string_view::npos) return {};
    const auto last = text.find_last_not_of(ws);
    return std::string(text.substr(first, last - first + 1));
}

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
    if (from.empty()) return text;
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

std::string format_score(double value) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(1);
    os << value;
    return os.str();
}

}  // namespace docsynth
