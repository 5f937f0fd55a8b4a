#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "docsynth/error.hpp"

namespace docsynth {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Documents

struct PageImage {
    int index = 0;  // 1-based position in the document
    fs::path image_path;
    std::uintmax_t byte_len = 0;

    bool operator==(const PageImage&) const = default;
};

/// An ordered run of page images. Immutable once built.
class DocumentRef {
public:
    /// Throws NonContiguousPageNumbers / EmptyDocument if `pages` does not carry
    /// exactly the indices 1..N in order.
    DocumentRef(std::string doc_id, std::vector<PageImage> pages);

    const std::string& doc_id() const noexcept { return doc_id_; }
    std::span<const PageImage> pages() const noexcept { return pages_; }
    int page_count() const noexcept { return static_cast<int>(pages_.size()); }

    /// 1-based lookup.
    const PageImage& page(int index) const;

    bool operator==(const DocumentRef&) const = default;

private:
    std::string doc_id_;
    std::vector<PageImage> pages_;
};

/// Page files must be named page_<digits>.<ext>; other files are ignored.
DocumentRef load_document(const fs::path& dir);

/// Every subdirectory of `root` is one document; returned sorted by doc_id.
std::vector<DocumentRef> load_corpus(const fs::path& root);

/// Path of a page image relative to the corpus root (doc_id/filename).
std::string relative_page_path(const DocumentRef& doc, const PageImage& page);

// ---------------------------------------------------------------------------
// Questions

enum class SourceMode { single, contiguous, random };

std::string_view to_string(SourceMode mode) noexcept;
SourceMode parse_source_mode(std::string_view text);

struct Question {
    std::string text;
    std::set<int> source_pages;
    SourceMode source_mode = SourceMode::single;
    std::string question_type;

    bool operator==(const Question&) const = default;
};

/// Throws InvalidQuestion if the source set is empty, out of range, or a
/// contiguous set has holes.
void validate_question(const Question& question, int page_count);

// ---------------------------------------------------------------------------
// Configuration

enum class TraceFormat { v1, v2, none };

std::string_view to_string(TraceFormat format) noexcept;
TraceFormat parse_trace_format(std::string_view text);

/// Every knob of a generation run. Flat on purpose: one key per field in the
/// JSON config file, unknown keys rejected.
struct PipelineConfig {
    // ranking / gating
    double relevance_threshold = 1.0;
    int top_k = 24;
    double score_min = 0.0;
    double score_max = 10.0;
    double source_score_floor = 6.0;
    double cot_probability = 0.95;
    double text_branch_ratio = 0.5;
    TraceFormat trace_format = TraceFormat::v2;
    std::uint64_t rng_seed = 0;

    // question synthesis
    std::vector<std::string> question_types{"math", "reasoning", "summarization"};
    std::vector<SourceMode> source_modes{SourceMode::single, SourceMode::contiguous, SourceMode::random};
    int questions_per_document = 2;

    // models and sampling
    std::string question_model = "Qwen3-VL-235B-A22B-Instruct";
    std::string extractor_model = "Qwen3-VL-32B-Instruct";
    std::string visual_teacher_model = "Qwen3-VL-235B-A22B-Instruct";
    std::string text_teacher_model = "Qwen3-235B-A22B-Instruct";
    double question_temperature = 0.7;
    double extract_temperature = 0.0;
    double answer_temperature = 0.7;
    int question_max_tokens = 256;
    int extract_max_tokens = 1024;
    int answer_max_tokens = 2048;
    std::string system_prompt = "You are a helpful assistant that answers questions about documents.";
    fs::path prompt_dir;

    // run wiring
    fs::path documents_dir;
    fs::path output;
    fs::path extraction_log_dir;
    std::string backend = "scripted";
    std::string endpoint;
    std::string api_key_env = "DOCSYNTH_API_KEY";
    fs::path script;
    int max_parallel = 8;
    int max_attempts = 4;
    int base_backoff_ms = 500;
    int request_timeout_s = 300;
    int document_workers = 1;
    double failure_rate_ceiling = 0.05;

    bool operator==(const PipelineConfig&) const = default;
};

/// Applies defaults for absent keys and checks every invariant. Relative paths
/// are resolved against `base_dir` when it is non-empty.
PipelineConfig validate_config(const nlohmann::json& raw, const fs::path& base_dir = {});

/// Reads a JSON config file and validates it (paths relative to the file).
PipelineConfig load_config(const fs::path& path);

nlohmann::json to_json(const PipelineConfig& cfg);

// ---------------------------------------------------------------------------
// Logging: one JSON object per line.

enum class LogLevel { debug, info, warn, error };

class Logger {
public:
    void set_sink(std::ostream* sink) {
        std::lock_guard lock(mutex_);
        sink_ = sink;
    }
    void set_level(LogLevel level) {
        std::lock_guard lock(mutex_);
        level_ = level;
    }
    void log(LogLevel level, std::string_view event, const nlohmann::json& fields = nlohmann::json::object());

private:
    std::mutex mutex_;
    std::ostream* sink_ = nullptr;
    LogLevel level_ = LogLevel::info;
};

Logger& logger();

// ---------------------------------------------------------------------------
// Small text helpers shared across modules.

std::string trim(std::string_view text);
std::string replace_all(std::string text, std::string_view from, std::string_view to);
/// Fixed one-decimal rendering used in prompts ("6.0").
std::string format_score(double value);

}  // namespace docsynth
