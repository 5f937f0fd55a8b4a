#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "docsynth/answer.hpp"
#include "docsynth/core.hpp"
#include "docsynth/extract.hpp"
#include "docsynth/rng.hpp"

namespace docsynth {

// ---------------------------------------------------------------------------
// Training examples

struct UserText {
    std::string text;
    bool operator==(const UserText&) const = default;
};

/// Image stored by reference: page index plus path relative to the corpus root.
struct UserImage {
    int page_index = 0;
    std::string path;
    bool operator==(const UserImage&) const = default;
};

using UserPart = std::variant<UserText, UserImage>;

struct ExampleMeta {
    std::string doc_id;
    std::string question_type;
    std::string source_mode;
    std::vector<int> source_pages;
    std::string teacher_model;
    bool operator==(const ExampleMeta&) const = default;
};

/// Chat-format record. Invariant (checked by validate_example):
/// has_cot <=> system contains <cot> <=> assistant opens with <think> and
/// holds exactly one </think>; without the gate no <think> appears at all.
struct TrainingExample {
    std::string system;
    std::vector<UserPart> user;
    std::string assistant;
    bool has_cot = false;
    Branch branch = Branch::visual;
    TraceFormat trace_format = TraceFormat::none;
    ExampleMeta meta;

    bool operator==(const TrainingExample&) const = default;
};

void validate_example(const TrainingExample& example);

std::size_t count_user_images(const TrainingExample& example);

// ---------------------------------------------------------------------------
// Traces

/// "<think>\n" + "Page X: snippet" per ranked entry + "\n</think>", or the
/// sentinel line when nothing was ranked.
std::string render_trace_v2(const RankedEvidence& ranked);

inline constexpr std::string_view kNoEvidenceSentinel = "No relevant pages found.";

/// Legacy full-scan trace: one line per page in document order, "irrelevant"
/// for pages below the threshold. Grows with the document.
std::string render_trace_v1(std::span<const EvidenceRecord> records, double threshold);

/// Lines strictly inside the think block.
std::vector<std::string> trace_lines(std::string_view assistant);

// ---------------------------------------------------------------------------
// Assembly

/// Draws the <cot> gate with probability cfg.cot_probability. Gated: system
/// gets the token appended, assistant = trace + "\n" + answer. Ungated:
/// assistant = answer alone. The user turn always carries every page of the
/// document ("Page X:" + image) followed by the question.
TrainingExample assemble_example(const DocumentRef& doc, const Question& question,
                                 std::span<const EvidenceRecord> records, const RankedEvidence& ranked,
                                 const AnswerRecord& answer, const PipelineConfig& cfg, Rng& rng);

/// Same example with the gate forced; used by assemble_example and by callers
/// that need both variants of one example.
TrainingExample assemble_example_gated(const DocumentRef& doc, const Question& question,
                                       std::span<const EvidenceRecord> records, const RankedEvidence& ranked,
                                       const AnswerRecord& answer, const PipelineConfig& cfg, bool gated);

/// no-think variant: control token and think block removed. Identity on
/// ungated examples. Throws MalformedThinkBlock for an unclosed <think>.
TrainingExample strip_think(const TrainingExample& example);

// ---------------------------------------------------------------------------
// JSONL

nlohmann::json to_json(const TrainingExample& example);
/// Throws InvalidType when the object does not follow the schema.
TrainingExample example_from_json(const nlohmann::json& j);

void write_jsonl(const fs::path& path, std::span<const TrainingExample> examples);
/// Throws MalformedLineError carrying the 1-based line number.
std::vector<TrainingExample> read_jsonl(const fs::path& path);

/// Appending writer; one example per line, flushed per write.
class JsonlWriter {
public:
    explicit JsonlWriter(const fs::path& path, bool append = false);
    void write(const TrainingExample& example);
    void write_raw(std::string_view line);
    std::size_t written() const noexcept { return written_; }

private:
    std::ofstream out_;
    std::size_t written_ = 0;
};

// ---------------------------------------------------------------------------
// Dataset mixing

/// A leaf has a path; an inner node has parts. Siblings are sized either all
/// by count or all by proportion of the parent's count.
struct MixSource {
    std::string name;
    fs::path path;
    std::optional<std::size_t> count;
    std::optional<double> proportion;
    std::vector<MixSource> parts;
};

struct MixSpec {
    std::vector<MixSource> sources;
    std::optional<std::size_t> total;
    std::uint64_t rng_seed = 0;
};

/// Named proportion tables of the external SFT mixtures, normalized to sum to 1.
std::vector<std::pair<std::string, double>> luth_composition();
std::vector<std::pair<std::string, double>> smoltalk2_composition();

/// Parses the JSON mix description (see README); relative paths resolve
/// against base_dir. Presets: {"preset": "luth", "paths": {part: file}}.
MixSpec mix_spec_from_json(const nlohmann::json& j, const fs::path& base_dir = {});

/// Largest-remainder apportionment: counts sum to `total` and each differs
/// from proportion*total by less than one.
std::vector<std::size_t> allocate_counts(std::span<const double> proportions, std::size_t total);

struct MixDraw {
    std::string name;  // "luth/Scholar" for nested parts
    std::size_t count = 0;
    std::size_t available = 0;
};

struct MixResult {
    std::vector<std::string> lines;  // raw JSON lines, globally shuffled
    std::vector<MixDraw> draws;
};

/// Samples each leaf without replacement and shuffles the union under the
/// spec's seed. Lines are passed through byte for byte.
/// Throws SourceTooSmall, InvalidMixSpec, MalformedLineError.
MixResult mix_datasets(const MixSpec& spec);

// ---------------------------------------------------------------------------
// Reporting

struct HistogramBin {
    double lo = 0.0;
    double hi = 0.0;  // exclusive; +inf for the last bin
    std::size_t count = 0;
};

struct DatasetReport {
    std::size_t count = 0;
    double pages_mean = 0.0;
    double pages_median = 0.0;
    double cot_fraction = 0.0;
    double visual_fraction = 0.0;
    double text_fraction = 0.0;
    std::vector<HistogramBin> trace_lines_histogram;  // over gated examples
};

DatasetReport dataset_report(std::span<const TrainingExample> examples);
nlohmann::json to_json(const DatasetReport& report);

double mean_of(std::span<const double> values);
double median_of(std::vector<double> values);

}  // namespace docsynth
