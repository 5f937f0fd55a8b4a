#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "docsynth/backend.hpp"
#include "docsynth/core.hpp"
#include "docsynth/tracegen.hpp"

namespace docsynth {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;    // bad arguments or config
inline constexpr int kExitRuntime = 2;  // runtime failure, or failure rate above the ceiling

struct StageFailure {
    std::string doc_id;
    int question = 0;
    std::string stage;  // question | answer | assemble
    std::string error;
};

struct GenerationCounts {
    std::size_t documents = 0;
    std::size_t pages = 0;
    std::size_t questions_attempted = 0;
    std::size_t questions = 0;
    std::size_t extractions = 0;  // pages scored
    std::size_t degraded_pages = 0;
    std::size_t answers = 0;
    std::size_t examples = 0;
    std::size_t gated_examples = 0;
    std::size_t backend_calls = 0;
    std::size_t failed_calls = 0;
};

struct GenerationRun {
    std::vector<TrainingExample> examples;  // document order, then question order
    GenerationCounts counts;
    std::vector<StageFailure> failures;

    double failure_rate() const noexcept;
};

/// Per-document sink, called in document order as soon as a document and
/// all before it are done.
using DocumentSink = std::function<void(const DocumentRef&, std::span<const TrainingExample>,
                                        std::span<const nlohmann::json> extraction_log)>;

/// The full pipeline over an already-loaded corpus. Every random draw comes
/// from (cfg.rng_seed, document index, question index), so results do not
/// depend on document_workers or on backend timing.
GenerationRun generate_dataset(const std::vector<DocumentRef>& corpus, const PipelineConfig& cfg,
                               ChatBackend& backend, const DocumentSink& sink = {});

struct GenerateOutcome {
    int exit_code = kExitOk;
    nlohmann::json manifest;
    fs::path manifest_path;
};

/// generate subcommand: load config, run, write JSONL + extraction logs +
/// manifest. `backend` overrides the configured one (tests).
GenerateOutcome cmd_generate(const fs::path& config_path, ChatBackend* backend = nullptr);

/// Entry point for the docsynth binary.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace docsynth
