#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "docsynth/core.hpp"

namespace docsynth {

/// Models x benchmarks, 0-100 scale. Missing cells are std::nullopt.
struct ScoreTable {
    std::vector<std::string> models;
    std::vector<std::string> benchmarks;
    std::vector<std::vector<std::optional<double>>> scores;  // [model][benchmark]

    std::size_t model_index(std::string_view name) const;       // UnknownModel
    std::size_t benchmark_index(std::string_view name) const;   // UnknownBenchmark
    std::optional<double> get(std::string_view model, std::string_view benchmark) const;
    /// Checks dimensions, unique names and finite scores. Throws MalformedTable.
    void validate() const;
};

/// CSV with a header row; the first column holds model names, the rest are
/// benchmarks. Empty cells are missing scores.
ScoreTable parse_score_csv(std::string_view text);
ScoreTable load_score_csv(const fs::path& path);
std::string to_csv(const ScoreTable& table);

enum class MmlbCombine { separate, averaged };

std::string_view to_string(MmlbCombine mode) noexcept;
MmlbCombine parse_mmlb_combine(std::string_view text);

struct AggregateConfig {
    std::vector<std::string> va_benchmarks;
    std::vector<std::string> lca_benchmarks;
    /// Models whose per-benchmark maximum sets 100. Empty means every model.
    std::vector<std::string> normalization_models;
    MmlbCombine mmlb_combine = MmlbCombine::separate;
    /// Columns merged by MmlbCombine::averaged and the name of the result.
    std::vector<std::string> mmlb_columns;
    std::string mmlb_combined_name;
};

/// The calibrated convention: maxima over all models, MMLongBench 128K and
/// 32K kept as two columns. Reproduces the reference VA scores to 0.05.
AggregateConfig default_aggregate_config();
/// Overrides from a JSON object with the field names above.
AggregateConfig aggregate_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AggregateConfig& cfg);

/// Applies mmlb_combine=averaged (replacing the MMLongBench columns by their
/// mean). Identity for separate.
ScoreTable combine_columns(const ScoreTable& table, const AggregateConfig& cfg);

/// normalized[m][b] = 100 * score[m][b] / max over normalization models.
/// Throws EmptyColumn, NonPositiveMax, UnknownModel.
ScoreTable normalize_scores(const ScoreTable& table, const AggregateConfig& cfg);

struct ModelAggregate {
    std::string model;
    double va = 0.0;
    double lca = 0.0;
};

/// VA and LCA per model. Throws MissingScore when a model lacks a benchmark
/// of either set, UnknownBenchmark when a set names a column not in the table.
std::vector<ModelAggregate> aggregate(const ScoreTable& table, const AggregateConfig& cfg);

struct DeltaReport {
    std::string base_model;
    ScoreTable deltas;  // score[m][b] - score[base][b]; missing if either is
    std::vector<ModelAggregate> aggregate_deltas;  // empty when aggregates fail
};

/// Throws UnknownBase.
DeltaReport deltas(const ScoreTable& table, std::string_view base_model,
                   const std::optional<AggregateConfig>& cfg = std::nullopt);

struct VarianceReport {
    std::vector<std::string> models;
    std::vector<std::string> benchmarks;
    std::vector<std::vector<std::optional<double>>> sigma;  // population sigma per cell
    std::size_t runs = 0;
    double sigma_of(std::string_view model, std::string_view benchmark) const;
};

/// Population standard deviation across runs for every (model, column) cell.
/// Aggregates present as columns (e.g. "VA", "LCA") are treated like any other.
/// Throws InsufficientRuns (< 2), AxisMismatch.
VarianceReport run_variance(std::span<const ScoreTable> runs);

double population_stddev(std::span<const double> values);

// ---------------------------------------------------------------------------
// Response lengths

struct ResponseSample {
    std::string text;
    double tokens = 0.0;
};

struct LengthStats {
    std::size_t count = 0;
    double mean_tokens = 0.0;
    double median = 0.0;
    std::vector<double> edges;          // bins [edges[i], edges[i+1]); last bin open
    std::vector<std::size_t> counts;    // edges.size() entries
    double think_fraction = 0.0;
};

/// True when text holds <think> followed later by </think>.
bool has_think_block(std::string_view text);

std::vector<double> default_length_edges();

LengthStats length_stats(std::span<const ResponseSample> responses,
                         std::vector<double> edges = default_length_edges());

/// mean_a / mean_b, e.g. explicit vs implicit reasoning output lengths.
double length_ratio(double mean_a, double mean_b);

/// JSONL of {"text": ..., "tokens": n}; "response"/"completion_tokens" are
/// accepted as aliases. Throws MalformedLineError.
std::vector<ResponseSample> load_responses(const fs::path& path);

// ---------------------------------------------------------------------------
// Reports

nlohmann::json to_json(const ScoreTable& table);
nlohmann::json to_json(std::span<const ModelAggregate> aggregates);
nlohmann::json to_json(const DeltaReport& report);
nlohmann::json to_json(const VarianceReport& report);
nlohmann::json to_json(const LengthStats& stats);

/// Aligned text table; blank cells for missing scores.
std::string render_table(const ScoreTable& table, int decimals = 1);
std::string render_aggregates(std::span<const ModelAggregate> aggregates);
/// "lo,hi,count" rows for plotting; hi is empty for the open bin.
std::string histogram_csv(const LengthStats& stats);

}  // namespace docsynth
