#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "docsynth/safetensors.hpp"

namespace docsynth {

struct Mismatch {
    enum class Kind { MissingKey, ExtraKey, ShapeMismatch, DtypeMismatch };
    Kind kind;
    std::string name;
    std::string detail;
};

std::string_view to_string(Mismatch::Kind kind) noexcept;

struct CompatibilityReport {
    std::vector<Mismatch> mismatches;

    bool ok() const noexcept { return mismatches.empty(); }
    /// First few mismatches, one per line.
    std::string summary(std::size_t limit = 10) const;
};

/// MissingKey: in base, absent from tuned. ExtraKey: the reverse.
CompatibilityReport validate_compatibility(const TensorStore& base, const TensorStore& tuned);

enum class AccumDtype { automatic, f32, f64 };

AccumDtype parse_accum_dtype(std::string_view text);

struct MergeOptions {
    /// automatic: f32 for 16-bit inputs, f64 for 32/64-bit inputs.
    AccumDtype accum = AccumDtype::automatic;
    std::size_t chunk_elements = std::size_t{1} << 20;
    /// Shards merged concurrently; each shard file has one writer.
    int workers = 1;
};

struct MergeStats {
    std::size_t tensors_merged = 0;
    std::size_t tensors_copied = 0;  // non-float, or alpha in {0, 1}
    std::uint64_t bytes_written = 0;
};

/// merged = base + alpha * (tuned - base), written into `out` with the base's
/// shard files, headers and byte offsets. Other files in the base directory
/// (config, tokenizer, index) are copied verbatim. Streams in chunks; memory
/// does not grow with tensor size.
/// Throws IncompatibleStores, InvalidPlan (non-finite alpha), IoFailure.
TensorStore task_arithmetic_merge(const TensorStore& base, const TensorStore& tuned, double alpha,
                                  const fs::path& out, const MergeOptions& options = {},
                                  MergeStats* stats = nullptr);

struct PlanStep {
    fs::path tuned;
    double alpha = 0.0;
};

/// Folds task_arithmetic_merge over the steps, each step's output becoming
/// the next base. Intermediates live in temporary siblings of `out`.
/// Errors are rethrown as MergeStepError carrying the step index.
TensorStore apply_merge_plan(const fs::path& base, std::span<const PlanStep> plan, const fs::path& out,
                             const MergeOptions& options = {});

}  // namespace docsynth
