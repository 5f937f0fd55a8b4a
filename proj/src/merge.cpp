#include "docsynth/merge.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <exception>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "docsynth/half.hpp"

namespace docsynth {

namespace {

std::string shape_text(const std::vector<std::int64_t>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

}  // namespace

std::string_view to_string(Mismatch::Kind kind) noexcept {
    switch (kind) {
        case Mismatch::Kind::MissingKey: return "MissingKey";
        case Mismatch::Kind::ExtraKey: return "ExtraKey";
        case Mismatch::Kind::ShapeMismatch: return "ShapeMismatch";
        case Mismatch::Kind::DtypeMismatch: return "DtypeMismatch";
    }
    return "?";
}

std::string CompatibilityReport::summary(std::size_t limit) const {
    std::ostringstream out;
    for (std::size_t i = 0; i < mismatches.size() && i < limit; ++i) {
        const auto& m = mismatches[i];
        out << to_string(m.kind) << " " << m.name;
        if (!m.detail.empty()) out << ": " << m.detail;
        out << "\n";
    }
    if (mismatches.size() > limit) out << "... " << mismatches.size() - limit << " more\n";
    return out.str();
}

CompatibilityReport validate_compatibility(const TensorStore& base, const TensorStore& tuned) {
    CompatibilityReport report;
    const auto& b = base.manifest();
    const auto& t = tuned.manifest();
    for (const auto& [name, info] : b) {
        auto it = t.find(name);
        if (it == t.end()) {
            report.mismatches.push_back({Mismatch::Kind::MissingKey, name, ""});
            continue;
        }
        if (info.shape != it->second.shape) {
            report.mismatches.push_back(
                {Mismatch::Kind::ShapeMismatch, name, shape_text(info.shape) + " vs " + shape_text(it->second.shape)});
        }
        if (info.dtype != it->second.dtype) {
            report.mismatches.push_back({Mismatch::Kind::DtypeMismatch, name,
                                         std::string(to_string(info.dtype)) + " vs " +
                                             std::string(to_string(it->second.dtype))});
        }
    }
    for (const auto& [name, info] : t) {
        if (!b.contains(name)) report.mismatches.push_back({Mismatch::Kind::ExtraKey, name, ""});
    }
    return report;
}

AccumDtype parse_accum_dtype(std::string_view text) {
    if (text == "auto") return AccumDtype::automatic;
    if (text == "f32" || text == "float32") return AccumDtype::f32;
    if (text == "f64" || text == "float64") return AccumDtype::f64;
    throw Error(ErrorCode::InvalidType, "accumulation dtype must be auto, f32 or f64");
}

namespace {

template <DType D>
struct Codec;

template <>
struct Codec<DType::F64> {
    using Raw = double;
    static double load(Raw r) { return r; }
    template <typename Acc>
    static Raw store(Acc v) { return static_cast<double>(v); }
};
template <>
struct Codec<DType::F32> {
    using Raw = float;
    static float load(Raw r) { return r; }
    template <typename Acc>
    static Raw store(Acc v) { return static_cast<float>(v); }
};
template <>
struct Codec<DType::F16> {
    using Raw = std::uint16_t;
    static float load(Raw r) { return half_to_float(r); }
    template <typename Acc>
    static Raw store(Acc v) { return float_to_half(static_cast<float>(v)); }
};
template <>
struct Codec<DType::BF16> {
    using Raw = std::uint16_t;
    static float load(Raw r) { return bf16_to_float(r); }
    template <typename Acc>
    static Raw store(Acc v) { return float_to_bf16(static_cast<float>(v)); }
};

template <DType D, typename Acc>
void merge_chunk(const std::uint8_t* base, const std::uint8_t* tuned, std::uint8_t* out, std::size_t n, Acc alpha) {
    using C = Codec<D>;
    using Raw = typename C::Raw;
    for (std::size_t i = 0; i < n; ++i) {
        Raw rb, rt;
        std::memcpy(&rb, base + i * sizeof(Raw), sizeof(Raw));
        std::memcpy(&rt, tuned + i * sizeof(Raw), sizeof(Raw));
        const Acc b = static_cast<Acc>(C::load(rb));
        const Acc d = static_cast<Acc>(C::load(rt)) - b;
        // d == 0 keeps the base bits (including the sign of zero).
        const Raw r = d == Acc(0) ? rb : C::template store<Acc>(b + alpha * d);
        std::memcpy(out + i * sizeof(Raw), &r, sizeof(Raw));
    }
}

using ChunkFn = void (*)(const std::uint8_t*, const std::uint8_t*, std::uint8_t*, std::size_t, double);

template <DType D, typename Acc>
void merge_chunk_erased(const std::uint8_t* b, const std::uint8_t* t, std::uint8_t* o, std::size_t n, double alpha) {
    merge_chunk<D, Acc>(b, t, o, n, static_cast<Acc>(alpha));
}

ChunkFn chunk_fn(DType dtype, AccumDtype accum) {
    const bool wide = accum == AccumDtype::f64 ||
                      (accum == AccumDtype::automatic && (dtype == DType::F32 || dtype == DType::F64)) ||
                      dtype == DType::F64;
    switch (dtype) {
        case DType::F64: return &merge_chunk_erased<DType::F64, double>;
        case DType::F32: return wide ? &merge_chunk_erased<DType::F32, double> : &merge_chunk_erased<DType::F32, float>;
        case DType::F16: return wide ? &merge_chunk_erased<DType::F16, double> : &merge_chunk_erased<DType::F16, float>;
        case DType::BF16:
            return wide ? &merge_chunk_erased<DType::BF16, double> : &merge_chunk_erased<DType::BF16, float>;
        default: return nullptr;
    }
}

constexpr std::size_t kCopyChunk = 8u << 20;

void copy_range(const FileHandle& from, std::uint64_t from_off, const FileHandle& to, std::uint64_t to_off,
                std::uint64_t n, std::vector<std::uint8_t>& buf) {
    buf.resize(std::min<std::uint64_t>(kCopyChunk, std::max<std::uint64_t>(n, 1)));
    while (n > 0) {
        const auto take = static_cast<std::size_t>(std::min<std::uint64_t>(n, buf.size()));
        std::span<std::uint8_t> view(buf.data(), take);
        from.read_at(from_off, view);
        to.write_at(to_off, view);
        from_off += take;
        to_off += take;
        n -= take;
    }
}

struct ShardJob {
    const TensorStore* base;
    const TensorStore* tuned;
    double alpha;
    const MergeOptions* options;
    fs::path out_dir;
};

MergeStats merge_shard(const ShardJob& job, const ShardLayout& shard) {
    MergeStats stats;
    const auto base_fh = FileHandle::open_read(job.base->shard_path(shard.file));
    const auto out_fh = FileHandle::open_write(job.out_dir / shard.file);

    std::vector<const TensorInfo*> tensors;
    for (const auto& [name, info] : job.base->manifest()) {
        if (info.shard == shard.file) tensors.push_back(&info);
    }
    std::sort(tensors.begin(), tensors.end(),
              [](const TensorInfo* a, const TensorInfo* b) { return a->offset < b->offset; });

    std::map<std::string, FileHandle> tuned_files;
    auto tuned_handle = [&](const std::string& file) -> const FileHandle& {
        auto it = tuned_files.find(file);
        if (it == tuned_files.end()) {
            it = tuned_files.emplace(file, FileHandle::open_read(job.tuned->shard_path(file))).first;
        }
        return it->second;
    };

    std::vector<std::uint8_t> copy_buf;
    std::vector<std::uint8_t> b_buf, t_buf, o_buf;

    // Header and any padding come straight from the base.
    std::uint64_t pos = 0;
    for (const TensorInfo* info : tensors) {
        if (info->offset > pos) copy_range(base_fh, pos, out_fh, pos, info->offset - pos, copy_buf);
        pos = std::max(pos, info->offset + info->nbytes);

        const TensorInfo& tinfo = job.tuned->at(info->name);
        const ChunkFn fn = chunk_fn(info->dtype, job.options->accum);
        if (fn == nullptr || job.alpha == 0.0) {
            copy_range(base_fh, info->offset, out_fh, info->offset, info->nbytes, copy_buf);
            ++stats.tensors_copied;
        } else if (job.alpha == 1.0) {
            copy_range(tuned_handle(tinfo.shard), tinfo.offset, out_fh, info->offset, info->nbytes, copy_buf);
            ++stats.tensors_copied;
        } else {
            const std::size_t esize = dtype_size(info->dtype);
            const std::size_t chunk = std::max<std::size_t>(job.options->chunk_elements, 1) * esize;
            const FileHandle& tuned_fh = tuned_handle(tinfo.shard);
            for (std::uint64_t done = 0; done < info->nbytes;) {
                const auto take = static_cast<std::size_t>(std::min<std::uint64_t>(chunk, info->nbytes - done));
                b_buf.resize(take);
                t_buf.resize(take);
                o_buf.resize(take);
                base_fh.read_at(info->offset + done, b_buf);
                tuned_fh.read_at(tinfo.offset + done, t_buf);
                fn(b_buf.data(), t_buf.data(), o_buf.data(), take / esize, job.alpha);
                out_fh.write_at(info->offset + done, o_buf);
                done += take;
            }
            ++stats.tensors_merged;
        }
    }
    if (shard.file_size > pos) copy_range(base_fh, pos, out_fh, pos, shard.file_size - pos, copy_buf);
    stats.bytes_written = shard.file_size;
    return stats;
}

bool same_directory(const fs::path& a, const fs::path& b) {
    std::error_code ec;
    return fs::exists(a, ec) && fs::exists(b, ec) && fs::equivalent(a, b, ec);
}

void copy_side_files(const TensorStore& base, const fs::path& out) {
    if (!base.from_directory()) return;
    std::set<std::string> shard_files;
    for (const auto& s : base.shards()) shard_files.insert(s.file);
    for (const auto& entry : fs::recursive_directory_iterator(base.root())) {
        const fs::path rel = fs::relative(entry.path(), base.root());
        if (entry.is_directory()) {
            fs::create_directories(out / rel);
        } else if (entry.is_regular_file() && !shard_files.contains(rel.string())) {
            fs::copy_file(entry.path(), out / rel, fs::copy_options::overwrite_existing);
        }
    }
}

}  // namespace

TensorStore task_arithmetic_merge(const TensorStore& base, const TensorStore& tuned, double alpha,
                                  const fs::path& out, const MergeOptions& options, MergeStats* stats_out) {
    if (!std::isfinite(alpha)) throw Error(ErrorCode::InvalidPlan, "alpha must be finite");
    if (alpha < 0.0 || alpha > 1.0) {
        logger().log(LogLevel::warn, "alpha_outside_unit_interval", {{"alpha", alpha}});
    }
    const auto report = validate_compatibility(base, tuned);
    if (!report.ok()) {
        throw Error(ErrorCode::IncompatibleStores,
                    std::to_string(report.mismatches.size()) + " mismatch(es)\n" + report.summary());
    }
    if (same_directory(out, base.root()) || same_directory(out, tuned.root())) {
        throw Error(ErrorCode::IoFailure, "output directory must differ from the inputs");
    }

    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out.string() + ": " + ec.message());
    try {
        copy_side_files(base, out);
    } catch (const fs::filesystem_error& e) {
        throw Error(ErrorCode::IoFailure, e.what());
    }

    const ShardJob job{&base, &tuned, alpha, &options, out};
    const auto& shards = base.shards();
    std::vector<MergeStats> per_shard(shards.size());
    const auto workers = static_cast<std::size_t>(std::clamp<int>(options.workers, 1, static_cast<int>(shards.size())));

    if (workers <= 1) {
        for (std::size_t i = 0; i < shards.size(); ++i) per_shard[i] = merge_shard(job, shards[i]);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mu;
        {
            std::vector<std::jthread> pool;
            for (std::size_t w = 0; w < workers; ++w) {
                pool.emplace_back([&] {
                    for (std::size_t i = next++; i < shards.size(); i = next++) {
                        try {
                            per_shard[i] = merge_shard(job, shards[i]);
                        } catch (...) {
                            std::lock_guard lock(failure_mu);
                            if (!failure) failure = std::current_exception();
                        }
                    }
                });
            }
        }
        if (failure) std::rethrow_exception(failure);
    }

    MergeStats total;
    for (const auto& s : per_shard) {
        total.tensors_merged += s.tensors_merged;
        total.tensors_copied += s.tensors_copied;
        total.bytes_written += s.bytes_written;
    }
    if (stats_out) *stats_out = total;
    logger().log(LogLevel::info, "merge_done",
                 {{"alpha", alpha},
                  {"out", out.string()},
                  {"tensors_merged", total.tensors_merged},
                  {"tensors_copied", total.tensors_copied}});
    return TensorStore::open(base.from_directory() ? out : out / base.shards().front().file);
}

TensorStore apply_merge_plan(const fs::path& base_path, std::span<const PlanStep> plan, const fs::path& out,
                             const MergeOptions& options) {
    if (plan.empty()) throw Error(ErrorCode::InvalidPlan, "merge plan has no steps");

    const TensorStore base = TensorStore::open(base_path);
    for (std::size_t i = 0; i < plan.size(); ++i) {
        if (!std::isfinite(plan[i].alpha)) throw MergeStepError(i, ErrorCode::InvalidPlan, "alpha must be finite");
        try {
            const auto report = validate_compatibility(base, TensorStore::open(plan[i].tuned));
            if (!report.ok()) throw Error(ErrorCode::IncompatibleStores, report.summary());
        } catch (const MergeStepError&) {
            throw;
        } catch (const Error& e) {
            throw MergeStepError(i, e.code(), e.what());
        }
    }

    std::vector<fs::path> temps;
    auto cleanup = [&] {
        std::error_code ec;
        for (const auto& t : temps) fs::remove_all(t, ec);
    };

    fs::path current = base_path;
    try {
        for (std::size_t i = 0; i < plan.size(); ++i) {
            const bool last = i + 1 == plan.size();
            fs::path target = out;
            if (!last) {
                target = out.parent_path() / (out.filename().string() + ".step" + std::to_string(i) + ".tmp");
                std::error_code ec;
                fs::remove_all(target, ec);
                temps.push_back(target);
            }
            try {
                const TensorStore step_base = TensorStore::open(current);
                const TensorStore tuned = TensorStore::open(plan[i].tuned);
                const TensorStore result = task_arithmetic_merge(step_base, tuned, plan[i].alpha, target, options);
                current = base.from_directory() ? target : target / result.shards().front().file;
            } catch (const Error& e) {
                throw MergeStepError(i, e.code(), e.what());
            }
            // The previous intermediate is no longer needed.
            if (i >= 1) {
                std::error_code ec;
                fs::remove_all(temps[i - 1], ec);
            }
        }
    } catch (...) {
        cleanup();
        throw;
    }
    cleanup();
    return TensorStore::open(current);
}

}  // namespace docsynth
