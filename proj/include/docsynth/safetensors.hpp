#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "docsynth/core.hpp"

namespace docsynth {

enum class DType { F64, F32, F16, BF16, F8_E4M3, F8_E5M2, I64, I32, I16, I8, U64, U32, U16, U8, BOOL };

std::string_view to_string(DType dtype) noexcept;
DType parse_dtype(std::string_view text);
std::size_t dtype_size(DType dtype) noexcept;
/// Types the merge does arithmetic on. The 8-bit floats are not among them.
bool is_mergeable_float(DType dtype) noexcept;

inline constexpr std::string_view kIndexFileName = "model.safetensors.index.json";

struct TensorInfo {
    std::string name;
    DType dtype = DType::F32;
    std::vector<std::int64_t> shape;
    std::string shard;          // file name relative to the store root
    std::uint64_t offset = 0;   // absolute byte offset inside the shard
    std::uint64_t nbytes = 0;

    std::uint64_t element_count() const noexcept;
};

struct ShardLayout {
    std::string file;
    std::uint64_t data_start = 0;  // 8 + header length
    std::uint64_t file_size = 0;
};

/// Read-only view over one safetensors file or a sharded checkpoint directory.
/// Only headers are loaded; tensor bytes are read on demand.
class TensorStore {
public:
    /// `path` is a .safetensors file or a directory holding one (or an index
    /// plus shards). Throws InvalidCheckpoint / IoFailure.
    static TensorStore open(const fs::path& path);

    const fs::path& root() const noexcept { return root_; }
    const std::map<std::string, TensorInfo>& manifest() const noexcept { return tensors_; }
    const std::vector<ShardLayout>& shards() const noexcept { return shards_; }
    bool has_index() const noexcept { return has_index_; }
    /// False when opened from a bare .safetensors file.
    bool from_directory() const noexcept { return from_directory_; }
    std::size_t total_tensors() const noexcept { return tensors_.size(); }
    const TensorInfo& at(const std::string& name) const;
    std::uint64_t largest_tensor_bytes() const noexcept;

    fs::path shard_path(const std::string& shard) const { return root_ / shard; }

private:
    fs::path root_;
    bool has_index_ = false;
    bool from_directory_ = false;
    std::vector<ShardLayout> shards_;
    std::map<std::string, TensorInfo> tensors_;
};

/// Raw bytes of one tensor (small tensors and tests only).
std::vector<std::uint8_t> read_tensor_bytes(const TensorStore& store, const std::string& name);
/// Float tensor decoded to doubles (small tensors and tests only).
std::vector<double> read_tensor_values(const TensorStore& store, const std::string& name);

// ---------------------------------------------------------------------------
// Writing

struct TensorSpec {
    std::string name;
    DType dtype = DType::F32;
    std::vector<std::int64_t> shape;

    std::uint64_t nbytes() const noexcept;
};

/// Streams one shard: the header is written up front, then tensor payloads
/// in declaration order. finish() checks every byte was supplied.
class ShardWriter {
public:
    ShardWriter(const fs::path& path, std::vector<TensorSpec> tensors,
                const nlohmann::json& metadata = nlohmann::json::object());
    ~ShardWriter();
    ShardWriter(const ShardWriter&) = delete;
    ShardWriter& operator=(const ShardWriter&) = delete;

    void write(std::span<const std::uint8_t> bytes);
    void finish();

private:
    int fd_ = -1;
    fs::path path_;
    std::uint64_t expected_ = 0;
    std::uint64_t written_ = 0;
};

struct TensorData {
    TensorSpec spec;
    std::vector<std::uint8_t> bytes;
};

void write_safetensors(const fs::path& path, std::span<const TensorData> tensors,
                       const nlohmann::json& metadata = nlohmann::json::object());

/// Writes model.safetensors.index.json for the given name -> shard mapping.
void write_index(const fs::path& dir, const std::map<std::string, std::string>& weight_map, std::uint64_t total_size);

/// Encodes doubles into a dtype's byte layout (floats round as the merge does;
/// integers truncate). The 8-bit floats are not supported.
std::vector<std::uint8_t> encode_values(DType dtype, std::span<const double> values);

// ---------------------------------------------------------------------------
// Low-level file helpers shared with the merge.

class FileHandle {
public:
    FileHandle() = default;
    static FileHandle open_read(const fs::path& path);
    static FileHandle open_write(const fs::path& path);
    ~FileHandle();
    FileHandle(FileHandle&& other) noexcept;
    FileHandle& operator=(FileHandle&& other) noexcept;
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;

    void read_at(std::uint64_t offset, std::span<std::uint8_t> out) const;
    void write_at(std::uint64_t offset, std::span<const std::uint8_t> bytes) const;
    void append(std::span<const std::uint8_t> bytes);
    std::uint64_t size() const;

private:
    explicit FileHandle(int fd, fs::path path) : fd_(fd), path_(std::move(path)) {}
    int fd_ = -1;
    fs::path path_;
    std::uint64_t append_pos_ = 0;
};

}  // namespace docsynth
