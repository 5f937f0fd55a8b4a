#include "docsynth/safetensors.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <set>

#include "docsynth/half.hpp"

static_assert(std::endian::native == std::endian::little, "safetensors payloads are little-endian");

namespace docsynth {

using nlohmann::json;

namespace {

struct DTypeRow {
    DType dtype;
    std::string_view name;
    std::size_t size;
};

constexpr DTypeRow kDTypes[] = {
    {DType::F64, "F64", 8},         {DType::F32, "F32", 4},         {DType::F16, "F16", 2},
    {DType::BF16, "BF16", 2},       {DType::F8_E4M3, "F8_E4M3", 1}, {DType::F8_E5M2, "F8_E5M2", 1},
    {DType::I64, "I64", 8},         {DType::I32, "I32", 4},         {DType::I16, "I16", 2},
    {DType::I8, "I8", 1},           {DType::U64, "U64", 8},         {DType::U32, "U32", 4},
    {DType::U16, "U16", 2},         {DType::U8, "U8", 1},           {DType::BOOL, "BOOL", 1},
};

constexpr std::uint64_t kMaxHeaderBytes = 100ull << 20;

std::string errno_text() { return std::strerror(errno); }

}  // namespace

std::string_view to_string(DType dtype) noexcept {
    for (const auto& row : kDTypes) {
        if (row.dtype == dtype) return row.name;
    }
    return "?";
}

DType parse_dtype(std::string_view text) {
    for (const auto& row : kDTypes) {
        if (row.name == text) return row.dtype;
    }
    throw Error(ErrorCode::InvalidCheckpoint, "unsupported dtype '" + std::string(text) + "'");
}

std::size_t dtype_size(DType dtype) noexcept {
    for (const auto& row : kDTypes) {
        if (row.dtype == dtype) return row.size;
    }
    return 0;
}

bool is_mergeable_float(DType dtype) noexcept {
    return dtype == DType::F64 || dtype == DType::F32 || dtype == DType::F16 || dtype == DType::BF16;
}

namespace {

std::uint64_t element_count_of(const std::vector<std::int64_t>& shape) {
    std::uint64_t n = 1;
    for (auto d : shape) n *= static_cast<std::uint64_t>(d);
    return n;
}

}  // namespace

std::uint64_t TensorInfo::element_count() const noexcept { return element_count_of(shape); }
std::uint64_t TensorSpec::nbytes() const noexcept { return element_count_of(shape) * dtype_size(dtype); }

// ---------------------------------------------------------------------------
// FileHandle

FileHandle FileHandle::open_read(const fs::path& path) {
    const int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd < 0) throw Error(ErrorCode::IoFailure, "open " + path.string() + ": " + errno_text());
    return FileHandle(fd, path);
}

FileHandle FileHandle::open_write(const fs::path& path) {
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(ErrorCode::IoFailure, "create " + path.string() + ": " + errno_text());
    return FileHandle(fd, path);
}

FileHandle::~FileHandle() {
    if (fd_ >= 0) ::close(fd_);
}

FileHandle::FileHandle(FileHandle&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), path_(std::move(other.path_)), append_pos_(other.append_pos_) {}

FileHandle& FileHandle::operator=(FileHandle&& other) noexcept {
    if (this != &other) {
        if (fd_ >= 0) ::close(fd_);
        fd_ = std::exchange(other.fd_, -1);
        path_ = std::move(other.path_);
        append_pos_ = other.append_pos_;
    }
    return *this;
}

void FileHandle::read_at(std::uint64_t offset, std::span<std::uint8_t> out) const {
    std::size_t done = 0;
    while (done < out.size()) {
        const ssize_t n = ::pread(fd_, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(ErrorCode::IoFailure, "read " + path_.string() + ": " + errno_text());
        }
        if (n == 0) throw Error(ErrorCode::IoFailure, "unexpected end of file in " + path_.string());
        done += static_cast<std::size_t>(n);
    }
}

void FileHandle::write_at(std::uint64_t offset, std::span<const std::uint8_t> bytes) const {
    std::size_t done = 0;
    while (done < bytes.size()) {
        const ssize_t n =
            ::pwrite(fd_, bytes.data() + done, bytes.size() - done, static_cast<off_t>(offset + done));
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(ErrorCode::IoFailure, "write " + path_.string() + ": " + errno_text());
        }
        done += static_cast<std::size_t>(n);
    }
}

void FileHandle::append(std::span<const std::uint8_t> bytes) {
    write_at(append_pos_, bytes);
    append_pos_ += bytes.size();
}

std::uint64_t FileHandle::size() const {
    struct stat st {};
    if (::fstat(fd_, &st) != 0) throw Error(ErrorCode::IoFailure, "stat " + path_.string() + ": " + errno_text());
    return static_cast<std::uint64_t>(st.st_size);
}

// ---------------------------------------------------------------------------
// Reading

namespace {

void load_shard(const fs::path& root, const std::string& file, std::vector<ShardLayout>& shards,
                std::map<std::string, TensorInfo>& tensors) {
    const auto fh = FileHandle::open_read(root / file);
    const std::uint64_t file_size = fh.size();
    if (file_size < 8) throw Error(ErrorCode::InvalidCheckpoint, file + ": too short for a header");

    std::uint8_t len_bytes[8];
    fh.read_at(0, len_bytes);
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, len_bytes, 8);
    if (header_len > kMaxHeaderBytes || 8 + header_len > file_size) {
        throw Error(ErrorCode::InvalidCheckpoint, file + ": header length " + std::to_string(header_len) +
                                                      " exceeds file size");
    }
    std::string header(header_len, '\0');
    fh.read_at(8, std::span(reinterpret_cast<std::uint8_t*>(header.data()), header.size()));

    json j;
    try {
        j = json::parse(header);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidCheckpoint, file + ": header is not JSON: " + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::InvalidCheckpoint, file + ": header must be an object");

    const std::uint64_t data_start = 8 + header_len;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    for (const auto& [name, entry] : j.items()) {
        if (name == "__metadata__") continue;
        TensorInfo info;
        info.name = name;
        info.shard = file;
        try {
            info.dtype = parse_dtype(entry.at("dtype").get<std::string>());
            info.shape = entry.at("shape").get<std::vector<std::int64_t>>();
            const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
            if (offsets.size() != 2 || offsets[1] < offsets[0]) {
                throw Error(ErrorCode::InvalidCheckpoint, "bad data_offsets");
            }
            info.offset = data_start + offsets[0];
            info.nbytes = offsets[1] - offsets[0];
            ranges.emplace_back(offsets[0], offsets[1]);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::InvalidCheckpoint, file + ": tensor '" + name + "': " + e.what());
        }
        for (auto d : info.shape) {
            if (d < 0) throw Error(ErrorCode::InvalidCheckpoint, file + ": negative dimension in '" + name + "'");
        }
        if (info.element_count() * dtype_size(info.dtype) != info.nbytes) {
            throw Error(ErrorCode::InvalidCheckpoint, file + ": '" + name + "' byte range does not match shape x dtype");
        }
        if (info.offset + info.nbytes > file_size) {
            throw Error(ErrorCode::InvalidCheckpoint, file + ": '" + name + "' extends past end of file");
        }
        if (!tensors.emplace(name, std::move(info)).second) {
            throw Error(ErrorCode::InvalidCheckpoint, "tensor '" + name + "' defined in more than one shard");
        }
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i) {
        if (ranges[i].first < ranges[i - 1].second && ranges[i].first != ranges[i].second) {
            throw Error(ErrorCode::InvalidCheckpoint, file + ": overlapping tensor byte ranges");
        }
    }
    shards.push_back({file, data_start, file_size});
}

}  // namespace

TensorStore TensorStore::open(const fs::path& path) {
    TensorStore store;
    std::error_code ec;
    if (fs::is_regular_file(path, ec)) {
        store.root_ = path.parent_path().empty() ? fs::path(".") : path.parent_path();
        load_shard(store.root_, path.filename().string(), store.shards_, store.tensors_);
        return store;
    }
    if (!fs::is_directory(path, ec)) {
        throw Error(ErrorCode::IoFailure, "checkpoint not found: " + path.string());
    }
    store.root_ = path;
    store.from_directory_ = true;

    const fs::path index_path = path / kIndexFileName;
    if (fs::exists(index_path)) {
        store.has_index_ = true;
        json index;
        try {
            std::ifstream in(index_path);
            index = json::parse(in);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::InvalidCheckpoint, "index: " + std::string(e.what()));
        }
        if (!index.contains("weight_map") || !index["weight_map"].is_object()) {
            throw Error(ErrorCode::InvalidCheckpoint, "index lacks a weight_map");
        }
        std::map<std::string, std::string> weight_map = index["weight_map"].get<std::map<std::string, std::string>>();
        std::set<std::string> files;
        for (const auto& [name, file] : weight_map) files.insert(file);
        for (const auto& file : files) load_shard(path, file, store.shards_, store.tensors_);
        for (const auto& [name, file] : weight_map) {
            auto it = store.tensors_.find(name);
            if (it == store.tensors_.end() || it->second.shard != file) {
                throw Error(ErrorCode::InvalidCheckpoint, "index maps '" + name + "' to " + file + " but it is not there");
            }
        }
        if (weight_map.size() != store.tensors_.size()) {
            throw Error(ErrorCode::InvalidCheckpoint, "shards hold tensors missing from the index");
        }
        return store;
    }

    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(path)) {
        if (entry.is_regular_file() && entry.path().extension() == ".safetensors") {
            files.push_back(entry.path().filename().string());
        }
    }
    if (files.empty()) throw Error(ErrorCode::InvalidCheckpoint, "no .safetensors files in " + path.string());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) load_shard(path, file, store.shards_, store.tensors_);
    return store;
}

const TensorInfo& TensorStore::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error(ErrorCode::InvalidCheckpoint, "no tensor '" + name + "'");
    return it->second;
}

std::uint64_t TensorStore::largest_tensor_bytes() const noexcept {
    std::uint64_t m = 0;
    for (const auto& [name, t] : tensors_) m = std::max(m, t.nbytes);
    return m;
}

std::vector<std::uint8_t> read_tensor_bytes(const TensorStore& store, const std::string& name) {
    const auto& info = store.at(name);
    std::vector<std::uint8_t> out(info.nbytes);
    FileHandle::open_read(store.shard_path(info.shard)).read_at(info.offset, out);
    return out;
}

std::vector<double> read_tensor_values(const TensorStore& store, const std::string& name) {
    const auto& info = store.at(name);
    const auto bytes = read_tensor_bytes(store, name);
    const std::size_t n = info.element_count();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        switch (info.dtype) {
            case DType::F64: {
                double v;
                std::memcpy(&v, bytes.data() + 8 * i, 8);
                out[i] = v;
                break;
            }
            case DType::F32: {
                float v;
                std::memcpy(&v, bytes.data() + 4 * i, 4);
                out[i] = v;
                break;
            }
            case DType::F16:
            case DType::BF16: {
                std::uint16_t v;
                std::memcpy(&v, bytes.data() + 2 * i, 2);
                out[i] = info.dtype == DType::F16 ? half_to_float(v) : bf16_to_float(v);
                break;
            }
            default:
                throw Error(ErrorCode::InvalidType, "'" + name + "' is not a float tensor");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Writing

ShardWriter::ShardWriter(const fs::path& path, std::vector<TensorSpec> tensors, const json& metadata) : path_(path) {
    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        const std::uint64_t n = t.nbytes();
        if (header.contains(t.name)) throw Error(ErrorCode::InvalidCheckpoint, "duplicate tensor '" + t.name + "'");
        header[t.name] = {{"dtype", to_string(t.dtype)}, {"shape", t.shape}, {"data_offsets", {offset, offset + n}}};
        offset += n;
    }
    if (!metadata.empty()) header["__metadata__"] = metadata;
    std::string text = header.dump();
    while (text.size() % 8 != 0) text.push_back(' ');
    expected_ = offset;

    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(ErrorCode::IoFailure, "create " + path.string() + ": " + errno_text());
    std::uint64_t len = text.size();
    std::uint8_t len_bytes[8];
    std::memcpy(len_bytes, &len, 8);
    auto put = [&](const void* p, std::size_t n) {
        const auto* c = static_cast<const std::uint8_t*>(p);
        while (n > 0) {
            const ssize_t w = ::write(fd_, c, n);
            if (w < 0) {
                if (errno == EINTR) continue;
                throw Error(ErrorCode::IoFailure, "write " + path_.string() + ": " + errno_text());
            }
            c += w;
            n -= static_cast<std::size_t>(w);
        }
    };
    put(len_bytes, 8);
    put(text.data(), text.size());
}

ShardWriter::~ShardWriter() {
    if (fd_ >= 0) ::close(fd_);
}

void ShardWriter::write(std::span<const std::uint8_t> bytes) {
    if (written_ + bytes.size() > expected_) {
        throw Error(ErrorCode::InvalidCheckpoint, path_.string() + ": more payload than declared");
    }
    const std::uint8_t* c = bytes.data();
    std::size_t n = bytes.size();
    while (n > 0) {
        const ssize_t w = ::write(fd_, c, n);
        if (w < 0) {
            if (errno == EINTR) continue;
            throw Error(ErrorCode::IoFailure, "write " + path_.string() + ": " + errno_text());
        }
        c += w;
        n -= static_cast<std::size_t>(w);
    }
    written_ += bytes.size();
}

void ShardWriter::finish() {
    if (written_ != expected_) {
        throw Error(ErrorCode::InvalidCheckpoint, path_.string() + ": payload short by " +
                                                      std::to_string(expected_ - written_) + " bytes");
    }
    if (::close(fd_) != 0) {
        fd_ = -1;
        throw Error(ErrorCode::IoFailure, "close " + path_.string() + ": " + errno_text());
    }
    fd_ = -1;
}

void write_safetensors(const fs::path& path, std::span<const TensorData> tensors, const json& metadata) {
    std::vector<TensorSpec> specs;
    for (const auto& t : tensors) {
        if (t.bytes.size() != t.spec.nbytes()) {
            throw Error(ErrorCode::InvalidCheckpoint, "'" + t.spec.name + "': payload size does not match shape");
        }
        specs.push_back(t.spec);
    }
    ShardWriter writer(path, std::move(specs), metadata);
    for (const auto& t : tensors) writer.write(t.bytes);
    writer.finish();
}

void write_index(const fs::path& dir, const std::map<std::string, std::string>& weight_map, std::uint64_t total_size) {
    json j{{"metadata", {{"total_size", total_size}}}, {"weight_map", weight_map}};
    std::ofstream out(dir / kIndexFileName);
    out << j.dump(2) << '\n';
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write index in " + dir.string());
}

namespace {

template <typename T>
void put_int(std::vector<std::uint8_t>& out, std::size_t i, double value) {
    const auto v = static_cast<T>(value);
    std::memcpy(out.data() + sizeof(T) * i, &v, sizeof(T));
}

}  // namespace

std::vector<std::uint8_t> encode_values(DType dtype, std::span<const double> values) {
    std::vector<std::uint8_t> out(values.size() * dtype_size(dtype));
    for (std::size_t i = 0; i < values.size(); ++i) {
        switch (dtype) {
            case DType::F64:
                std::memcpy(out.data() + 8 * i, &values[i], 8);
                break;
            case DType::F32: {
                const auto v = static_cast<float>(values[i]);
                std::memcpy(out.data() + 4 * i, &v, 4);
                break;
            }
            case DType::F16:
            case DType::BF16: {
                const auto f = static_cast<float>(values[i]);
                const std::uint16_t v = dtype == DType::F16 ? float_to_half(f) : float_to_bf16(f);
                std::memcpy(out.data() + 2 * i, &v, 2);
                break;
            }
            case DType::I64: put_int<std::int64_t>(out, i, values[i]); break;
            case DType::I32: put_int<std::int32_t>(out, i, values[i]); break;
            case DType::I16: put_int<std::int16_t>(out, i, values[i]); break;
            case DType::I8: put_int<std::int8_t>(out, i, values[i]); break;
            case DType::U64: put_int<std::uint64_t>(out, i, values[i]); break;
            case DType::U32: put_int<std::uint32_t>(out, i, values[i]); break;
            case DType::U16: put_int<std::uint16_t>(out, i, values[i]); break;
            case DType::U8: put_int<std::uint8_t>(out, i, values[i]); break;
            case DType::BOOL: put_int<std::uint8_t>(out, i, values[i] != 0.0); break;
            default:
                throw Error(ErrorCode::InvalidType, "encode_values cannot encode " + std::string(to_string(dtype)));
        }
    }
    return out;
}

}  // namespace docsynth
