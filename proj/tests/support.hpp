#pragma once

#include <fstream>
#include <random>
#include <string>

#include "docsynth/backend.hpp"
#include "docsynth/core.hpp"
#include "docsynth/rng.hpp"

namespace docsynth::testing {

inline const fs::path kFixtureDir = DOCSYNTH_FIXTURE_DIR;
inline const fs::path kCliPath = DOCSYNTH_CLI_PATH;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = fs::temp_directory_path() / ("docsynth-test-" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Directory of n fake page images; each file's bytes are unique.
inline fs::path make_document(const fs::path& root, const std::string& id, int n) {
    const fs::path dir = root / id;
    fs::create_directories(dir);
    for (int i = 1; i <= n; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "page_%04d.png", i);
        write_text(dir / name, "img:" + id + ":" + std::to_string(i));
    }
    return dir;
}

inline std::unique_ptr<ScriptedBackend> pipeline_backend() {
    return ScriptedBackend::from_fixture(kFixtureDir / "pipeline_script.json");
}

/// Config for fast offline runs: scripted backend, no backoff delay.
inline PipelineConfig quick_config() {
    PipelineConfig cfg;
    cfg.script = kFixtureDir / "pipeline_script.json";
    cfg.base_backoff_ms = 0;
    return cfg;
}

}  // namespace docsynth::testing
