#include "docsynth/prompts.hpp"

#include <fstream>
#include <iterator>

namespace docsynth {

namespace {

bool read_if_exists(const fs::path& path, std::string& out) {
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) return false;
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot read prompt template " + path.string());
    out = trim(std::string(std::istreambuf_iterator<char>(in), {}));
    return true;
}

}  // namespace

const std::string& PromptTemplates::question_for(const std::string& type) const {
    auto it = question_by_type.find(type);
    return it != question_by_type.end() ? it->second : question_fallback;
}

PromptTemplates PromptTemplates::load(const fs::path& dir) {
    PromptTemplates t;
    if (dir.empty()) return t;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw Error(ErrorCode::MissingDirectory, "prompt_dir " + dir.string());

    read_if_exists(dir / "question.txt", t.question_fallback);
    read_if_exists(dir / "extract.txt", t.extract);
    read_if_exists(dir / "extract_source.txt", t.extract_source);
    read_if_exists(dir / "answer_visual.txt", t.answer_visual);
    read_if_exists(dir / "answer_text.txt", t.answer_text);

    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        constexpr std::string_view prefix = "question_";
        if (name.size() > prefix.size() + 4 && name.starts_with(prefix) && name.ends_with(".txt")) {
            std::string body;
            read_if_exists(entry.path(), body);
            t.question_by_type[name.substr(prefix.size(), name.size() - prefix.size() - 4)] = body;
        }
    }
    return t;
}

}  // namespace docsynth
