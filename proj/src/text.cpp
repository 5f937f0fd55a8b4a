#include "docsynth/text.hpp"

#include <cctype>

#include "docsynth/core.hpp"

namespace docsynth {

std::string page_marker(int index) { return "Page " + std::to_string(index) + ":"; }

std::string sanitize_generated(std::string_view text) {
    std::string out(text);
    if (auto close = out.rfind(kThinkClose); close != std::string::npos) {
        out.erase(0, close + kThinkClose.size());
    }
    out = replace_all(std::move(out), kThinkOpen, "");
    out = replace_all(std::move(out), kThinkClose, "");
    out = replace_all(std::move(out), kCotToken, "");
    return out;
}

std::string single_line(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out += ' ';
        pending_space = false;
        out += static_cast<char>(c);
    }
    return out;
}

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
    if (needle.empty()) return 0;
    std::size_t n = 0;
    for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

}  // namespace docsynth
