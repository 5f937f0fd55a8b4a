#pragma once

#include <string>
#include <string_view>

namespace docsynth {

inline constexpr std::string_view kCotToken = "<cot>";
inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";

/// "Page 7:"
std::string page_marker(int index);

/// Model output with any reasoning block and stray control tokens removed, so
/// generated text can never forge the trace structure of a training example.
std::string sanitize_generated(std::string_view text);

/// Newlines and runs of whitespace collapsed to single spaces, trimmed.
std::string single_line(std::string_view text);

std::size_t count_occurrences(std::string_view haystack, std::string_view needle);

}  // namespace docsynth
