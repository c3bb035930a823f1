#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace litsynth::text {

/// Number of UTF-8 code points (continuation bytes are not counted).
std::size_t utf8_length(std::string_view s);

/// Longest prefix holding at most `code_points` code points; never splits a sequence.
std::string_view utf8_prefix(std::string_view s, std::size_t code_points);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

/// Whitespace collapsed to single spaces, trimmed, ASCII case folded.
std::string normalize_title(std::string_view s);

std::size_t word_count(std::string_view s);

bool contains_icase(std::string_view haystack, std::string_view needle);

/// Drops a surrounding ``` fence (optionally tagged) and outer whitespace.
std::string strip_code_fence(std::string_view s);

/// An in-text `<key>` citation mark.
struct AngleMark {
    std::size_t offset = 0;  // position of '<'
    std::size_t length = 0;  // through the closing '>'
    std::string key;         // trimmed inner text
};

/// Scans `<key>` marks on a single line each. Empty keys are skipped.
std::vector<AngleMark> find_angle_marks(std::string_view s);

/// Sentence boundaries: '.', '!' or '?' followed by whitespace or end, and blank lines.
std::vector<std::string> split_sentences(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Lowercase alphanumeric tokens.
std::vector<std::string> tokenize_words(std::string_view s);

}  // namespace litsynth::text
