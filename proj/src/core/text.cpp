#include "litsynth/core/text.hpp"

#include <algorithm>
#include <cctype>

namespace litsynth::text {

namespace {

bool is_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::size_t utf8_length(std::string_view s) {
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char c) { return !is_continuation(static_cast<unsigned char>(c)); }));
}

std::string_view utf8_prefix(std::string_view s, std::size_t code_points) {
    std::size_t seen = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!is_continuation(static_cast<unsigned char>(s[i]))) {
            if (seen == code_points) return s.substr(0, i);
            ++seen;
        }
    }
    return s;
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string normalize_title(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

std::size_t word_count(std::string_view s) {
    std::size_t n = 0;
    bool in_word = false;
    for (char c : s) {
        if (is_space(c)) {
            in_word = false;
        } else if (!in_word) {
            in_word = true;
            ++n;
        }
    }
    return n;
}

bool contains_icase(std::string_view haystack, std::string_view needle) {
    return to_lower(haystack).find(to_lower(needle)) != std::string::npos;
}

std::string strip_code_fence(std::string_view s) {
    std::string t = trim(s);
    if (t.rfind("```", 0) != 0) return t;
    auto first_nl = t.find('\n');
    if (first_nl == std::string::npos) return t;
    auto last = t.rfind("```");
    if (last == std::string::npos || last <= first_nl) return trim(std::string_view(t).substr(first_nl + 1));
    return trim(std::string_view(t).substr(first_nl + 1, last - first_nl - 1));
}

std::vector<AngleMark> find_angle_marks(std::string_view s) {
    std::vector<AngleMark> marks;
    std::size_t i = 0;
    while ((i = s.find('<', i)) != std::string_view::npos) {
        auto close = s.find_first_of(">\n<", i + 1);
        if (close == std::string_view::npos) break;
        if (s[close] != '>') {
            i = close;
            continue;
        }
        std::string key = trim(s.substr(i + 1, close - i - 1));
        if (!key.empty()) marks.push_back({i, close - i + 1, std::move(key)});
        i = close + 1;
    }
    return marks;
}

std::vector<std::string> split_sentences(std::string_view s) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        auto t = trim(current);
        if (!t.empty()) out.push_back(std::move(t));
        current.clear();
    };
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (c == '\n' && i + 1 < s.size() && s[i + 1] == '\n') {
            flush();
            continue;
        }
        current.push_back(c == '\n' ? ' ' : c);
        if ((c == '.' || c == '!' || c == '?') && (i + 1 == s.size() || is_space(s[i + 1]))) flush();
    }
    flush();
    return out;
}

std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto nl = s.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < s.size()) lines.emplace_back(s.substr(start));
            break;
        }
        lines.emplace_back(s.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::vector<std::string> tokenize_words(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        auto uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc)) {
            cur.push_back(static_cast<char>(std::tolower(uc)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

}  // namespace litsynth::text
