#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace litsynth {

/// 64-bit FNV-1a. Stable across platforms and runs, so it can name files.
constexpr std::uint64_t fnv1a64(std::string_view data) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// 16 lowercase hex digits of fnv1a64.
std::string stable_hash(std::string_view data);

}  // namespace litsynth
