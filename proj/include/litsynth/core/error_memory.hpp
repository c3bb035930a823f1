#pragma once

#include <cstddef>
#include <deque>
#include <string>

namespace litsynth {

/// Bounded, deduplicated list of recent failure messages that gets injected
/// into follow-up prompts. Oldest entries are evicted first.
class ErrorMemory {
public:
    static constexpr std::size_t kCapacity = 10;

    void record(std::string message);

    const std::deque<std::string>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    bool contains(const std::string& message) const;
    bool mentions(const std::string& fragment) const;

    /// Prompt preamble listing prior failures; empty string when there are none.
    std::string render_preamble() const;

    bool operator==(const ErrorMemory&) const = default;

private:
    std::deque<std::string> entries_;
};

}  // namespace litsynth
