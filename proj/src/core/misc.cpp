#include <algorithm>
#include <iostream>

#include "litsynth/core/error_memory.hpp"
#include "litsynth/core/event_log.hpp"
#include "litsynth/core/hashing.hpp"

namespace litsynth {

std::string stable_hash(std::string_view data) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::uint64_t h = fnv1a64(data);
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
        h >>= 4;
    }
    return out;
}

void ErrorMemory::record(std::string message) {
    if (contains(message)) return;
    entries_.push_back(std::move(message));
    while (entries_.size() > kCapacity) entries_.pop_front();
}

bool ErrorMemory::contains(const std::string& message) const {
    return std::find(entries_.begin(), entries_.end(), message) != entries_.end();
}

bool ErrorMemory::mentions(const std::string& fragment) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const std::string& e) { return e.find(fragment) != std::string::npos; });
}

std::string ErrorMemory::render_preamble() const {
    if (entries_.empty()) return {};
    std::string out = "Previous attempts failed for these reasons. Avoid repeating them:\n";
    for (const auto& e : entries_) out += "- " + e + "\n";
    return out + "\n";
}

void EventLog::record(std::string_view category, std::string_view stage, std::string message) {
    std::lock_guard lock(mutex_);
    if (echo_) std::cerr << "[" << stage << "] " << category << ": " << message << "\n";
    events_.push_back({std::string(category), std::string(stage), std::move(message)});
}

std::vector<LogEvent> EventLog::events() const {
    std::lock_guard lock(mutex_);
    return events_;
}

std::vector<LogEvent> EventLog::events(std::string_view category) const {
    std::lock_guard lock(mutex_);
    std::vector<LogEvent> out;
    for (const auto& e : events_)
        if (e.category == category) out.push_back(e);
    return out;
}

std::size_t EventLog::count(std::string_view category) const {
    std::lock_guard lock(mutex_);
    return static_cast<std::size_t>(
        std::count_if(events_.begin(), events_.end(), [&](const LogEvent& e) { return e.category == category; }));
}

std::size_t EventLog::count(std::string_view category, std::string_view stage) const {
    std::lock_guard lock(mutex_);
    return static_cast<std::size_t>(std::count_if(events_.begin(), events_.end(), [&](const LogEvent& e) {
        return e.category == category && e.stage == stage;
    }));
}

bool EventLog::any_message_contains(std::string_view category, std::string_view fragment) const {
    std::lock_guard lock(mutex_);
    return std::any_of(events_.begin(), events_.end(), [&](const LogEvent& e) {
        return e.category == category && e.message.find(fragment) != std::string::npos;
    });
}

}  // namespace litsynth
