#pragma once

#include <cstddef>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace litsynth {

// Event categories used across stages.
namespace events {
inline constexpr std::string_view kInfo = "info";
inline constexpr std::string_view kMonitor = "monitor";        // attribution monitor hit
inline constexpr std::string_view kFallback = "fallback";
inline constexpr std::string_view kSkip = "skip";
inline constexpr std::string_view kCompression = "compression";
inline constexpr std::string_view kRetry = "retry";
inline constexpr std::string_view kRejection = "rejection";
inline constexpr std::string_view kExhaustion = "exhaustion";
inline constexpr std::string_view kRelevance = "relevance";
}  // namespace events

struct LogEvent {
    std::string category;
    std::string stage;
    std::string message;
};

/// Thread-safe append-only structured log shared by pipeline stages.
class EventLog {
public:
    void record(std::string_view category, std::string_view stage, std::string message);

    std::vector<LogEvent> events() const;
    std::vector<LogEvent> events(std::string_view category) const;
    std::size_t count(std::string_view category) const;
    std::size_t count(std::string_view category, std::string_view stage) const;
    bool any_message_contains(std::string_view category, std::string_view fragment) const;

    void set_echo(bool echo) { echo_ = echo; }

private:
    mutable std::mutex mutex_;
    std::vector<LogEvent> events_;
    bool echo_ = false;
};

}  // namespace litsynth
