#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "litsynth/llm/backend.hpp"
#include "litsynth/llm/cache.hpp"

namespace litsynth::llm {

struct BackendProfile {
    std::size_t context_window = 512000;
    std::set<int> retryable_statuses{0, 408, 429, 500, 502, 503, 504};
    int max_attempts = 10;
    double backoff_min_s = 1.0;
    double backoff_max_s = 300.0;

    void validate() const;
};

/// Delay before attempt `attempt + 1` after `attempt` failures (1-based).
double backoff_delay(const BackendProfile& profile, int attempt);

using Sleeper = std::function<void(double seconds)>;

Sleeper real_sleeper();

struct GatewayOptions {
    BackendProfile profile;
    std::optional<std::filesystem::path> cache_dir;  // api and task tiers live below it
    std::optional<std::chrono::seconds> api_ttl;
    std::size_t embed_batch_size = 32;
    Sleeper sleeper;  // defaults to real_sleeper()
};

struct GatewayStats {
    std::size_t transport_calls = 0;
    std::size_t embed_transport_calls = 0;
    std::size_t cache_hits = 0;
    std::size_t retries = 0;
};

/// Single entry point to generation and embedding backends. Thread-safe.
/// Lookup order for completions: runtime tier, api tier, then transport.
/// Concurrent identical requests share one in-flight transport call.
class Gateway {
public:
    Gateway(std::shared_ptr<TextBackend> text, std::shared_ptr<EmbeddingBackend> embedder,
            GatewayOptions options = {});

    std::string complete(const CompletionRequest& req);
    std::string complete(const CompletionRequest& req, const BackendProfile& profile);

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts);

    TaskCache& task_cache() noexcept { return task_cache_; }
    const BackendProfile& profile() const noexcept { return options_.profile; }
    GatewayStats stats() const;
    std::vector<double> recorded_delays() const;
    std::string text_backend_id() const { return text_->id(); }
    std::string embedding_backend_id() const { return embedder_ ? embedder_->id() : std::string("none"); }

private:
    std::string call_with_retry(const CompletionRequest& req, const BackendProfile& profile);
    std::vector<std::vector<double>> embed_with_retry(const std::vector<std::string>& batch);
    void pause(double seconds);

    std::shared_ptr<TextBackend> text_;
    std::shared_ptr<EmbeddingBackend> embedder_;
    GatewayOptions options_;
    DiskStore api_;
    TaskCache task_cache_;

    mutable std::mutex mutex_;
    std::map<std::string, std::string> runtime_;
    std::map<std::string, std::vector<double>> runtime_vectors_;
    std::map<std::string, std::shared_future<std::string>> in_flight_;
    GatewayStats stats_;
    std::vector<double> delays_;
};

/// L2-normalizes in place. Throws OutputError on a zero vector.
void normalize(std::vector<double>& v);
double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace litsynth::llm
