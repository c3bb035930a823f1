#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "litsynth/llm/backend.hpp"

namespace litsynth::llm {

enum class CacheTier { Api, Task, Runtime };

std::string_view to_string(CacheTier tier);

struct CacheKey {
    CacheTier tier = CacheTier::Api;
    std::string key;
};

/// Deterministic key of a completion: every parameter that can change the
/// output, including the backend identity.
CacheKey completion_key(const CompletionRequest& req, const std::string& backend_id);
CacheKey embedding_key(const std::string& text, const std::string& backend_id);
CacheKey task_key(const std::string& stage, const std::string& identity);

/// On-disk key -> JSON value store, one file per key named by hash. Missing
/// directory means memory only. Writes are atomic; reads tolerate corrupt
/// entries by treating them as misses.
class DiskStore {
public:
    explicit DiskStore(std::optional<std::filesystem::path> dir,
                       std::optional<std::chrono::seconds> ttl = std::nullopt);

    std::optional<nlohmann::json> get(const std::string& key) const;
    void put(const std::string& key, const nlohmann::json& value);
    void clear();
    const std::optional<std::filesystem::path>& dir() const noexcept { return dir_; }

private:
    std::filesystem::path file_for(const std::string& key) const;

    std::optional<std::filesystem::path> dir_;
    std::optional<std::chrono::seconds> ttl_;
    mutable std::mutex mutex_;
    std::map<std::string, nlohmann::json> memory_;
};

/// Stage-result cache (task tier). Keys are stage + identity of the input.
class TaskCache {
public:
    explicit TaskCache(std::optional<std::filesystem::path> dir) : store_(std::move(dir)) {}

    std::optional<nlohmann::json> get(const std::string& stage, const std::string& identity) const;
    void put(const std::string& stage, const std::string& identity, const nlohmann::json& value);
    void clear() { store_.clear(); }

private:
    DiskStore store_;
};

/// Removes every tier below `cache_dir`. Returns the number of files removed.
std::size_t clear_cache_dir(const std::filesystem::path& cache_dir);

}  // namespace litsynth::llm
