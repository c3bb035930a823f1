#include "litsynth/llm/cache.hpp"

#include <cstdio>

#include "litsynth/core/hashing.hpp"
#include "litsynth/core/substrate.hpp"

namespace litsynth::llm {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(CacheTier tier) {
    switch (tier) {
        case CacheTier::Api: return "api";
        case CacheTier::Task: return "task";
        case CacheTier::Runtime: return "runtime";
    }
    return "api";
}

CacheKey completion_key(const CompletionRequest& req, const std::string& backend_id) {
    char temp[32];
    std::snprintf(temp, sizeof temp, "%.4f", req.temperature);
    json k = {{"kind", "completion"},
              {"backend", backend_id},
              {"tag", req.tag},
              {"temperature", temp},
              {"max_output_tokens", req.max_output_tokens},
              {"prompt", req.prompt}};
    return {CacheTier::Api, k.dump()};
}

CacheKey embedding_key(const std::string& text, const std::string& backend_id) {
    return {CacheTier::Api, json({{"kind", "embedding"}, {"backend", backend_id}, {"text", text}}).dump()};
}

CacheKey task_key(const std::string& stage, const std::string& identity) {
    return {CacheTier::Task, json({{"stage", stage}, {"identity", identity}}).dump()};
}

DiskStore::DiskStore(std::optional<fs::path> dir, std::optional<std::chrono::seconds> ttl)
    : dir_(std::move(dir)), ttl_(ttl) {}

fs::path DiskStore::file_for(const std::string& key) const { return *dir_ / (stable_hash(key) + ".json"); }

std::optional<json> DiskStore::get(const std::string& key) const {
    std::lock_guard lock(mutex_);
    if (!dir_) {
        auto it = memory_.find(key);
        if (it == memory_.end()) return std::nullopt;
        return it->second;
    }
    const auto path = file_for(key);
    if (!fs::exists(path)) return std::nullopt;
    try {
        auto entry = json::parse(read_file(path));
        if (entry.at("key").get<std::string>() != key) return std::nullopt;
        if (!entry.at("expires_at").is_null()) {
            const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                                 std::chrono::system_clock::now().time_since_epoch())
                                 .count();
            if (entry["expires_at"].get<long long>() <= now) return std::nullopt;
        }
        return entry.at("value");
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

void DiskStore::put(const std::string& key, const json& value) {
    std::lock_guard lock(mutex_);
    if (!dir_) {
        memory_[key] = value;
        return;
    }
    json expires = nullptr;
    if (ttl_) {
        expires = std::chrono::duration_cast<std::chrono::seconds>(
                      (std::chrono::system_clock::now() + *ttl_).time_since_epoch())
                      .count();
    }
    write_file_atomic(file_for(key), json({{"key", key}, {"value", value}, {"expires_at", expires}}).dump());
}

void DiskStore::clear() {
    std::lock_guard lock(mutex_);
    memory_.clear();
    if (dir_ && fs::exists(*dir_)) fs::remove_all(*dir_);
}

std::optional<json> TaskCache::get(const std::string& stage, const std::string& identity) const {
    return store_.get(task_key(stage, identity).key);
}

void TaskCache::put(const std::string& stage, const std::string& identity, const json& value) {
    store_.put(task_key(stage, identity).key, value);
}

std::size_t clear_cache_dir(const fs::path& cache_dir) {
    std::size_t removed = 0;
    for (const char* tier : {"api", "task"}) {
        const auto dir = cache_dir / tier;
        if (!fs::exists(dir)) continue;
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file()) ++removed;
        fs::remove_all(dir);
    }
    return removed;
}

}  // namespace litsynth::llm
