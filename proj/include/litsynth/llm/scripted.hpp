#pragma once

#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <regex>
#include <string>
#include <vector>

#include "litsynth/llm/backend.hpp"

namespace litsynth::llm {

using Responder = std::function<BackendReply(const CompletionRequest&)>;

/// Deterministic backend driven by a (tag, prompt pattern) -> reply table.
/// Rules are tried in insertion order; queued replies are consumed one per call
/// and the last one repeats. Unmatched requests get status 400.
class ScriptedBackend : public TextBackend {
public:
    explicit ScriptedBackend(std::string id = "scripted") : id_(std::move(id)) {}

    std::string id() const override { return id_; }
    BackendReply generate(const CompletionRequest& req) override;

    /// Empty tag matches every tag; empty pattern matches every prompt.
    ScriptedBackend& on(std::string tag, std::string pattern, std::vector<BackendReply> replies);
    ScriptedBackend& on(std::string tag, std::string pattern, std::vector<std::string> replies);
    ScriptedBackend& on(std::string tag, std::vector<std::string> replies) { return on(std::move(tag), "", std::move(replies)); }
    ScriptedBackend& respond(std::string tag, std::string pattern, Responder fn);

    struct Call {
        std::string tag;
        std::string prompt;
        double temperature;
    };
    std::vector<Call> calls() const;
    std::size_t call_count() const;
    std::size_t call_count(const std::string& tag) const;
    std::size_t call_count_prefix(const std::string& tag_prefix) const;
    void reset_calls();

private:
    struct Rule {
        std::string tag;
        std::string pattern_text;
        std::regex pattern;
        std::deque<BackendReply> replies;
        Responder responder;
    };

    std::string id_;
    mutable std::mutex mutex_;
    std::vector<Rule> rules_;
    std::vector<Call> calls_;
};

/// Fixed vectors by exact text, falling back to `fallback` (or status 500).
class ScriptedEmbeddingBackend : public EmbeddingBackend {
public:
    explicit ScriptedEmbeddingBackend(std::string id = "scripted-embed") : id_(std::move(id)) {}

    std::string id() const override { return id_; }
    EmbedReply embed(const std::vector<std::string>& texts) override;

    ScriptedEmbeddingBackend& set(std::string text, std::vector<double> vec);
    ScriptedEmbeddingBackend& fallback(std::shared_ptr<EmbeddingBackend> fb);
    /// Next `n` calls fail with `status`.
    ScriptedEmbeddingBackend& fail_next(int n, int status);
    std::size_t call_count() const;

private:
    std::string id_;
    mutable std::mutex mutex_;
    std::map<std::string, std::vector<double>> table_;
    std::shared_ptr<EmbeddingBackend> fallback_;
    int failures_left_ = 0;
    int failure_status_ = 503;
    std::size_t calls_ = 0;
};

/// Local bag-of-words feature hashing embedder. Needs no network and gives
/// texts sharing vocabulary a positive cosine.
class HashingEmbeddingBackend : public EmbeddingBackend {
public:
    explicit HashingEmbeddingBackend(std::size_t dims = 256) : dims_(dims) {}

    std::string id() const override { return "hashing-" + std::to_string(dims_); }
    EmbedReply embed(const std::vector<std::string>& texts) override;

private:
    std::size_t dims_;
};

}  // namespace litsynth::llm
