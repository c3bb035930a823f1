#pragma once

#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "litsynth/llm/backend.hpp"

namespace litsynth::pipeline {

/// Deterministic stand-in for the text model. Every pipeline prompt is
/// answered from its structured input with simple lexical rules, so a full
/// run needs no network. Unknown tags get status 400.
class OfflineBackend : public llm::TextBackend {
public:
    std::string id() const override { return "offline"; }
    llm::BackendReply generate(const llm::CompletionRequest& req) override;

    std::size_t calls() const;
    std::size_t calls_with_prefix(std::string_view tag_prefix) const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::size_t> calls_;
};

/// Lowercase words of at least four letters that are not stopwords.
std::vector<std::string> content_words(std::string_view text);

}  // namespace litsynth::pipeline
