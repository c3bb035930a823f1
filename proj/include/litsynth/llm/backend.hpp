#pragma once

#include <string>
#include <vector>

namespace litsynth::llm {

struct CompletionRequest {
    std::string prompt;
    double temperature = 0.0;
    int max_output_tokens = 4096;
    std::string tag;  // pipeline stage label, also partitions the cache
};

/// Raw transport outcome. status 200 means `body` is the generated text;
/// status 0 means the request never reached the server.
struct BackendReply {
    int status = 200;
    std::string body;
};

class TextBackend {
public:
    virtual ~TextBackend() = default;
    virtual std::string id() const = 0;
    virtual BackendReply generate(const CompletionRequest& req) = 0;
};

struct EmbedReply {
    int status = 200;
    std::vector<std::vector<double>> vectors;
    std::string error;
};

class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual std::string id() const = 0;
    virtual EmbedReply embed(const std::vector<std::string>& texts) = 0;
};

}  // namespace litsynth::llm
