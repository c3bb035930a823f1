#pragma once

#include <map>
#include <memory>
#include <string>

#include "litsynth/llm/backend.hpp"
#include "litsynth/llm/gateway.hpp"

namespace litsynth::llm {

struct HttpResponse {
    int status = 0;  // 0 when the connection failed
    std::string body;
};

using HttpHeaders = std::multimap<std::string, std::string>;

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse get(const std::string& url, const HttpHeaders& headers) = 0;
    virtual HttpResponse post(const std::string& url, const std::string& body, const std::string& content_type,
                              const HttpHeaders& headers) = 0;
};

/// cpp-httplib client. URLs are absolute (scheme://host[:port]/path?query).
class HttplibTransport : public HttpTransport {
public:
    explicit HttplibTransport(int timeout_seconds = 120) : timeout_seconds_(timeout_seconds) {}

    HttpResponse get(const std::string& url, const HttpHeaders& headers) override;
    HttpResponse post(const std::string& url, const std::string& body, const std::string& content_type,
                      const HttpHeaders& headers) override;

private:
    int timeout_seconds_;
};

std::string url_encode(const std::string& s);

/// Reads the bearer token from `env_var`; empty when unset.
std::string token_from_env(const std::string& env_var);

/// Chat-completion style endpoint: POST {base_url}/chat/completions.
class ChatCompletionBackend : public TextBackend {
public:
    ChatCompletionBackend(std::string base_url, std::string model, std::string api_key_env,
                          std::shared_ptr<HttpTransport> transport);

    std::string id() const override { return "chat:" + model_; }
    BackendReply generate(const CompletionRequest& req) override;

private:
    std::string base_url_;
    std::string model_;
    std::string api_key_env_;
    std::shared_ptr<HttpTransport> transport_;
};

/// Embedding endpoint: POST {base_url}/embeddings.
class HttpEmbeddingBackend : public EmbeddingBackend {
public:
    HttpEmbeddingBackend(std::string base_url, std::string model, std::string api_key_env,
                         std::shared_ptr<HttpTransport> transport);

    std::string id() const override { return "embed:" + model_; }
    EmbedReply embed(const std::vector<std::string>& texts) override;

private:
    std::string base_url_;
    std::string model_;
    std::string api_key_env_;
    std::shared_ptr<HttpTransport> transport_;
};

}  // namespace litsynth::llm

namespace litsynth::llm {

/// Decorator retrying retryable statuses with the gateway's backoff schedule.
class RetryingTransport : public HttpTransport {
public:
    RetryingTransport(std::shared_ptr<HttpTransport> inner, BackendProfile profile, Sleeper sleeper);

    HttpResponse get(const std::string& url, const HttpHeaders& headers) override;
    HttpResponse post(const std::string& url, const std::string& body, const std::string& content_type,
                      const HttpHeaders& headers) override;

private:
    template <class Fn>
    HttpResponse run(Fn fn);

    std::shared_ptr<HttpTransport> inner_;
    BackendProfile profile_;
    Sleeper sleeper_;
};

}  // namespace litsynth::llm
