#include <httplib.h>

#include "litsynth/llm/http.hpp"

#include <cctype>
#include <cstdlib>
#include <regex>

#include <json.hpp>

#include "litsynth/core/error.hpp"

namespace litsynth::llm {

using nlohmann::json;

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // /path?query
};

SplitUrl split_url(const std::string& url) {
    static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, kUrl)) throw InvalidInputError("malformed URL '" + url + "'");
    return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

httplib::Headers to_headers(const HttpHeaders& h) { return httplib::Headers(h.begin(), h.end()); }

HttpResponse convert(const httplib::Result& res) {
    if (!res) return {0, httplib::to_string(res.error())};
    return {res->status, res->body};
}

HttpHeaders auth_headers(const std::string& env_var) {
    HttpHeaders h;
    const auto token = token_from_env(env_var);
    if (!token.empty()) h.emplace("Authorization", "Bearer " + token);
    return h;
}

std::string strip_slash(std::string s) {
    while (!s.empty() && s.back() == '/') s.pop_back();
    return s;
}

}  // namespace

HttpResponse HttplibTransport::get(const std::string& url, const HttpHeaders& headers) {
    const auto u = split_url(url);
    httplib::Client cli(u.origin);
    cli.set_connection_timeout(timeout_seconds_);
    cli.set_read_timeout(timeout_seconds_);
    cli.set_follow_location(true);
    return convert(cli.Get(u.path, to_headers(headers)));
}

HttpResponse HttplibTransport::post(const std::string& url, const std::string& body, const std::string& content_type,
                                    const HttpHeaders& headers) {
    const auto u = split_url(url);
    httplib::Client cli(u.origin);
    cli.set_connection_timeout(timeout_seconds_);
    cli.set_read_timeout(timeout_seconds_);
    return convert(cli.Post(u.path, to_headers(headers), body, content_type));
}

std::string url_encode(const std::string& s) {
    static constexpr char kHex[] = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(kHex[c >> 4]);
            out.push_back(kHex[c & 0xF]);
        }
    }
    return out;
}

std::string token_from_env(const std::string& env_var) {
    if (env_var.empty()) return {};
    const char* v = std::getenv(env_var.c_str());
    return v ? std::string(v) : std::string();
}

ChatCompletionBackend::ChatCompletionBackend(std::string base_url, std::string model, std::string api_key_env,
                                             std::shared_ptr<HttpTransport> transport)
    : base_url_(strip_slash(std::move(base_url))),
      model_(std::move(model)),
      api_key_env_(std::move(api_key_env)),
      transport_(std::move(transport)) {}

BackendReply ChatCompletionBackend::generate(const CompletionRequest& req) {
    json body = {{"model", model_},
                 {"temperature", req.temperature},
                 {"max_tokens", req.max_output_tokens},
                 {"messages", json::array({{{"role", "user"}, {"content", req.prompt}}})}};
    auto res = transport_->post(base_url_ + "/chat/completions", body.dump(), "application/json",
                                auth_headers(api_key_env_));
    if (res.status != 200) return {res.status, res.body};
    try {
        auto j = json::parse(res.body);
        return {200, j.at("choices").at(0).at("message").at("content").get<std::string>()};
    } catch (const json::exception& e) {
        // A 200 with an unusable body is treated as a transient server fault.
        return {502, std::string("unusable completion body: ") + e.what()};
    }
}

HttpEmbeddingBackend::HttpEmbeddingBackend(std::string base_url, std::string model, std::string api_key_env,
                                           std::shared_ptr<HttpTransport> transport)
    : base_url_(strip_slash(std::move(base_url))),
      model_(std::move(model)),
      api_key_env_(std::move(api_key_env)),
      transport_(std::move(transport)) {}

EmbedReply HttpEmbeddingBackend::embed(const std::vector<std::string>& texts) {
    json body = {{"model", model_}, {"input", texts}};
    auto res = transport_->post(base_url_ + "/embeddings", body.dump(), "application/json", auth_headers(api_key_env_));
    if (res.status != 200) return {res.status, {}, res.body};
    try {
        auto j = json::parse(res.body);
        EmbedReply reply;
        reply.vectors.resize(texts.size());
        for (const auto& d : j.at("data")) {
            auto idx = d.value("index", 0);
            if (idx < 0 || static_cast<std::size_t>(idx) >= texts.size()) return {502, {}, "embedding index out of range"};
            reply.vectors[static_cast<std::size_t>(idx)] = d.at("embedding").get<std::vector<double>>();
        }
        return reply;
    } catch (const json::exception& e) {
        return {502, {}, std::string("unusable embedding body: ") + e.what()};
    }
}

RetryingTransport::RetryingTransport(std::shared_ptr<HttpTransport> inner, BackendProfile profile, Sleeper sleeper)
    : inner_(std::move(inner)), profile_(std::move(profile)), sleeper_(sleeper ? std::move(sleeper) : real_sleeper()) {
    profile_.validate();
}

template <class Fn>
HttpResponse RetryingTransport::run(Fn fn) {
    HttpResponse res;
    for (int attempt = 1; attempt <= profile_.max_attempts; ++attempt) {
        res = fn();
        if (res.status == 200 || !profile_.retryable_statuses.count(res.status)) return res;
        if (attempt < profile_.max_attempts) sleeper_(backoff_delay(profile_, attempt));
    }
    return res;
}

HttpResponse RetryingTransport::get(const std::string& url, const HttpHeaders& headers) {
    return run([&] { return inner_->get(url, headers); });
}

HttpResponse RetryingTransport::post(const std::string& url, const std::string& body, const std::string& content_type,
                                     const HttpHeaders& headers) {
    return run([&] { return inner_->post(url, body, content_type, headers); });
}

}  // namespace litsynth::llm
