#include "litsynth/llm/scripted.hpp"

#include <algorithm>

#include "litsynth/core/hashing.hpp"
#include "litsynth/core/text.hpp"

namespace litsynth::llm {

BackendReply ScriptedBackend::generate(const CompletionRequest& req) {
    Responder fn;
    {
        std::lock_guard lock(mutex_);
        calls_.push_back({req.tag, req.prompt, req.temperature});
        for (auto& rule : rules_) {
            if (!rule.tag.empty() && rule.tag != req.tag) continue;
            if (!rule.pattern_text.empty() && !std::regex_search(req.prompt, rule.pattern)) continue;
            if (rule.responder) {
                fn = rule.responder;
                break;
            }
            if (rule.replies.empty()) continue;
            BackendReply r = rule.replies.front();
            if (rule.replies.size() > 1) rule.replies.pop_front();
            return r;
        }
    }
    if (fn) return fn(req);
    return {400, "no scripted reply for tag '" + req.tag + "'"};
}

ScriptedBackend& ScriptedBackend::on(std::string tag, std::string pattern, std::vector<BackendReply> replies) {
    std::lock_guard lock(mutex_);
    std::regex re(pattern.empty() ? std::string(".") : pattern);
    rules_.push_back({std::move(tag), std::move(pattern), std::move(re),
                      std::deque<BackendReply>(replies.begin(), replies.end()), nullptr});
    return *this;
}

ScriptedBackend& ScriptedBackend::on(std::string tag, std::string pattern, std::vector<std::string> replies) {
    std::vector<BackendReply> r;
    for (auto& s : replies) r.push_back({200, std::move(s)});
    return on(std::move(tag), std::move(pattern), std::move(r));
}

ScriptedBackend& ScriptedBackend::respond(std::string tag, std::string pattern, Responder fn) {
    std::lock_guard lock(mutex_);
    std::regex re(pattern.empty() ? std::string(".") : pattern);
    rules_.push_back({std::move(tag), std::move(pattern), std::move(re), {}, std::move(fn)});
    return *this;
}

std::vector<ScriptedBackend::Call> ScriptedBackend::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::size_t ScriptedBackend::call_count() const {
    std::lock_guard lock(mutex_);
    return calls_.size();
}

std::size_t ScriptedBackend::call_count(const std::string& tag) const {
    std::lock_guard lock(mutex_);
    return static_cast<std::size_t>(
        std::count_if(calls_.begin(), calls_.end(), [&](const Call& c) { return c.tag == tag; }));
}

std::size_t ScriptedBackend::call_count_prefix(const std::string& prefix) const {
    std::lock_guard lock(mutex_);
    return static_cast<std::size_t>(
        std::count_if(calls_.begin(), calls_.end(), [&](const Call& c) { return c.tag.rfind(prefix, 0) == 0; }));
}

void ScriptedBackend::reset_calls() {
    std::lock_guard lock(mutex_);
    calls_.clear();
}

EmbedReply ScriptedEmbeddingBackend::embed(const std::vector<std::string>& texts) {
    std::shared_ptr<EmbeddingBackend> fb;
    EmbedReply reply;
    std::vector<std::size_t> missing;
    {
        std::lock_guard lock(mutex_);
        ++calls_;
        if (failures_left_ > 0) {
            --failures_left_;
            return {failure_status_, {}, "scripted failure"};
        }
        for (std::size_t i = 0; i < texts.size(); ++i) {
            auto it = table_.find(texts[i]);
            reply.vectors.push_back(it == table_.end() ? std::vector<double>{} : it->second);
            if (it == table_.end()) missing.push_back(i);
        }
        fb = fallback_;
    }
    if (missing.empty()) return reply;
    if (!fb) return {500, {}, "no scripted vector for '" + texts[missing.front()] + "'"};
    std::vector<std::string> rest;
    for (auto i : missing) rest.push_back(texts[i]);
    auto sub = fb->embed(rest);
    if (sub.status != 200) return sub;
    for (std::size_t j = 0; j < missing.size(); ++j) reply.vectors[missing[j]] = std::move(sub.vectors[j]);
    return reply;
}

ScriptedEmbeddingBackend& ScriptedEmbeddingBackend::set(std::string text, std::vector<double> vec) {
    std::lock_guard lock(mutex_);
    table_[std::move(text)] = std::move(vec);
    return *this;
}

ScriptedEmbeddingBackend& ScriptedEmbeddingBackend::fallback(std::shared_ptr<EmbeddingBackend> fb) {
    std::lock_guard lock(mutex_);
    fallback_ = std::move(fb);
    return *this;
}

ScriptedEmbeddingBackend& ScriptedEmbeddingBackend::fail_next(int n, int status) {
    std::lock_guard lock(mutex_);
    failures_left_ = n;
    failure_status_ = status;
    return *this;
}

std::size_t ScriptedEmbeddingBackend::call_count() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

EmbedReply HashingEmbeddingBackend::embed(const std::vector<std::string>& texts) {
    EmbedReply reply;
    for (const auto& t : texts) {
        std::vector<double> v(dims_, 0.0);
        v[0] = 1e-3;  // keeps empty texts away from the zero vector
        for (const auto& w : text::tokenize_words(t)) {
            if (w.size() < 3) continue;
            const auto h = fnv1a64(w);
            v[1 + h % (dims_ - 1)] += (h >> 63) ? -1.0 : 1.0;
        }
        reply.vectors.push_back(std::move(v));
    }
    return reply;
}

}  // namespace litsynth::llm
