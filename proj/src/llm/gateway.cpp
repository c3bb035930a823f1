#include "litsynth/llm/gateway.hpp"

#include <cmath>
#include <thread>

#include "litsynth/core/error.hpp"
#include "litsynth/llm/tokens.hpp"

namespace litsynth::llm {

using nlohmann::json;

void BackendProfile::validate() const {
    if (context_window == 0) throw InvalidInputError("context_window must be positive");
    if (max_attempts < 1) throw InvalidInputError("max_attempts must be at least 1");
    if (!(backoff_min_s > 0) || !(backoff_min_s < backoff_max_s))
        throw InvalidInputError("backoff bounds must satisfy 0 < min < max");
}

double backoff_delay(const BackendProfile& profile, int attempt) {
    const double d = profile.backoff_min_s * std::pow(2.0, std::max(attempt - 1, 0));
    return std::min(d, profile.backoff_max_s);
}

Sleeper real_sleeper() {
    return [](double seconds) { std::this_thread::sleep_for(std::chrono::duration<double>(seconds)); };
}

void normalize(std::vector<double>& v) {
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (!(n > 0)) throw OutputError("embedding backend returned a zero vector");
    for (double& x : v) x /= n;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw InvalidInputError("cosine of vectors with different dimensions");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return 0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {
std::optional<std::filesystem::path> tier_dir(const GatewayOptions& o, const char* tier) {
    if (!o.cache_dir) return std::nullopt;
    return *o.cache_dir / tier;
}
}  // namespace

Gateway::Gateway(std::shared_ptr<TextBackend> text, std::shared_ptr<EmbeddingBackend> embedder, GatewayOptions options)
    : text_(std::move(text)),
      embedder_(std::move(embedder)),
      options_(std::move(options)),
      api_(tier_dir(options_, "api"), options_.api_ttl),
      task_cache_(tier_dir(options_, "task")) {
    if (!text_) throw InvalidInputError("gateway needs a text backend");
    options_.profile.validate();
    if (!options_.sleeper) options_.sleeper = real_sleeper();
    if (options_.embed_batch_size == 0) throw InvalidInputError("embed_batch_size must be positive");
}

std::string Gateway::complete(const CompletionRequest& req) { return complete(req, options_.profile); }

std::string Gateway::complete(const CompletionRequest& req, const BackendProfile& profile) {
    if (req.prompt.empty()) throw InvalidInputError("completion prompt must be non-empty");
    if (req.max_output_tokens <= 0) throw InvalidInputError("max_output_tokens must be positive");
    if (req.temperature < 0 || req.temperature > 2) throw InvalidInputError("temperature must lie in [0, 2]");
    profile.validate();
    const auto tokens = estimate_tokens(req.prompt);
    if (tokens > profile.context_window)
        throw BudgetError("prompt needs " + std::to_string(tokens) + " tokens, context window is " +
                          std::to_string(profile.context_window));

    const std::string key = completion_key(req, text_->id()).key;
    std::promise<std::string> promise;
    std::shared_future<std::string> waiting;
    {
        std::lock_guard lock(mutex_);
        if (auto it = runtime_.find(key); it != runtime_.end()) {
            ++stats_.cache_hits;
            return it->second;
        }
        if (auto it = in_flight_.find(key); it != in_flight_.end()) {
            ++stats_.cache_hits;
            waiting = it->second;
        } else {
            in_flight_.emplace(key, promise.get_future().share());
        }
    }
    if (waiting.valid()) return waiting.get();

    try {
        std::string result;
        if (auto cached = api_.get(key); cached && cached->is_string()) {
            result = cached->get<std::string>();
            std::lock_guard lock(mutex_);
            ++stats_.cache_hits;
        } else {
            result = call_with_retry(req, profile);
            api_.put(key, result);
        }
        {
            std::lock_guard lock(mutex_);
            runtime_[key] = result;
            in_flight_.erase(key);
        }
        promise.set_value(result);
        return result;
    } catch (...) {
        {
            std::lock_guard lock(mutex_);
            in_flight_.erase(key);
        }
        promise.set_exception(std::current_exception());
        throw;
    }
}

void Gateway::pause(double seconds) {
    {
        std::lock_guard lock(mutex_);
        delays_.push_back(seconds);
        ++stats_.retries;
    }
    options_.sleeper(seconds);
}

std::string Gateway::call_with_retry(const CompletionRequest& req, const BackendProfile& profile) {
    int last_status = 0;
    for (int attempt = 1; attempt <= profile.max_attempts; ++attempt) {
        BackendReply reply;
        {
            std::lock_guard lock(mutex_);
            ++stats_.transport_calls;
        }
        reply = text_->generate(req);
        if (reply.status == 200) return reply.body;
        last_status = reply.status;
        if (!profile.retryable_statuses.count(reply.status)) throw BackendError(reply.status, reply.body);
        if (attempt < profile.max_attempts) pause(backoff_delay(profile, attempt));
    }
    throw ExhaustionError(last_status, profile.max_attempts);
}

std::vector<std::vector<double>> Gateway::embed_with_retry(const std::vector<std::string>& batch) {
    const auto& profile = options_.profile;
    int last_status = 0;
    for (int attempt = 1; attempt <= profile.max_attempts; ++attempt) {
        {
            std::lock_guard lock(mutex_);
            ++stats_.embed_transport_calls;
        }
        auto reply = embedder_->embed(batch);
        if (reply.status == 200) {
            if (reply.vectors.size() != batch.size())
                throw OutputError("embedding backend returned " + std::to_string(reply.vectors.size()) +
                                  " vectors for " + std::to_string(batch.size()) + " texts");
            return std::move(reply.vectors);
        }
        last_status = reply.status;
        if (!profile.retryable_statuses.count(reply.status)) throw BackendError(reply.status, reply.error);
        if (attempt < profile.max_attempts) pause(backoff_delay(profile, attempt));
    }
    throw ExhaustionError(last_status, profile.max_attempts);
}

std::vector<std::vector<double>> Gateway::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw InvalidInputError("embed needs at least one text");
    if (!embedder_) throw PreconditionError("no embedding backend configured");

    std::vector<std::vector<double>> out(texts.size());
    std::vector<std::string> pending;
    std::map<std::string, std::vector<std::size_t>> positions;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const auto key = embedding_key(texts[i], embedder_->id()).key;
        {
            std::lock_guard lock(mutex_);
            if (auto it = runtime_vectors_.find(key); it != runtime_vectors_.end()) {
                out[i] = it->second;
                ++stats_.cache_hits;
                continue;
            }
        }
        if (auto cached = api_.get(key); cached && cached->is_array()) {
            out[i] = cached->get<std::vector<double>>();
            std::lock_guard lock(mutex_);
            runtime_vectors_[key] = out[i];
            ++stats_.cache_hits;
            continue;
        }
        auto& slot = positions[texts[i]];
        if (slot.empty()) pending.push_back(texts[i]);
        slot.push_back(i);
    }

    for (std::size_t start = 0; start < pending.size(); start += options_.embed_batch_size) {
        const auto end = std::min(pending.size(), start + options_.embed_batch_size);
        std::vector<std::string> batch(pending.begin() + static_cast<std::ptrdiff_t>(start),
                                       pending.begin() + static_cast<std::ptrdiff_t>(end));
        auto vectors = embed_with_retry(batch);
        for (std::size_t j = 0; j < batch.size(); ++j) {
            normalize(vectors[j]);
            const auto key = embedding_key(batch[j], embedder_->id()).key;
            api_.put(key, vectors[j]);
            {
                std::lock_guard lock(mutex_);
                runtime_vectors_[key] = vectors[j];
            }
            for (auto i : positions[batch[j]]) out[i] = vectors[j];
        }
    }
    return out;
}

GatewayStats Gateway::stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
}

std::vector<double> Gateway::recorded_delays() const {
    std::lock_guard lock(mutex_);
    return delays_;
}

}  // namespace litsynth::llm
