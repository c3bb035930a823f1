#pragma once

#include <functional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "litsynth/core/error.hpp"
#include "litsynth/core/error_memory.hpp"
#include "litsynth/core/event_log.hpp"
#include "litsynth/llm/gateway.hpp"

namespace litsynth::llm {

inline constexpr std::string_view kInputBegin = "BEGIN_INPUT";
inline constexpr std::string_view kInputEnd = "END_INPUT";

/// Instructions followed by the structured payload between input markers.
std::string render_prompt(std::string_view instructions, const nlohmann::json& input);

/// Payload of a prompt built by render_prompt; null when absent or malformed.
nlohmann::json extract_input(std::string_view prompt);

/// Parses a JSON reply, tolerating surrounding code fences.
nlohmann::json parse_json_reply(std::string_view reply);

struct StructuredCall {
    CompletionRequest request;
    int max_retries = 3;
    std::string stage;          // for the event log, defaults to the tag
    ErrorMemory* memory = nullptr;  // shared memory; a local one is used when null
    EventLog* log = nullptr;
};

/// Calls the backend, hands the reply to `accept`, and on rejection records the
/// reason in error memory and retries with the memory preamble prepended.
/// Backend and budget errors propagate untouched. Throws OutputError once
/// 1 + max_retries attempts were rejected.
template <class T>
T ask_structured(Gateway& gw, const StructuredCall& call, const std::function<T(const std::string&)>& accept);

std::string ask_text(Gateway& gw, const StructuredCall& call,
                     const std::function<void(const std::string&)>& check);

namespace detail {
// Makes every retry a distinct request so a rejected reply is never served from cache.
std::string attempt_note(int attempt);
void record_rejection(const StructuredCall& call, ErrorMemory& mem, int attempt, const std::string& why);
[[noreturn]] void give_up(const StructuredCall& call, const std::string& last);
}  // namespace detail

template <class T>
T ask_structured(Gateway& gw, const StructuredCall& call, const std::function<T(const std::string&)>& accept) {
    ErrorMemory local;
    ErrorMemory& mem = call.memory ? *call.memory : local;
    std::string last;
    for (int attempt = 0; attempt <= call.max_retries; ++attempt) {
        CompletionRequest req = call.request;
        req.prompt = mem.render_preamble() + detail::attempt_note(attempt) + call.request.prompt;
        const std::string reply = gw.complete(req);
        try {
            return accept(reply);
        } catch (const BackendError&) {
            throw;
        } catch (const ExhaustionError&) {
            throw;
        } catch (const BudgetError&) {
            throw;
        } catch (const std::exception& e) {
            last = e.what();
            detail::record_rejection(call, mem, attempt, last);
        }
    }
    detail::give_up(call, last);
}

}  // namespace litsynth::llm
