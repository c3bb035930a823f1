#include "litsynth/llm/structured.hpp"

#include "litsynth/core/text.hpp"

namespace litsynth::llm {

using nlohmann::json;

std::string render_prompt(std::string_view instructions, const json& input) {
    std::string out(instructions);
    out += "\n\n";
    out += kInputBegin;
    out += "\n";
    out += input.dump(2);
    out += "\n";
    out += kInputEnd;
    out += "\n";
    return out;
}

json extract_input(std::string_view prompt) {
    const auto b = prompt.find(kInputBegin);
    if (b == std::string_view::npos) return nullptr;
    const auto start = b + kInputBegin.size();
    const auto e = prompt.find(kInputEnd, start);
    if (e == std::string_view::npos) return nullptr;
    try {
        return json::parse(prompt.substr(start, e - start));
    } catch (const json::exception&) {
        return nullptr;
    }
}

json parse_json_reply(std::string_view reply) {
    const auto body = text::strip_code_fence(reply);
    try {
        return json::parse(body);
    } catch (const json::exception& e) {
        throw OutputError(std::string("reply is not valid JSON: ") + e.what());
    }
}

std::string ask_text(Gateway& gw, const StructuredCall& call, const std::function<void(const std::string&)>& check) {
    return ask_structured<std::string>(gw, call, [&](const std::string& reply) {
        check(reply);
        return reply;
    });
}

namespace detail {

std::string attempt_note(int attempt) {
    return attempt == 0 ? std::string() : "Retry attempt " + std::to_string(attempt + 1) + ".\n\n";
}

void record_rejection(const StructuredCall& call, ErrorMemory& mem, int attempt, const std::string& why) {
    mem.record(why);
    if (call.log) {
        const auto& stage = call.stage.empty() ? call.request.tag : call.stage;
        call.log->record(events::kRetry, stage, "attempt " + std::to_string(attempt + 1) + " rejected: " + why);
    }
}

void give_up(const StructuredCall& call, const std::string& last) {
    const auto& stage = call.stage.empty() ? call.request.tag : call.stage;
    if (call.log) call.log->record(events::kExhaustion, stage, "gave up after " + std::to_string(call.max_retries + 1) + " attempts");
    throw OutputError(stage + ": output rejected after " + std::to_string(call.max_retries + 1) +
                      " attempts; last reason: " + last);
}

}  // namespace detail
}  // namespace litsynth::llm
