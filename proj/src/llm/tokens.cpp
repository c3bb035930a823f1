#include "litsynth/llm/tokens.hpp"

#include "litsynth/core/error.hpp"
#include "litsynth/core/text.hpp"

namespace litsynth::llm {

std::size_t estimate_tokens(std::string_view text) {
    return (text::utf8_length(text) + kCharsPerToken - 1) / kCharsPerToken;
}

CompressedContext compress_context_parts(std::string_view core, std::string_view aux, std::size_t budget) {
    if (estimate_tokens(core) > budget)
        throw BudgetError("core context needs " + std::to_string(estimate_tokens(core)) + " tokens, budget is " +
                          std::to_string(budget));
    CompressedContext out;
    std::string_view kept = aux;
    auto fits = [&](std::string_view a) {
        return (text::utf8_length(core) + text::utf8_length(a) + kCharsPerToken - 1) / kCharsPerToken <= budget;
    };
    while (!fits(kept)) {
        kept = text::utf8_prefix(kept, text::utf8_length(kept) / 2);
        ++out.halvings;
    }
    out.aux_kept = kept.size();
    out.text.reserve(core.size() + kept.size());
    out.text.append(core).append(kept);
    return out;
}

std::string compress_context(std::string_view core, std::string_view aux, std::size_t budget) {
    return compress_context_parts(core, aux, budget).text;
}

}  // namespace litsynth::llm
