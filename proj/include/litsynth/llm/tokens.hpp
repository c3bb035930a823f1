#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace litsynth::llm {

inline constexpr std::size_t kCharsPerToken = 4;

/// ceil(code points / 4). An approximation of real tokenizers, but stable.
std::size_t estimate_tokens(std::string_view text);

struct CompressedContext {
    std::string text;           // core followed by the kept prefix of aux
    std::size_t aux_kept = 0;   // bytes of aux retained
    int halvings = 0;
};

/// Keeps `core` intact and halves `aux` (by code points) until the estimate of
/// core+aux fits `budget`. Throws BudgetError when core alone is over budget.
CompressedContext compress_context_parts(std::string_view core, std::string_view aux, std::size_t budget);

std::string compress_context(std::string_view core, std::string_view aux, std::size_t budget);

}  // namespace litsynth::llm
