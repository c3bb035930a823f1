#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "litsynth/core/types.hpp"

namespace litsynth {

/// Resolves in-text mark keys to papers. A key matches a canonical id, a
/// normalized full title, or the normalized head of a title before ':'
/// when that head is unique.
class CitationIndex {
public:
    CitationIndex() = default;
    explicit CitationIndex(const std::map<PaperId, PaperRecord>& papers);

    std::optional<PaperId> resolve(std::string_view key) const;
    /// Title-only lookup, used for strict title-mark styles.
    std::optional<PaperId> resolve_title(std::string_view title) const;

private:
    std::map<std::string, PaperId> ids_;
    std::map<std::string, PaperId> titles_;
    std::map<std::string, std::vector<PaperId>> heads_;
};

}  // namespace litsynth
