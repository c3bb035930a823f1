#include "litsynth/core/citation_index.hpp"

#include "litsynth/core/text.hpp"

namespace litsynth {

CitationIndex::CitationIndex(const std::map<PaperId, PaperRecord>& papers) {
    for (const auto& [id, p] : papers) {
        ids_.emplace(id.canonical(), id);
        const auto title = text::normalize_title(p.title);
        if (title.empty()) continue;
        titles_.emplace(title, id);
        if (auto colon = title.find(':'); colon != std::string::npos) {
            auto head = text::trim(std::string_view(title).substr(0, colon));
            if (!head.empty()) heads_[head].push_back(id);
        }
    }
}

std::optional<PaperId> CitationIndex::resolve(std::string_view key) const {
    const auto k = text::trim(key);
    if (auto it = ids_.find(k); it != ids_.end()) return it->second;
    if (auto t = resolve_title(k)) return t;
    auto it = heads_.find(text::normalize_title(k));
    if (it != heads_.end() && it->second.size() == 1) return it->second.front();
    return std::nullopt;
}

std::optional<PaperId> CitationIndex::resolve_title(std::string_view title) const {
    auto it = titles_.find(text::normalize_title(title));
    if (it == titles_.end()) return std::nullopt;
    return it->second;
}

}  // namespace litsynth
