#pragma once

#include <compare>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace litsynth {

enum class IdSource { PreprintArchive, AcademicGraph };

std::string_view to_string(IdSource source);
IdSource id_source_from_string(std::string_view text);

/// Unified paper identifier. The preprint-archive id wins whenever the paper
/// has one; otherwise the academic-graph id is canonical. Identity is the
/// canonical string; the source tag is carried along for provenance.
class PaperId {
public:
    PaperId(std::string canonical, IdSource source);

    const std::string& canonical() const noexcept { return canonical_; }
    IdSource source() const noexcept { return source_; }

    friend bool operator==(const PaperId& a, const PaperId& b) { return a.canonical_ == b.canonical_; }
    friend std::strong_ordering operator<=>(const PaperId& a, const PaperId& b) {
        return a.canonical_ <=> b.canonical_;
    }

private:
    std::string canonical_;
    IdSource source_;
};

/// Throws InvalidInputError when both ids are absent (empty strings count as absent).
PaperId unify_paper_id(const std::optional<std::string>& preprint_id,
                       const std::optional<std::string>& graph_id);

}  // namespace litsynth

template <>
struct std::hash<litsynth::PaperId> {
    std::size_t operator()(const litsynth::PaperId& id) const noexcept {
        return std::hash<std::string>{}(id.canonical());
    }
};
