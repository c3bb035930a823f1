#include "litsynth/core/paper_id.hpp"

#include "litsynth/core/error.hpp"

namespace litsynth {

std::string_view to_string(IdSource source) {
    return source == IdSource::PreprintArchive ? "preprint-archive" : "academic-graph";
}

IdSource id_source_from_string(std::string_view text) {
    if (text == "preprint-archive") return IdSource::PreprintArchive;
    if (text == "academic-graph") return IdSource::AcademicGraph;
    throw InvalidInputError("unknown id source '" + std::string(text) + "'");
}

PaperId::PaperId(std::string canonical, IdSource source) : canonical_(std::move(canonical)), source_(source) {
    if (canonical_.empty()) throw InvalidInputError("paper id must be non-empty");
}

PaperId unify_paper_id(const std::optional<std::string>& preprint_id,
                       const std::optional<std::string>& graph_id) {
    if (preprint_id && !preprint_id->empty()) return PaperId(*preprint_id, IdSource::PreprintArchive);
    if (graph_id && !graph_id->empty()) return PaperId(*graph_id, IdSource::AcademicGraph);
    throw InvalidInputError("unify_paper_id: neither a preprint-archive nor an academic-graph id is present");
}

}  // namespace litsynth
