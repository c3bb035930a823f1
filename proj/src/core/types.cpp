#include "litsynth/core/types.hpp"

#include <algorithm>

#include "litsynth/core/error.hpp"
#include "litsynth/core/text.hpp"

namespace litsynth {

namespace {

void check_links(const PaperRecord& r, const std::vector<PaperId>& links, const char* which) {
    std::set<PaperId> seen;
    for (const auto& id : links) {
        if (id == r.id)
            throw InvalidInputError("paper " + r.id.canonical() + " lists itself in " + which);
        if (!seen.insert(id).second)
            throw InvalidInputError("paper " + r.id.canonical() + " has duplicate " + which + " entry " +
                                    id.canonical());
    }
}

void validate_node(const OutlineNode& node, int depth) {
    if (text::trim(node.title).empty()) throw InvalidInputError("outline node with empty title");
    if (text::trim(node.description).empty())
        throw InvalidInputError("outline node '" + node.title + "' has an empty description");
    if (depth >= 2 && !node.children.empty())
        throw InvalidInputError("outline node '" + node.title + "' nests deeper than section -> subsection");
    std::set<std::string> titles;
    for (const auto& child : node.children) {
        if (!titles.insert(text::normalize_title(child.title)).second)
            throw InvalidInputError("duplicate sibling title '" + child.title + "' under '" + node.title + "'");
        validate_node(child, depth + 1);
    }
}

}  // namespace

void validate(const PaperRecord& record) {
    check_links(record, record.in_citations, "in_citations");
    check_links(record, record.out_citations, "out_citations");
}

std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::FullText: return "full_text";
        case Provenance::AbstractFallback: return "abstract_fallback";
        case Provenance::TldrFallback: return "tldr_fallback";
    }
    return "full_text";
}

Provenance provenance_from_string(std::string_view text) {
    if (text == "full_text") return Provenance::FullText;
    if (text == "abstract_fallback") return Provenance::AbstractFallback;
    if (text == "tldr_fallback") return Provenance::TldrFallback;
    throw InvalidInputError("unknown provenance '" + std::string(text) + "'");
}

const std::string& Keynote::field(std::string_view name) const {
    static const std::string empty;
    auto it = sections.find(std::string(name));
    return it == sections.end() ? empty : it->second;
}

void validate(const Keynote& keynote) {
    if (text::trim(keynote.field("tldr")).empty())
        throw InvalidInputError("keynote for " + keynote.paper_id.canonical() + " has an empty tldr");
    if (keynote.provenance != Provenance::FullText) return;
    for (auto name : kMandatoryKeynoteFields)
        if (text::trim(keynote.field(name)).empty())
            throw InvalidInputError("keynote for " + keynote.paper_id.canonical() + " lacks field '" +
                                    std::string(name) + "'");
}

std::string relation_name(const RelationEdge& edge) {
    switch (edge.relation) {
        case RelationType::Foundation: return "foundation";
        case RelationType::Extension: return "extension";
        case RelationType::Substitution: return "substitution";
        case RelationType::Other: return edge.label.empty() ? "other" : edge.label;
    }
    return "other";
}

RelationEdge make_relation(PaperId from, PaperId to, std::string_view relation, std::string description) {
    RelationEdge e{std::move(from), std::move(to), RelationType::Other, {}, std::move(description)};
    const auto lower = text::to_lower(text::trim(relation));
    if (lower == "foundation")
        e.relation = RelationType::Foundation;
    else if (lower == "extension")
        e.relation = RelationType::Extension;
    else if (lower == "substitution")
        e.relation = RelationType::Substitution;
    else
        e.label = text::trim(relation);
    return e;
}

void validate_outline(const OutlineNode& root) { validate_node(root, 0); }

std::string_view to_string(Granularity g) {
    switch (g) {
        case Granularity::Subsection: return "subsection";
        case Granularity::Section: return "section";
        case Granularity::Survey: return "survey";
    }
    return "subsection";
}

Granularity granularity_from_string(std::string_view text) {
    if (text == "subsection") return Granularity::Subsection;
    if (text == "section") return Granularity::Section;
    if (text == "survey") return Granularity::Survey;
    throw InvalidInputError("unknown granularity '" + std::string(text) + "'");
}

std::string_view to_string(CitationStyle s) { return s == CitationStyle::TitleMark ? "title" : "id"; }

CitationStyle citation_style_from_string(std::string_view text) {
    if (text == "title" || text == "title_mark") return CitationStyle::TitleMark;
    if (text == "id" || text == "id_mark") return CitationStyle::IdMark;
    throw InvalidInputError("unknown citation style '" + std::string(text) + "'");
}

std::string join_path(const std::vector<std::string>& node_path) { return text::join(node_path, " / "); }

const PaperRecord* KnowledgeSubstrate::find_paper(const PaperId& id) const {
    auto it = papers.find(id);
    return it == papers.end() ? nullptr : &it->second;
}

const PaperRecord* KnowledgeSubstrate::find_paper(std::string_view canonical) const {
    if (canonical.empty()) return nullptr;
    return find_paper(PaperId(std::string(canonical), IdSource::AcademicGraph));
}

}  // namespace litsynth
