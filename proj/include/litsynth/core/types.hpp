#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "litsynth/core/paper_id.hpp"

namespace litsynth {

struct PaperRecord {
    PaperId id;
    std::string title;
    std::string abstract;
    std::string tldr;
    std::optional<std::string> full_text_ref;
    std::vector<PaperId> in_citations;   // papers citing this one
    std::vector<PaperId> out_citations;  // papers this one cites
    std::vector<std::string> repo_urls;
    std::map<std::string, std::string> metadata;  // authors, year, venue, citation_count

    bool operator==(const PaperRecord&) const = default;
};

/// Rejects duplicate or self citation links.
void validate(const PaperRecord& record);

enum class Provenance { FullText, AbstractFallback, TldrFallback };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view text);

inline constexpr std::array<std::string_view, 6> kMandatoryKeynoteFields = {
    "contributions", "methodology", "experiments", "limitations", "critical_reflections", "tldr"};

/// Open-keyed digest of one paper. Full-text keynotes carry every mandatory
/// field; fallback keynotes carry at least `tldr`.
struct Keynote {
    PaperId paper_id;
    std::map<std::string, std::string> sections;
    Provenance provenance = Provenance::FullText;

    const std::string& field(std::string_view name) const;
    bool operator==(const Keynote&) const = default;
};

void validate(const Keynote& keynote);

struct Cluster {
    int cluster_id = 0;
    std::string name;
    std::string summary;
    std::set<PaperId> members;

    bool operator==(const Cluster&) const = default;
};

enum class RelationType { Foundation, Extension, Substitution, Other };

struct RelationEdge {
    PaperId from;
    PaperId to;
    RelationType relation = RelationType::Other;
    std::string label;  // free label, used when relation == Other
    std::string description;

    bool operator==(const RelationEdge&) const = default;
};

std::string relation_name(const RelationEdge& edge);
/// Maps "foundation"/"extension"/"substitution" (case-insensitive) to the enum,
/// anything else to Other with the raw label kept.
RelationEdge make_relation(PaperId from, PaperId to, std::string_view relation, std::string description);

struct ComparisonRow {
    PaperId paper_id;
    std::vector<std::string> cells;

    bool operator==(const ComparisonRow&) const = default;
};

struct ComparisonTable {
    std::vector<std::string> columns;
    std::vector<ComparisonRow> rows;

    bool operator==(const ComparisonTable&) const = default;
};

struct QaItem {
    std::string question;
    std::vector<PaperId> related;
    std::string answer;

    bool operator==(const QaItem&) const = default;
};

struct SourceAttribution {
    std::string claim;
    std::vector<PaperId> sources;

    bool operator==(const SourceAttribution&) const = default;
};

struct ClusterAnalysis {
    int cluster_id = 0;
    std::vector<RelationEdge> relation_graph;
    ComparisonTable comparison_table;
    std::vector<QaItem> qa_items;
    std::vector<SourceAttribution> source_attributions;

    bool operator==(const ClusterAnalysis&) const = default;
};

struct OutlineNode {
    std::string title;
    std::string description;
    std::vector<OutlineNode> children;
    std::set<PaperId> assigned_papers;

    bool is_leaf() const noexcept { return children.empty(); }
    bool operator==(const OutlineNode&) const = default;
};

/// Checks sibling-title uniqueness, non-empty descriptions and the
/// section -> subsection depth cap. Throws InvalidInputError.
void validate_outline(const OutlineNode& root);

enum class Granularity { Subsection, Section, Survey };

std::string_view to_string(Granularity g);
Granularity granularity_from_string(std::string_view text);

enum class CitationStyle { TitleMark, IdMark };

std::string_view to_string(CitationStyle s);
CitationStyle citation_style_from_string(std::string_view text);

struct CitationMark {
    CitationStyle style = CitationStyle::TitleMark;
    std::string key;

    bool operator==(const CitationMark&) const = default;
};

struct DraftUnit {
    std::vector<std::string> node_path;
    std::string text;
    std::vector<CitationMark> citations;
    Granularity granularity = Granularity::Subsection;

    bool operator==(const DraftUnit&) const = default;
};

std::string join_path(const std::vector<std::string>& node_path);

struct CodeReports {
    std::string code_report;
    std::string environment_report;

    bool operator==(const CodeReports&) const = default;
};

struct RevisionEvent {
    std::string stage;
    std::string kind;
    std::string detail;

    bool operator==(const RevisionEvent&) const = default;
};

struct KnowledgeSubstrate {
    std::string topic;
    std::map<PaperId, PaperRecord> papers;
    std::map<PaperId, Keynote> keynotes;
    std::vector<Cluster> clusters;
    std::vector<ClusterAnalysis> analyses;
    std::string inter_cluster;
    std::map<PaperId, CodeReports> code_reports;
    std::optional<OutlineNode> outline;
    std::vector<DraftUnit> drafts;
    std::vector<RevisionEvent> revision_log;

    const PaperRecord* find_paper(const PaperId& id) const;
    const PaperRecord* find_paper(std::string_view canonical) const;

    bool operator==(const KnowledgeSubstrate&) const = default;
};

}  // namespace litsynth
