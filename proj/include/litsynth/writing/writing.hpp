#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "litsynth/core/citation_index.hpp"
#include "litsynth/core/types.hpp"
#include "litsynth/llm/context.hpp"

namespace litsynth::writing {

inline constexpr const char* kStage = "writing";

struct WritingConfig {
    double outline_temperature = 0.5;
    double subsection_temperature = 0.7;
    double section_temperature = 0.3;
    int subsection_least_citations = 3;
    int subsection_least_words = 250;
    int section_least_citations = 3;
    int section_least_words = 150;
    CitationStyle citation_style = CitationStyle::TitleMark;
    int max_citation_retries = 3;
    int max_retries = 3;  // malformed outline or assignment replies
    std::size_t outline_batch_size = 20;
    std::size_t assign_batch_size = 20;
    std::size_t max_output_tokens = 4096;
    std::size_t workers = 4;

    void validate() const;
};

using NodePath = std::vector<std::string>;
using AssignmentMap = std::map<NodePath, std::set<PaperId>>;

/// Sections then subsections in reading order; the root is not included.
std::vector<NodePath> node_paths(const OutlineNode& root);
const OutlineNode* find_node(const OutlineNode& root, const NodePath& path);
OutlineNode* find_node(OutlineNode& root, const NodePath& path);

/// Requirements the outline prompt states: at least one section, a
/// conclusion section and a future-work node. Throws InvalidInputError.
void check_outline_requirements(const OutlineNode& root);

/// Root carries the survey title. Throws OutputError on malformed input.
OutlineNode parse_outline(const nlohmann::json& j, const std::string& topic);
nlohmann::json outline_prompt_json(const OutlineNode& root);

/// Outline from the cluster structure, then refined once per keynote batch
/// (ordered by PaperId). Payloads over budget are shrunk and logged.
OutlineNode draft_outline(const KnowledgeSubstrate& s, const WritingConfig& cfg, StageContext& ctx);

/// Every keynote paper lands on at least one node. Titles in the reply must
/// match outline titles exactly. Papers left unassigned after retries go to
/// the leaf whose description is most similar; leaves below the citation floor
/// are topped up the same way.
AssignmentMap assign_citations(const OutlineNode& outline, const KnowledgeSubstrate& s, const WritingConfig& cfg,
                               StageContext& ctx);

/// Copies the map into `assigned_papers` of each node.
void apply_assignments(OutlineNode& outline, const AssignmentMap& map);

struct CitationVerdict {
    std::vector<PaperId> cited;           // distinct, first appearance order
    std::vector<CitationMark> marks;      // distinct resolvable marks, same order
    std::vector<std::string> violations;  // keys that do not resolve or fall outside the set

    bool ok() const { return violations.empty(); }
};

/// Title marks match normalized full titles only; id marks match canonical ids only.
CitationVerdict verify_citations(const std::string& text, const std::set<PaperId>& assigned, CitationStyle style,
                                 const CitationIndex& index);

/// Papers a section preamble may cite: its own set plus its children's.
std::set<PaperId> section_scope(const OutlineNode& node);

/// Leaf node drafting. Throws DraftingError naming the node once
/// max_citation_retries regenerations were rejected.
DraftUnit draft_subsection(const NodePath& path, const KnowledgeSubstrate& s, const WritingConfig& cfg,
                           StageContext& ctx);

/// Section preamble drafted after its children. Throws PreconditionError when
/// a child draft is missing.
DraftUnit draft_section(const NodePath& path, const std::vector<DraftUnit>& child_drafts, const KnowledgeSubstrate& s,
                        const WritingConfig& cfg, StageContext& ctx);

/// Outline, assignments and every draft. Leaves are drafted in parallel.
void run_writing(KnowledgeSubstrate& s, const WritingConfig& cfg, StageContext& ctx);

/// Paths of drafts citing outside their node's scope, with the offending keys.
std::vector<std::string> locality_violations(const KnowledgeSubstrate& s, CitationStyle style);

struct AssemblyOptions {
    std::string generated_at;  // caller supplies it so output stays reproducible
    std::string config_hash;
    CitationStyle style = CitationStyle::TitleMark;
};

struct SurveyDocument {
    std::string text;
    std::vector<PaperId> bibliography;  // index i is reference [i + 1]
    nlohmann::json citation_map;
    std::size_t dropped_marks = 0;  // marks that resolved to no paper
};

/// Heading per outline node, marks rewritten to [n] by first appearance, and
/// a reference list of exactly the cited papers. Throws AssemblyError naming
/// the first node without a draft.
SurveyDocument assemble_survey(const KnowledgeSubstrate& s, const AssemblyOptions& opts);

/// Writes survey.md and citation_map.json into `dir`.
void write_survey(const SurveyDocument& doc, const std::filesystem::path& dir);

/// Text with marks removed, as counted against word floors.
std::size_t prose_words(const std::string& text);

}  // namespace litsynth::writing
