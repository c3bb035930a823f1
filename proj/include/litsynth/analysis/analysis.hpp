#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "litsynth/core/citation_index.hpp"
#include "litsynth/core/types.hpp"
#include "litsynth/llm/context.hpp"

namespace litsynth::analysis {

inline constexpr const char* kStage = "analysis";

struct ClusterTheme {
    std::string name;
    std::string summary;

    bool operator==(const ClusterTheme&) const = default;
};

using ClusterProposal = std::vector<ClusterTheme>;

/// Names unique (normalized) and non-empty, summaries non-empty. Throws InvalidInputError.
void validate(const ClusterProposal& proposal);

struct AssignmentVerdict {
    std::set<PaperId> missing;
    std::set<PaperId> hallucinated;

    bool empty() const { return missing.empty() && hallucinated.empty(); }
};

struct AnalysisConfig {
    std::size_t design_batch_size = 20;
    std::size_t assign_batch_size = 20;
    int max_rounds = 3;
    int n_questions = 1;
    int max_retries = 3;
    int citation_retries = 1;  // regenerations for analysis text citing outside its scope
    double structured_temperature = 0.0;
    double synthesis_temperature = 0.3;
    std::size_t min_table_columns = 3;
    std::size_t workers = 4;

    void validate() const;
};

/// Logs one monitor event per fabricated source within one artifact.
class AttributionMonitor {
public:
    AttributionMonitor(EventLog& log, std::string artifact) : log_(log), artifact_(std::move(artifact)) {}

    /// True when `id` is allowed; otherwise logs (once per id) and returns false.
    bool check(const std::string& id, bool allowed, std::string_view what);
    std::size_t reported() const { return reported_.size(); }

private:
    EventLog& log_;
    std::string artifact_;
    std::set<std::string> reported_;
};

/// Folds keynote batches (ordered by PaperId) into the proposal one call per batch.
ClusterProposal design_clusters(const std::vector<Keynote>& keynotes, ClusterProposal prior, const std::string& topic,
                                const AnalysisConfig& cfg, StageContext& ctx);

struct Assignment {
    std::vector<Cluster> clusters;
    AssignmentVerdict verdict;
};

/// Cluster ids follow proposal order starting at 1. Papers may land in
/// several clusters. Omitted papers and unknown ids go to the verdict.
Assignment assign_papers(const ClusterProposal& proposal, const std::vector<Keynote>& keynotes,
                         const AnalysisConfig& cfg, StageContext& ctx);

struct RepairResult {
    std::vector<Cluster> clusters;
    int rounds = 0;                // partitioning calls spent on repairs
    std::vector<PaperId> attached;  // placed by embedding similarity
};

/// Removes members without a keynote, re-offers missing papers for up to
/// max_rounds rounds, then attaches leftovers to the cluster whose summary is
/// most similar to their tldr (ties to the lower cluster id).
RepairResult verify_and_repair(std::vector<Cluster> clusters, const std::vector<Keynote>& keynotes,
                               const AnalysisConfig& cfg, StageContext& ctx);

std::vector<RelationEdge> build_relation_graph(const Cluster& cluster, const std::map<PaperId, Keynote>& keynotes,
                                               const std::map<PaperId, PaperRecord>& papers,
                                               const AnalysisConfig& cfg, StageContext& ctx);

/// Throws PreconditionError for clusters with fewer than two members.
ComparisonTable build_comparison_table(const Cluster& cluster, const std::map<PaperId, Keynote>& keynotes,
                                       const std::map<PaperId, PaperRecord>& papers, const AnalysisConfig& cfg,
                                       StageContext& ctx);

std::vector<QaItem> guided_qa(const Cluster& cluster, const std::map<PaperId, Keynote>& keynotes,
                              const std::map<PaperId, PaperRecord>& papers, int n_questions,
                              const AnalysisConfig& cfg, StageContext& ctx);

std::string inter_cluster_analysis(const std::vector<Cluster>& clusters, const std::vector<ClusterAnalysis>& analyses,
                                   const std::map<PaperId, PaperRecord>& papers, const AnalysisConfig& cfg,
                                   StageContext& ctx);

/// `<key>` marks in `text` that resolve to a paper in `allowed`.
std::vector<PaperId> cited_papers(const std::string& text, const CitationIndex& index, const std::set<PaperId>& allowed);

/// Clusters, per-cluster analyses and the inter-cluster synthesis for the
/// papers that have keynotes. Writes into `s`.
void run_analysis(KnowledgeSubstrate& s, const AnalysisConfig& cfg, StageContext& ctx);

/// One tab-separated file per cluster, named cluster_<id>.tsv. Returns the paths.
std::vector<std::filesystem::path> export_comparison_tables(const KnowledgeSubstrate& s,
                                                            const std::filesystem::path& dir);

}  // namespace litsynth::analysis
