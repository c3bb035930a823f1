#pragma once

#include <string>
#include <vector>

#include "litsynth/core/event_log.hpp"
#include "litsynth/core/types.hpp"
#include "litsynth/llm/context.hpp"
#include "litsynth/retrieval/source.hpp"

namespace litsynth::retrieval {

struct RetrievalConfig {
    int max_seed_papers = 15;
    int expansion_depth = 1;
    int per_seed_cap = 20;
    double coarse_similarity_threshold = 0.35;
    int rerank_batch_size = 20;
    int judge_max_retries = 3;
    int query_variants = 2;    // judge-generated keyword queries beyond the topic
    int min_primary_hits = 5;  // below this the fallback source supplements
    double judge_temperature = 0.0;
    std::size_t workers = 4;

    void validate() const;
};

inline constexpr const char* kStage = "retrieval";

/// Topic plus judge-generated keyword variants. Hits are merged in query order,
/// deduplicated by id and cut to max_seed_papers. The fallback source is used
/// when the primary fails or returns fewer than min_primary_hits.
std::vector<PaperRecord> search_seeds(const std::string& topic, const RetrievalConfig& cfg, PaperSource& primary,
                                      PaperSource* fallback, StageContext* ctx);

/// Keeps the candidates the judge marks relevant, order preserved.
std::vector<PaperRecord> judge_filter(const std::vector<PaperRecord>& candidates, const std::string& topic,
                                      const RetrievalConfig& cfg, StageContext& ctx);

/// Neighbours of one paper: citing and cited papers minus itself, ordered by
/// citation count (descending) then id.
std::vector<PaperRecord> ranked_neighbors(const PaperRecord& paper, PaperSource& source, StageContext* ctx);

/// Breadth-first expansion. Each expanded node contributes at most
/// per_seed_cap neighbours. Output: seeds in input order, then each level's
/// new papers sorted by id.
std::vector<PaperRecord> expand_graph(const std::vector<PaperRecord>& seeds, const RetrievalConfig& cfg,
                                      PaperSource& source, StageContext* ctx);

std::vector<PaperRecord> coarse_filter(const std::vector<PaperRecord>& papers, const std::string& topic,
                                       const RetrievalConfig& cfg, StageContext& ctx);

/// Batched relevance judging; logs a relevance note for every kept paper.
std::vector<PaperRecord> llm_rerank_filter(const std::vector<PaperRecord>& papers, const std::string& topic,
                                           const RetrievalConfig& cfg, StageContext& ctx);

/// Whole stage: seeds, judge, expansion, coarse filter and rerank of the
/// expanded papers. Seeds that pass the judge are always kept.
std::vector<PaperRecord> run_retrieval(const std::string& topic, const RetrievalConfig& cfg, PaperSource& primary,
                                       PaperSource* fallback, StageContext& ctx);

}  // namespace litsynth::retrieval
