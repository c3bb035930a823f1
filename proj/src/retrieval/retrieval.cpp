#include "litsynth/retrieval/retrieval.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "litsynth/core/error.hpp"
#include "litsynth/core/parallel.hpp"
#include "litsynth/core/text.hpp"
#include "litsynth/llm/structured.hpp"

namespace litsynth::retrieval {

using nlohmann::json;

void RetrievalConfig::validate() const {
    if (max_seed_papers <= 0 || per_seed_cap <= 0 || rerank_batch_size <= 0)
        throw ConfigError("retrieval caps must be positive");
    if (expansion_depth < 0) throw ConfigError("expansion_depth must be non-negative");
    if (coarse_similarity_threshold < -1 || coarse_similarity_threshold > 1)
        throw ConfigError("coarse_similarity_threshold must lie in [-1, 1]");
    if (judge_max_retries < 0 || query_variants < 0 || min_primary_hits < 0)
        throw ConfigError("retrieval counts must be non-negative");
}

namespace {

constexpr std::size_t kAbstractChars = 1500;

long long citation_count(const PaperRecord& r) {
    auto it = r.metadata.find("citation_count");
    if (it == r.metadata.end()) return 0;
    try {
        return std::stoll(it->second);
    } catch (const std::exception&) {
        return 0;
    }
}

const char* kKeywordPrompt =
    "You help search an academic paper index for a literature survey.\n"
    "Propose alternative search queries for the topic in the input: synonyms, common sub-areas and the\n"
    "keywords authors in this field use in titles. Return strictly a JSON list of query strings, at most\n"
    "`count` of them, without commentary.";

const char* kJudgePrompt =
    "You are screening candidate papers for a literature survey on the topic in the input.\n"
    "Decide for every candidate whether it is topically aligned with the survey topic.\n"
    "Return strictly a JSON list with exactly one object per candidate:\n"
    "[{\"paper_id\": \"<id from the input>\", \"relevant\": true or false, \"note\": \"one sentence reason\"}]\n"
    "Include every candidate exactly once and no other ids.";

struct Verdict {
    bool relevant = false;
    std::string note;
};

std::map<std::string, Verdict> parse_verdicts(const std::string& reply, const std::vector<PaperRecord>& batch) {
    const auto j = llm::parse_json_reply(reply);
    if (!j.is_array()) throw OutputError("verdict must be a JSON list");
    std::set<std::string> expected;
    for (const auto& p : batch) expected.insert(p.id.canonical());
    std::map<std::string, Verdict> out;
    for (const auto& item : j) {
        if (!item.is_object() || !item.contains("paper_id") || !item["paper_id"].is_string() ||
            !item.contains("relevant") || !item["relevant"].is_boolean())
            throw OutputError("every verdict needs a string paper_id and a boolean relevant");
        const auto id = item["paper_id"].get<std::string>();
        if (!expected.count(id)) throw OutputError("verdict names unknown paper_id " + id);
        if (out.count(id)) throw OutputError("verdict lists paper_id " + id + " twice");
        out[id] = {item["relevant"].get<bool>(), item.contains("note") && item["note"].is_string() ? item["note"].get<std::string>() : ""};
    }
    for (const auto& id : expected)
        if (!out.count(id)) throw OutputError("verdict misses paper_id " + id);
    return out;
}

std::vector<PaperRecord> judged(const std::vector<PaperRecord>& papers, const std::string& topic,
                                const RetrievalConfig& cfg, StageContext& ctx, const char* tag, bool log_notes) {
    std::vector<PaperRecord> out;
    const auto size = static_cast<std::size_t>(cfg.rerank_batch_size);
    for (std::size_t start = 0; start < papers.size(); start += size) {
        std::vector<PaperRecord> batch(papers.begin() + static_cast<std::ptrdiff_t>(start),
                                       papers.begin() + static_cast<std::ptrdiff_t>(std::min(papers.size(), start + size)));
        json candidates = json::array();
        for (const auto& p : batch)
            candidates.push_back({{"paper_id", p.id.canonical()},
                                  {"title", p.title},
                                  {"abstract", std::string(text::utf8_prefix(p.abstract, kAbstractChars))}});
        llm::StructuredCall call{{llm::render_prompt(kJudgePrompt, {{"topic", topic}, {"candidates", candidates}}),
                                  cfg.judge_temperature, 4096, tag},
                                 cfg.judge_max_retries, kStage, nullptr, &ctx.log};
        const auto verdicts = llm::ask_structured<std::map<std::string, Verdict>>(
            ctx.gateway, call, [&](const std::string& r) { return parse_verdicts(r, batch); });
        for (const auto& p : batch) {
            const auto& v = verdicts.at(p.id.canonical());
            if (!v.relevant) continue;
            if (log_notes) ctx.log.record(events::kRelevance, kStage, p.id.canonical() + ": " + v.note);
            out.push_back(p);
        }
    }
    return out;
}

std::vector<std::string> keyword_variants(const std::string& topic, const RetrievalConfig& cfg, StageContext& ctx) {
    if (cfg.query_variants <= 0) return {};
    llm::StructuredCall call{{llm::render_prompt(kKeywordPrompt, {{"topic", topic}, {"count", cfg.query_variants}}),
                              cfg.judge_temperature, 512, "retrieval.keywords"},
                             cfg.judge_max_retries, kStage, nullptr, &ctx.log};
    try {
        return llm::ask_structured<std::vector<std::string>>(ctx.gateway, call, [&](const std::string& r) {
            const auto j = llm::parse_json_reply(r);
            if (!j.is_array()) throw OutputError("keyword reply must be a JSON list of strings");
            std::vector<std::string> out;
            for (const auto& q : j) {
                if (!q.is_string()) throw OutputError("keyword reply must contain only strings");
                auto s = text::trim(q.get<std::string>());
                if (s.empty() || text::normalize_title(s) == text::normalize_title(topic)) continue;
                if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
                if (static_cast<int>(out.size()) == cfg.query_variants) break;
            }
            return out;
        });
    } catch (const OutputError& e) {
        ctx.log.record(events::kFallback, kStage, std::string("keyword expansion skipped: ") + e.what());
        return {};
    }
}

}  // namespace

std::vector<PaperRecord> search_seeds(const std::string& topic, const RetrievalConfig& cfg, PaperSource& primary,
                                      PaperSource* fallback, StageContext* ctx) {
    if (text::trim(topic).empty()) throw InvalidInputError("topic must be non-empty");
    cfg.validate();
    std::vector<std::string> queries{topic};
    if (ctx)
        for (auto& q : keyword_variants(topic, cfg, *ctx)) queries.push_back(std::move(q));

    std::vector<PaperRecord> hits;
    std::set<PaperId> seen;
    auto collect = [&](std::vector<PaperRecord> found) {
        for (auto& r : found)
            if (seen.insert(r.id).second) hits.push_back(std::move(r));
    };
    auto note = [&](std::string_view cat, std::string msg) {
        if (ctx) ctx->log.record(cat, kStage, std::move(msg));
    };

    std::string primary_error;
    for (const auto& q : queries) {
        try {
            collect(primary.search(q, cfg.max_seed_papers));
        } catch (const RetrievalError& e) {
            primary_error = e.what();
            break;
        }
    }
    const bool short_of_hits = static_cast<int>(hits.size()) < cfg.min_primary_hits;
    if (fallback && (!primary_error.empty() || short_of_hits)) {
        note(events::kFallback, primary_error.empty()
                                    ? primary.name() + " returned " + std::to_string(hits.size()) +
                                          " hits; supplementing from " + fallback->name()
                                    : primary.name() + " failed (" + primary_error + "); using " + fallback->name());
        for (const auto& q : queries) {
            try {
                collect(fallback->search(q, cfg.max_seed_papers));
            } catch (const RetrievalError& e) {
                note(events::kFallback, fallback->name() + " failed: " + e.what());
                break;
            }
        }
    }
    if (hits.empty() && !primary_error.empty())
        throw RetrievalError("seed search failed: " + primary_error + (fallback ? " (fallback found nothing)" : ""));
    if (static_cast<int>(hits.size()) > cfg.max_seed_papers) hits.erase(hits.begin() + cfg.max_seed_papers, hits.end());
    return hits;
}

std::vector<PaperRecord> judge_filter(const std::vector<PaperRecord>& candidates, const std::string& topic,
                                      const RetrievalConfig& cfg, StageContext& ctx) {
    return judged(candidates, topic, cfg, ctx, "retrieval.judge", false);
}

std::vector<PaperRecord> llm_rerank_filter(const std::vector<PaperRecord>& papers, const std::string& topic,
                                           const RetrievalConfig& cfg, StageContext& ctx) {
    return judged(papers, topic, cfg, ctx, "retrieval.rerank", true);
}

std::vector<PaperRecord> ranked_neighbors(const PaperRecord& paper, PaperSource& source, StageContext* ctx) {
    constexpr int kEdgeLimit = 1000;
    std::map<PaperId, PaperRecord> found;
    auto skip = [&](std::string msg) {
        if (ctx) ctx->log.record(events::kSkip, kStage, std::move(msg));
    };
    try {
        for (auto& r : source.citations(paper.id, kEdgeLimit)) found.emplace(r.id, std::move(r));
        for (auto& r : source.references(paper.id, kEdgeLimit)) found.emplace(r.id, std::move(r));
    } catch (const RetrievalError& e) {
        skip("neighbours of " + paper.id.canonical() + " unavailable: " + e.what());
    }
    std::set<PaperId> listed(paper.in_citations.begin(), paper.in_citations.end());
    listed.insert(paper.out_citations.begin(), paper.out_citations.end());
    for (const auto& id : listed) {
        if (found.count(id) || id == paper.id) continue;
        std::optional<PaperRecord> rec;
        try {
            rec = source.lookup(id);
        } catch (const RetrievalError&) {
        }
        if (rec)
            found.emplace(id, std::move(*rec));
        else
            skip("unreachable neighbour " + id.canonical() + " of " + paper.id.canonical() + " skipped");
    }
    found.erase(paper.id);
    std::vector<PaperRecord> out;
    for (auto& [id, r] : found) out.push_back(std::move(r));
    std::stable_sort(out.begin(), out.end(),
                     [](const PaperRecord& a, const PaperRecord& b) { return citation_count(a) > citation_count(b); });
    return out;
}

std::vector<PaperRecord> expand_graph(const std::vector<PaperRecord>& seeds, const RetrievalConfig& cfg,
                                      PaperSource& source, StageContext* ctx) {
    cfg.validate();
    std::vector<PaperRecord> out;
    std::set<PaperId> seen;
    for (const auto& s : seeds)
        if (seen.insert(s.id).second) out.push_back(s);
    std::vector<PaperRecord> frontier = out;
    for (int level = 1; level <= cfg.expansion_depth && !frontier.empty(); ++level) {
        auto lists = parallel_map(frontier, cfg.workers,
                                  [&](const PaperRecord& p) { return ranked_neighbors(p, source, ctx); });
        std::map<PaperId, PaperRecord> fresh;
        for (auto& list : lists) {
            const auto keep = std::min(list.size(), static_cast<std::size_t>(cfg.per_seed_cap));
            for (std::size_t i = 0; i < keep; ++i)
                if (!seen.count(list[i].id)) fresh.emplace(list[i].id, std::move(list[i]));
        }
        frontier.clear();
        for (auto& [id, r] : fresh) {
            seen.insert(id);
            out.push_back(r);
            frontier.push_back(std::move(r));
        }
        if (ctx)
            ctx->log.record(events::kInfo, kStage,
                            "expansion level " + std::to_string(level) + " added " + std::to_string(frontier.size()) + " papers");
    }
    return out;
}

std::vector<PaperRecord> coarse_filter(const std::vector<PaperRecord>& papers, const std::string& topic,
                                       const RetrievalConfig& cfg, StageContext& ctx) {
    if (papers.empty()) return {};
    std::vector<std::string> texts{topic};
    for (const auto& p : papers) texts.push_back(p.title + "\n" + p.abstract);
    std::vector<std::vector<double>> vectors;
    try {
        vectors = ctx.gateway.embed(texts);
    } catch (const RetrievalError&) {
        throw;
    } catch (const Error& e) {
        throw RetrievalError(std::string("coarse filter embedding failed: ") + e.what());
    }
    std::vector<PaperRecord> out;
    for (std::size_t i = 0; i < papers.size(); ++i)
        if (llm::cosine(vectors[0], vectors[i + 1]) >= cfg.coarse_similarity_threshold) out.push_back(papers[i]);
    return out;
}

std::vector<PaperRecord> run_retrieval(const std::string& topic, const RetrievalConfig& cfg, PaperSource& primary,
                                       PaperSource* fallback, StageContext& ctx) {
    auto seeds = search_seeds(topic, cfg, primary, fallback, &ctx);
    auto kept = judge_filter(seeds, topic, cfg, ctx);
    if (kept.empty()) throw RetrievalError("no seed paper survived the relevance judge");
    auto expanded = expand_graph(kept, cfg, primary, &ctx);
    std::vector<PaperRecord> extra(expanded.begin() + static_cast<std::ptrdiff_t>(kept.size()), expanded.end());
    auto coarse = coarse_filter(extra, topic, cfg, ctx);
    auto fine = llm_rerank_filter(coarse, topic, cfg, ctx);
    ctx.log.record(events::kInfo, kStage,
                   std::to_string(seeds.size()) + " seeds, " + std::to_string(kept.size()) + " kept, " +
                       std::to_string(extra.size()) + " expanded, " + std::to_string(coarse.size()) + " after coarse, " +
                       std::to_string(fine.size()) + " after rerank");
    kept.insert(kept.end(), fine.begin(), fine.end());
    return kept;
}

}  // namespace litsynth::retrieval
