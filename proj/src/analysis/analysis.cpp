#include "litsynth/analysis/analysis.hpp"

#include <algorithm>
#include <fstream>
#include <tuple>

#include "litsynth/core/error.hpp"
#include "litsynth/core/parallel.hpp"
#include "litsynth/core/substrate.hpp"
#include "litsynth/core/text.hpp"
#include "litsynth/llm/structured.hpp"

namespace litsynth::analysis {

using nlohmann::json;
namespace fs = std::filesystem;

void validate(const ClusterProposal& proposal) {
    std::set<std::string> names;
    for (const auto& t : proposal) {
        const auto name = text::normalize_title(t.name);
        if (name.empty()) throw InvalidInputError("cluster with an empty name");
        if (!names.insert(name).second) throw InvalidInputError("duplicate cluster name '" + t.name + "'");
        if (text::trim(t.summary).empty()) throw InvalidInputError("cluster '" + t.name + "' has an empty summary");
    }
}

void AnalysisConfig::validate() const {
    if (design_batch_size == 0 || assign_batch_size == 0) throw ConfigError("analysis batch sizes must be positive");
    if (max_rounds < 1) throw ConfigError("max_rounds must be at least 1");
    if (n_questions < 1) throw ConfigError("n_questions must be at least 1");
    if (max_retries < 0 || citation_retries < 0) throw ConfigError("retry counts must be non-negative");
    if (min_table_columns < 1) throw ConfigError("min_table_columns must be positive");
}

bool AttributionMonitor::check(const std::string& id, bool allowed, std::string_view what) {
    if (allowed) return true;
    if (reported_.insert(id).second)
        log_.record(events::kMonitor, kStage, artifact_ + ": " + std::string(what) + " '" + id + "' removed");
    return false;
}

namespace {

const char* kDesignCreatePrompt =
    "You are the clustering agent of a literature survey on the topic in the input.\n"
    "Design thematic clusters for the papers whose keynotes are listed. Each cluster needs a short unique\n"
    "name and a summary of the theme it covers. Return strictly JSON in this format:\n"
    "{\"clusters\": [{\"name\": \"...\", \"summary\": \"...\"}]}";

const char* kDesignUpdatePrompt =
    "You are the clustering agent of a literature survey on the topic in the input.\n"
    "`current_clusters` is the cluster design so far. Iteratively update it with the new batch of keynotes:\n"
    "keep clusters that still fit, and merge, split or add clusters where the new papers call for it.\n"
    "Return the complete updated design strictly in JSON format:\n"
    "{\"clusters\": [{\"name\": \"...\", \"summary\": \"...\"}]}";

const char* kAssignPrompt =
    "You are the partitioning agent of a literature survey. Assign every paper in `papers` to the clusters\n"
    "it belongs to. A paper may belong to several clusters. Use only cluster ids from `clusters` and only\n"
    "paper ids from `papers`. Return strictly JSON:\n"
    "{\"assignments\": [{\"paper_id\": \"...\", \"cluster_ids\": [1]}]}";

const char* kRelationPrompt =
    "Model the technical lineage among the papers of one cluster. For pairs of papers with a clear relation,\n"
    "emit a typed edge: foundation (the target builds on the source), extension (the target extends the\n"
    "source), substitution (the target replaces the source), or another short label. Every edge needs a\n"
    "one-sentence description. Use only paper ids from `papers`. Return strictly a JSON list:\n"
    "[{\"from\": \"<paper_id>\", \"to\": \"<paper_id>\", \"relation\": \"foundation\", \"description\": \"...\"}]";

const char* kTablePrompt =
    "Build a comparison table for the papers of one cluster. Choose at least `min_columns` key dimensions\n"
    "that separate these papers (for example evaluation focus, methodology, scope, innovation). Give\n"
    "exactly one row per paper, with one cell per column describing that paper only. Return strictly JSON:\n"
    "{\"columns\": [\"...\"], \"rows\": [{\"paper_id\": \"...\", \"cells\": [\"...\"]}]}";

const char* kQaPrompt =
    "Ask `n_questions` high-value research questions that span several papers of this cluster, and answer\n"
    "each one from the keynotes. Each question must involve at least two papers, listed in `related` by\n"
    "paper id. In answers, cite papers only with <paper_id> or <title> marks and only papers of this\n"
    "cluster. Return strictly a JSON list:\n"
    "[{\"question\": \"...\", \"related\": [\"<paper_id>\"], \"answer\": \"...\"}]";

const char* kInterPrompt =
    "Write a cross-cluster analysis for a literature survey. Compare the clusters in the input: the tensions\n"
    "between their approaches, how the field evolves across them, shared bottlenecks and open challenges.\n"
    "Cite papers only with <paper_id> or <title> marks, and only papers listed in the input. Return the\n"
    "analysis as plain text paragraphs.";

json keynote_digest(const Keynote& k, const std::map<PaperId, PaperRecord>* papers, bool full) {
    json d{{"paper_id", k.paper_id.canonical()}};
    if (papers) {
        if (auto it = papers->find(k.paper_id); it != papers->end()) d["title"] = it->second.title;
    }
    d["tldr"] = k.field("tldr");
    for (const char* f : {"contributions", "methodology", "experiments", "limitations"}) {
        if (!full && std::string_view(f) != "contributions") continue;
        if (!k.field(f).empty()) d[f] = k.field(f);
    }
    if (k.provenance != Provenance::FullText && !k.field("abstract").empty()) d["abstract"] = k.field("abstract");
    return d;
}

template <class T>
T ask(const std::string& prompt, const char* tag, double temperature, int retries, StageContext& ctx,
      const std::function<T(const json&)>& accept, ErrorMemory* memory = nullptr) {
    llm::StructuredCall call{{prompt, temperature, 4096, tag}, retries, kStage, memory, &ctx.log};
    return llm::ask_structured<T>(ctx.gateway, call,
                                  [&](const std::string& reply) { return accept(llm::parse_json_reply(reply)); });
}

const json& unwrap(const json& j, const char* key) {
    if (j.is_object() && j.contains(key)) return j.at(key);
    return j;
}

std::string required_string(const json& item, const char* key) {
    if (!item.is_object() || !item.contains(key) || !item[key].is_string())
        throw OutputError(std::string("every entry needs a string '") + key + "'");
    return item[key].get<std::string>();
}

std::string cell_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

ClusterProposal parse_proposal(const json& j) {
    const auto& list = unwrap(j, "clusters");
    if (!list.is_array() || list.empty()) throw OutputError("proposal must be a non-empty list of clusters");
    ClusterProposal p;
    for (const auto& item : list) p.push_back({text::trim(required_string(item, "name")), required_string(item, "summary")});
    try {
        validate(p);
    } catch (const InvalidInputError& e) {
        throw OutputError(e.what());
    }
    return p;
}

json proposal_json(const ClusterProposal& p) {
    json out = json::array();
    for (const auto& t : p) out.push_back({{"name", t.name}, {"summary", t.summary}});
    return out;
}

std::vector<std::vector<Keynote>> batches_by_id(std::vector<Keynote> keynotes, std::size_t size) {
    std::sort(keynotes.begin(), keynotes.end(), [](const Keynote& a, const Keynote& b) { return a.paper_id < b.paper_id; });
    std::vector<std::vector<Keynote>> out;
    for (std::size_t i = 0; i < keynotes.size(); i += size)
        out.emplace_back(keynotes.begin() + static_cast<std::ptrdiff_t>(i),
                         keynotes.begin() + static_cast<std::ptrdiff_t>(std::min(keynotes.size(), i + size)));
    return out;
}

// One partitioning call per batch; adds members in place.
AssignmentVerdict partition(std::vector<Cluster>& clusters, const std::vector<Keynote>& keynotes,
                            const AnalysisConfig& cfg, StageContext& ctx, int repair_round = 0) {
    json cluster_list = json::array();
    std::set<int> ids;
    for (const auto& c : clusters) {
        cluster_list.push_back({{"cluster_id", c.cluster_id}, {"name", c.name}, {"summary", c.summary}});
        ids.insert(c.cluster_id);
    }
    AttributionMonitor monitor(ctx.log, "cluster assignment");
    AssignmentVerdict verdict;
    for (const auto& batch : batches_by_id(keynotes, cfg.assign_batch_size)) {
        std::map<std::string, PaperId> offered;
        json papers = json::array();
        for (const auto& k : batch) {
            offered.emplace(k.paper_id.canonical(), k.paper_id);
            papers.push_back(keynote_digest(k, nullptr, false));
        }
        json input{{"clusters", cluster_list}, {"papers", papers}};
        if (repair_round > 0) {
            input["repair_round"] = repair_round;
            input["note"] = "These papers were left without a cluster. Place each in at least one cluster.";
        }
        using Placement = std::map<std::string, std::set<int>>;
        auto placement = ask<Placement>(
            llm::render_prompt(kAssignPrompt, input), "analysis.assign",
            cfg.structured_temperature, cfg.max_retries, ctx, [&](const json& j) {
                const auto& list = unwrap(j, "assignments");
                if (!list.is_array()) throw OutputError("assignments must be a JSON list");
                Placement out;
                for (const auto& item : list) {
                    const auto id = required_string(item, "paper_id");
                    if (!item.contains("cluster_ids") || !item["cluster_ids"].is_array())
                        throw OutputError("assignment for " + id + " needs a cluster_ids list");
                    for (const auto& cid : item["cluster_ids"]) {
                        if (!cid.is_number_integer() || !ids.count(cid.get<int>()))
                            throw OutputError("assignment for " + id + " names unknown cluster id " + cid.dump());
                        out[id].insert(cid.get<int>());
                    }
                    out.try_emplace(id);
                }
                return out;
            });
        std::set<std::string> placed;
        for (const auto& [id, cids] : placement) {
            if (!offered.count(id)) {
                monitor.check(id, false, "assignment of unknown paper");
                verdict.hallucinated.insert(resolve_unchecked(id));
                continue;
            }
            for (auto& c : clusters)
                if (cids.count(c.cluster_id)) c.members.insert(offered.at(id));
            if (!cids.empty()) placed.insert(id);
        }
        for (const auto& [id, pid] : offered)
            if (!placed.count(id)) verdict.missing.insert(pid);
    }
    return verdict;
}

std::set<PaperId> missing_papers(const std::vector<Cluster>& clusters, const std::vector<Keynote>& keynotes) {
    std::set<PaperId> out;
    for (const auto& k : keynotes) out.insert(k.paper_id);
    for (const auto& c : clusters)
        for (const auto& m : c.members) out.erase(m);
    return out;
}

json member_digests(const Cluster& cluster, const std::map<PaperId, Keynote>& keynotes,
                    const std::map<PaperId, PaperRecord>& papers) {
    json out = json::array();
    for (const auto& m : cluster.members) {
        auto it = keynotes.find(m);
        if (it != keynotes.end()) {
            out.push_back(keynote_digest(it->second, &papers, true));
        } else {
            json d{{"paper_id", m.canonical()}};
            if (auto p = papers.find(m); p != papers.end()) d["title"] = p->second.title;
            out.push_back(d);
        }
    }
    return out;
}

json cluster_header(const Cluster& c) { return {{"cluster_id", c.cluster_id}, {"name", c.name}, {"summary", c.summary}}; }

struct MarkCheck {
    std::vector<std::string> bad;  // mark keys outside the allowed set
};

MarkCheck check_marks(const std::string& text, const CitationIndex& index, const std::set<PaperId>& allowed,
                      AttributionMonitor& monitor) {
    MarkCheck out;
    for (const auto& mark : text::find_angle_marks(text)) {
        auto id = index.resolve(mark.key);
        if (!monitor.check(mark.key, id && allowed.count(*id), "citation of a paper outside scope"))
            out.bad.push_back(mark.key);
    }
    return out;
}

std::string strip_marks(const std::string& text, const std::vector<std::string>& keys) {
    std::set<std::string> drop(keys.begin(), keys.end());
    std::string out;
    std::size_t pos = 0;
    for (const auto& mark : text::find_angle_marks(text)) {
        if (!drop.count(mark.key)) continue;
        out.append(text, pos, mark.offset - pos);
        while (!out.empty() && out.back() == ' ') out.pop_back();
        pos = mark.offset + mark.length;
    }
    out.append(text, pos, std::string::npos);
    return out;
}

}  // namespace

ClusterProposal design_clusters(const std::vector<Keynote>& keynotes, ClusterProposal prior, const std::string& topic,
                                const AnalysisConfig& cfg, StageContext& ctx) {
    if (keynotes.empty()) throw PreconditionError("no keynotes to cluster");
    if (!prior.empty()) validate(prior);
    for (const auto& batch : batches_by_id(keynotes, cfg.design_batch_size)) {
        json digests = json::array();
        for (const auto& k : batch) digests.push_back(keynote_digest(k, nullptr, false));
        json input{{"topic", topic}, {"keynotes", digests}};
        if (!prior.empty()) input["current_clusters"] = proposal_json(prior);
        prior = ask<ClusterProposal>(llm::render_prompt(prior.empty() ? kDesignCreatePrompt : kDesignUpdatePrompt, input),
                                     "analysis.cluster_design", cfg.structured_temperature, cfg.max_retries, ctx,
                                     parse_proposal);
    }
    return prior;
}

Assignment assign_papers(const ClusterProposal& proposal, const std::vector<Keynote>& keynotes,
                         const AnalysisConfig& cfg, StageContext& ctx) {
    validate(proposal);
    if (proposal.empty()) throw PreconditionError("empty cluster proposal");
    Assignment a;
    for (std::size_t i = 0; i < proposal.size(); ++i)
        a.clusters.push_back({static_cast<int>(i + 1), proposal[i].name, proposal[i].summary, {}});
    a.verdict = partition(a.clusters, keynotes, cfg, ctx);
    return a;
}

RepairResult verify_and_repair(std::vector<Cluster> clusters, const std::vector<Keynote>& keynotes,
                               const AnalysisConfig& cfg, StageContext& ctx) {
    if (cfg.max_rounds < 1) throw PreconditionError("max_rounds must be at least 1");
    if (clusters.empty()) throw PreconditionError("no clusters to repair");
    std::sort(clusters.begin(), clusters.end(), [](const Cluster& a, const Cluster& b) { return a.cluster_id < b.cluster_id; });

    std::map<PaperId, const Keynote*> known;
    for (const auto& k : keynotes) known.emplace(k.paper_id, &k);
    AttributionMonitor monitor(ctx.log, "cluster verification");
    for (auto& c : clusters)
        for (auto it = c.members.begin(); it != c.members.end();)
            it = monitor.check(it->canonical(), known.count(*it) > 0, "member without a keynote") ? std::next(it)
                                                                                                  : c.members.erase(it);

    RepairResult r;
    auto missing = missing_papers(clusters, keynotes);
    while (!missing.empty() && r.rounds < cfg.max_rounds) {
        ++r.rounds;
        std::vector<Keynote> offer;
        for (const auto& id : missing) offer.push_back(*known.at(id));
        ctx.log.record(events::kRetry, kStage,
                       "re-offering " + std::to_string(offer.size()) + " unassigned papers, round " + std::to_string(r.rounds));
        partition(clusters, offer, cfg, ctx, r.rounds);
        missing = missing_papers(clusters, keynotes);
    }
    if (missing.empty()) {
        r.clusters = std::move(clusters);
        return r;
    }

    std::vector<std::string> texts;
    for (const auto& id : missing) {
        const auto& k = *known.at(id);
        texts.push_back(k.field("tldr").empty() ? id.canonical() : k.field("tldr"));
    }
    for (const auto& c : clusters) texts.push_back(c.name + ": " + c.summary);
    std::vector<std::vector<double>> vecs;
    try {
        vecs = ctx.gateway.embed(texts);
    } catch (const std::exception& e) {
        ctx.log.record(events::kFallback, kStage, std::string("embedding for attachment failed: ") + e.what());
    }
    std::size_t i = 0;
    for (const auto& id : missing) {
        std::size_t best = 0;
        if (!vecs.empty()) {
            double best_sim = -2.0;
            for (std::size_t c = 0; c < clusters.size(); ++c) {
                const double sim = llm::cosine(vecs[i], vecs[missing.size() + c]);
                if (sim > best_sim) {
                    best_sim = sim;
                    best = c;
                }
            }
        }
        clusters[best].members.insert(id);
        r.attached.push_back(id);
        ctx.log.record(events::kFallback, kStage,
                       id.canonical() + " attached to cluster " + std::to_string(clusters[best].cluster_id) + " by similarity");
        ++i;
    }
    r.clusters = std::move(clusters);
    return r;
}

std::vector<RelationEdge> build_relation_graph(const Cluster& cluster, const std::map<PaperId, Keynote>& keynotes,
                                               const std::map<PaperId, PaperRecord>& papers,
                                               const AnalysisConfig& cfg, StageContext& ctx) {
    if (cluster.members.empty()) throw PreconditionError("relation graph for an empty cluster");
    if (cluster.members.size() < 2) return {};
    json links = json::array();
    for (const auto& m : cluster.members) {
        auto it = papers.find(m);
        if (it == papers.end()) continue;
        for (const auto& ref : it->second.out_citations)
            if (cluster.members.count(ref)) links.push_back({{"from", ref.canonical()}, {"to", m.canonical()}});
    }
    std::map<std::string, PaperId> members;
    for (const auto& m : cluster.members) members.emplace(m.canonical(), m);
    AttributionMonitor monitor(ctx.log, "cluster " + std::to_string(cluster.cluster_id) + " relation graph");

    const json input{{"cluster", cluster_header(cluster)},
                     {"papers", member_digests(cluster, keynotes, papers)},
                     {"citation_links", links}};
    return ask<std::vector<RelationEdge>>(
        llm::render_prompt(kRelationPrompt, input), "analysis.relation_graph", cfg.structured_temperature,
        cfg.max_retries, ctx, [&](const json& j) {
            const auto& list = unwrap(j, "edges");
            if (!list.is_array()) throw OutputError("relation graph must be a JSON list");
            std::vector<RelationEdge> edges;
            std::set<std::tuple<std::string, std::string, std::string>> seen;
            for (const auto& item : list) {
                const auto from = required_string(item, "from");
                const auto to = required_string(item, "to");
                const auto relation = text::trim(required_string(item, "relation"));
                const auto description = text::trim(required_string(item, "description"));
                if (relation.empty()) throw OutputError("edge " + from + " -> " + to + " has no relation type");
                if (description.empty()) throw OutputError("edge " + from + " -> " + to + " has no description");
                const bool ok_from = monitor.check(from, members.count(from) > 0, "edge endpoint outside the cluster");
                const bool ok_to = monitor.check(to, members.count(to) > 0, "edge endpoint outside the cluster");
                if (!ok_from || !ok_to) continue;
                if (from == to) throw OutputError("edge from " + from + " to itself");
                auto e = make_relation(members.at(from), members.at(to), relation, description);
                if (seen.insert({from, to, relation_name(e)}).second) edges.push_back(std::move(e));
            }
            return edges;
        });
}

ComparisonTable build_comparison_table(const Cluster& cluster, const std::map<PaperId, Keynote>& keynotes,
                                       const std::map<PaperId, PaperRecord>& papers, const AnalysisConfig& cfg,
                                       StageContext& ctx) {
    if (cluster.members.size() < 2)
        throw PreconditionError("comparison table needs at least two members in cluster " + std::to_string(cluster.cluster_id));
    std::map<std::string, PaperId> members;
    for (const auto& m : cluster.members) members.emplace(m.canonical(), m);
    AttributionMonitor monitor(ctx.log, "cluster " + std::to_string(cluster.cluster_id) + " comparison table");

    const json input{{"cluster", cluster_header(cluster)},
                     {"papers", member_digests(cluster, keynotes, papers)},
                     {"min_columns", cfg.min_table_columns}};
    return ask<ComparisonTable>(
        llm::render_prompt(kTablePrompt, input), "analysis.comparison_table", cfg.structured_temperature,
        cfg.max_retries, ctx, [&](const json& j) {
            if (!j.is_object() || !j.contains("columns") || !j["columns"].is_array() || !j.contains("rows") ||
                !j["rows"].is_array())
                throw OutputError("table needs 'columns' and 'rows' lists");
            ComparisonTable t;
            std::set<std::string> names;
            for (const auto& c : j["columns"]) {
                auto name = text::trim(cell_text(c));
                if (name.empty()) throw OutputError("empty column name");
                if (!names.insert(text::normalize_title(name)).second) throw OutputError("duplicate column '" + name + "'");
                t.columns.push_back(std::move(name));
            }
            if (t.columns.size() < cfg.min_table_columns)
                throw OutputError("table needs at least " + std::to_string(cfg.min_table_columns) + " columns");
            std::map<std::string, ComparisonRow> rows;
            for (const auto& r : j["rows"]) {
                const auto id = required_string(r, "paper_id");
                if (!monitor.check(id, members.count(id) > 0, "row for a paper outside the cluster")) continue;
                if (!r.contains("cells") || !r["cells"].is_array() || r["cells"].size() != t.columns.size())
                    throw OutputError("row " + id + " must have one cell per column");
                if (rows.count(id)) throw OutputError("paper " + id + " has two rows");
                ComparisonRow row{members.at(id), {}};
                for (const auto& c : r["cells"]) row.cells.push_back(cell_text(c));
                rows.emplace(id, std::move(row));
            }
            for (const auto& [id, pid] : members) {
                auto it = rows.find(id);
                if (it == rows.end()) throw OutputError("table lacks a row for " + id);
                t.rows.push_back(std::move(it->second));
            }
            return t;
        });
}

std::vector<PaperId> cited_papers(const std::string& text, const CitationIndex& index, const std::set<PaperId>& allowed) {
    std::vector<PaperId> out;
    for (const auto& mark : text::find_angle_marks(text)) {
        auto id = index.resolve(mark.key);
        if (id && allowed.count(*id) && std::find(out.begin(), out.end(), *id) == out.end()) out.push_back(*id);
    }
    return out;
}

std::vector<QaItem> guided_qa(const Cluster& cluster, const std::map<PaperId, Keynote>& keynotes,
                              const std::map<PaperId, PaperRecord>& papers, int n_questions,
                              const AnalysisConfig& cfg, StageContext& ctx) {
    if (n_questions < 1) throw PreconditionError("n_questions must be at least 1");
    if (cluster.members.size() < 2) return {};
    std::map<std::string, PaperId> members;
    for (const auto& m : cluster.members) members.emplace(m.canonical(), m);
    const CitationIndex index(papers);
    const auto artifact = "cluster " + std::to_string(cluster.cluster_id) + " guided Q&A";
    AttributionMonitor monitor(ctx.log, artifact);
    ErrorMemory memory;

    const json input{{"cluster", cluster_header(cluster)},
                     {"papers", member_digests(cluster, keynotes, papers)},
                     {"n_questions", n_questions}};
    const auto prompt = llm::render_prompt(kQaPrompt, input);
    auto parse = [&](const json& j) {
        const auto& list = unwrap(j, "items");
        if (!list.is_array() || static_cast<int>(list.size()) != n_questions)
            throw OutputError("expected a JSON list of exactly " + std::to_string(n_questions) + " items");
        std::vector<QaItem> items;
        for (const auto& item : list) {
            QaItem q{text::trim(required_string(item, "question")), {}, text::trim(required_string(item, "answer"))};
            if (q.question.empty() || q.answer.empty()) throw OutputError("empty question or answer");
            if (!item.contains("related") || !item["related"].is_array())
                throw OutputError("every item needs a 'related' list");
            for (const auto& r : item["related"]) {
                const auto id = cell_text(r);
                if (!monitor.check(id, members.count(id) > 0, "related paper outside the cluster")) continue;
                if (std::find(q.related.begin(), q.related.end(), members.at(id)) == q.related.end())
                    q.related.push_back(members.at(id));
            }
            if (q.related.size() < 2) throw OutputError("every question must relate at least two papers of the cluster");
            items.push_back(std::move(q));
        }
        return items;
    };

    std::vector<QaItem> items;
    for (int regen = 0;; ++regen) {
        items = ask<std::vector<QaItem>>(prompt, "analysis.guided_qa", cfg.synthesis_temperature, cfg.max_retries, ctx,
                                         parse, &memory);
        std::vector<std::string> bad;
        for (const auto& q : items) {
            auto check = check_marks(q.answer, index, cluster.members, monitor);
            bad.insert(bad.end(), check.bad.begin(), check.bad.end());
        }
        if (bad.empty()) return items;
        if (regen >= cfg.citation_retries) break;
        memory.record("answers cited papers outside the cluster: " + text::join(bad, ", "));
        ctx.log.record(events::kRetry, kStage, artifact + ": regenerating answers with out-of-scope citations");
    }
    std::vector<QaItem> kept;
    for (auto& q : items) {
        if (check_marks(q.answer, index, cluster.members, monitor).bad.empty())
            kept.push_back(std::move(q));
        else
            ctx.log.record(events::kSkip, kStage, artifact + ": dropped item citing papers outside the cluster");
    }
    return kept;
}

std::string inter_cluster_analysis(const std::vector<Cluster>& clusters, const std::vector<ClusterAnalysis>& analyses,
                                   const std::map<PaperId, PaperRecord>& papers, const AnalysisConfig& cfg,
                                   StageContext& ctx) {
    if (clusters.size() < 2) throw PreconditionError("inter-cluster analysis needs at least two clusters");
    json groups = json::array();
    for (const auto& c : clusters) {
        json g = cluster_header(c);
        g["papers"] = json::array();
        for (const auto& m : c.members) {
            json p{{"paper_id", m.canonical()}};
            if (auto it = papers.find(m); it != papers.end()) p["title"] = it->second.title;
            g["papers"].push_back(p);
        }
        for (const auto& a : analyses) {
            if (a.cluster_id != c.cluster_id) continue;
            g["relations"] = json::array();
            for (const auto& e : a.relation_graph)
                g["relations"].push_back(e.from.canonical() + " -" + relation_name(e) + "-> " + e.to.canonical() + ": " +
                                         e.description);
            g["qa"] = json::array();
            for (const auto& q : a.qa_items) g["qa"].push_back({{"question", q.question}, {"answer", q.answer}});
            if (!a.comparison_table.columns.empty()) g["table_columns"] = a.comparison_table.columns;
        }
        groups.push_back(std::move(g));
    }
    std::set<PaperId> in_substrate;
    for (const auto& [id, p] : papers) in_substrate.insert(id);
    const CitationIndex index(papers);
    AttributionMonitor monitor(ctx.log, "inter-cluster analysis");
    ErrorMemory memory;
    const auto prompt = llm::render_prompt(kInterPrompt, {{"clusters", groups}});

    std::string text;
    for (int regen = 0;; ++regen) {
        llm::StructuredCall call{{prompt, cfg.synthesis_temperature, 4096, "analysis.inter_cluster"},
                                 cfg.max_retries, kStage, &memory, &ctx.log};
        text = llm::ask_text(ctx.gateway, call, [](const std::string& t) {
            if (text::trim(t).empty()) throw OutputError("empty analysis");
        });
        auto check = check_marks(text, index, in_substrate, monitor);
        if (check.bad.empty()) return text::trim(text);
        if (regen >= cfg.citation_retries) return text::trim(strip_marks(text, check.bad));
        memory.record("the analysis cited papers that are not in the input: " + text::join(check.bad, ", "));
        ctx.log.record(events::kRetry, kStage, "inter-cluster analysis: regenerating after unknown citations");
    }
}

void run_analysis(KnowledgeSubstrate& s, const AnalysisConfig& cfg, StageContext& ctx) {
    cfg.validate();
    std::vector<Keynote> keynotes;
    for (const auto& [id, k] : s.keynotes) keynotes.push_back(k);
    auto proposal = design_clusters(keynotes, {}, s.topic, cfg, ctx);
    auto assignment = assign_papers(proposal, keynotes, cfg, ctx);
    auto repaired = verify_and_repair(std::move(assignment.clusters), keynotes, cfg, ctx);

    s.clusters.clear();
    for (auto& c : repaired.clusters) {
        if (c.members.empty())
            ctx.log.record(events::kInfo, kStage, "cluster '" + c.name + "' received no papers and was dropped");
        else
            s.clusters.push_back(std::move(c));
    }

    s.analyses = parallel_map(s.clusters, cfg.workers, [&](const Cluster& c) {
        ClusterAnalysis a;
        a.cluster_id = c.cluster_id;
        a.relation_graph = build_relation_graph(c, s.keynotes, s.papers, cfg, ctx);
        if (c.members.size() >= 2) {
            a.comparison_table = build_comparison_table(c, s.keynotes, s.papers, cfg, ctx);
            a.qa_items = guided_qa(c, s.keynotes, s.papers, cfg.n_questions, cfg, ctx);
        }
        const CitationIndex index(s.papers);
        for (const auto& q : a.qa_items) {
            auto sources = cited_papers(q.answer, index, c.members);
            for (const auto& r : q.related)
                if (std::find(sources.begin(), sources.end(), r) == sources.end()) sources.push_back(r);
            a.source_attributions.push_back({q.answer, std::move(sources)});
        }
        for (const auto& e : a.relation_graph) a.source_attributions.push_back({e.description, {e.from, e.to}});
        return a;
    });

    if (s.clusters.size() >= 2) {
        s.inter_cluster = inter_cluster_analysis(s.clusters, s.analyses, s.papers, cfg, ctx);
    } else {
        s.inter_cluster.clear();
        ctx.log.record(events::kInfo, kStage, "single cluster; inter-cluster analysis skipped");
    }
}

std::vector<fs::path> export_comparison_tables(const KnowledgeSubstrate& s, const fs::path& dir) {
    auto clean = [](std::string v) {
        std::replace_if(v.begin(), v.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; }, ' ');
        return v;
    };
    std::vector<fs::path> out;
    for (const auto& a : s.analyses) {
        if (a.comparison_table.columns.empty()) continue;
        std::string body = "paper_id\ttitle";
        for (const auto& c : a.comparison_table.columns) body += "\t" + clean(c);
        body += "\n";
        for (const auto& r : a.comparison_table.rows) {
            const auto* p = s.find_paper(r.paper_id);
            body += r.paper_id.canonical() + "\t" + clean(p ? p->title : "");
            for (const auto& cell : r.cells) body += "\t" + clean(cell);
            body += "\n";
        }
        auto path = dir / ("cluster_" + std::to_string(a.cluster_id) + ".tsv");
        write_file_atomic(path, body);
        out.push_back(std::move(path));
    }
    return out;
}

}  // namespace litsynth::analysis
