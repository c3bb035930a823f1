#include "litsynth/pipeline/pipeline.hpp"

#include <algorithm>
#include <ctime>
#include <sstream>

#include "litsynth/analysis/analysis.hpp"
#include "litsynth/core/substrate.hpp"
#include "litsynth/core/text.hpp"
#include "litsynth/llm/context.hpp"
#include "litsynth/llm/http.hpp"
#include "litsynth/llm/scripted.hpp"
#include "litsynth/pipeline/offline.hpp"
#include "litsynth/refinement/refinement.hpp"
#include "litsynth/retrieval/retrieval.hpp"
#include "litsynth/understanding/understanding.hpp"
#include "litsynth/writing/writing.hpp"

namespace litsynth::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kStageNames[] = {"retrieval", "understanding", "analysis",
                                            "code_analysis", "writing", "refinement"};

json stage_list(const std::vector<Stage>& stages) {
    json out = json::array();
    for (auto s : stages) out.push_back(std::string(to_string(s)));
    return out;
}

json stats_json(const llm::GatewayStats& s) {
    return {{"transport_calls", s.transport_calls},
            {"embed_transport_calls", s.embed_transport_calls},
            {"cache_hits", s.cache_hits},
            {"retries", s.retries}};
}

void write_events(const EventLog& log, const fs::path& path) {
    std::string out;
    for (const auto& e : log.events())
        out += json{{"category", e.category}, {"stage", e.stage}, {"message", e.message}}.dump() + "\n";
    write_file_atomic(path, out);
}

llm::Gateway make_gateway(const PipelineConfig& cfg, Backends& b) {
    llm::GatewayOptions opts;
    opts.profile = cfg.backend.profile;
    opts.cache_dir = cfg.paths.cache_dir;
    opts.sleeper = b.sleeper;
    return llm::Gateway(b.text, b.embedder, opts);
}

void run_stage(Stage stage, const PipelineConfig& cfg, Backends& b, KnowledgeSubstrate& s, StageContext& ctx,
               std::vector<refinement::RefineResult>& refine_results) {
    switch (stage) {
        case Stage::Retrieval: {
            if (!b.primary) throw PreconditionError("no paper source configured");
            const auto papers = retrieval::run_retrieval(cfg.topic, cfg.retrieval, *b.primary, b.fallback.get(), ctx);
            s.papers.clear();
            for (const auto& p : papers) s.papers.emplace(p.id, p);
            if (s.papers.empty()) throw RetrievalError("no papers survived retrieval");
            break;
        }
        case Stage::Understanding: {
            auto result = understanding::run_understanding(s.papers, cfg.paths.documents_dir, cfg.understanding, ctx);
            s.keynotes = std::move(result.keynotes);
            break;
        }
        case Stage::Analysis:
            analysis::run_analysis(s, cfg.analysis, ctx);
            break;
        case Stage::CodeAnalysis: {
            if (!b.repos) throw PreconditionError("no repository fetcher configured");
            code_analysis::run_code_analysis(s, *b.repos, cfg.code_analysis, ctx);
            break;
        }
        case Stage::Writing:
            writing::run_writing(s, cfg.writing, ctx);
            break;
        case Stage::Refinement:
            refine_results = refinement::run_refinement(s, cfg.refinement, ctx);
            break;
    }
}

std::string field_text(const std::string& value) {
    const auto parsed = json::parse(value, nullptr, false);
    if (parsed.is_array()) {
        std::string out;
        for (const auto& v : parsed) out += "- " + (v.is_string() ? v.get<std::string>() : v.dump()) + "\n";
        return out;
    }
    return value + "\n";
}

const Cluster& find_cluster(const KnowledgeSubstrate& s, const std::string& id) {
    for (const auto& c : s.clusters)
        if (std::to_string(c.cluster_id) == id) return c;
    throw NotFoundError("no cluster with id '" + id + "'");
}

void render_outline(const OutlineNode& n, int depth, std::string& out) {
    out += std::string(static_cast<std::size_t>(depth) * 2, ' ') + n.title;
    if (!n.assigned_papers.empty()) out += " (" + std::to_string(n.assigned_papers.size()) + " papers)";
    out += "\n";
    for (const auto& c : n.children) render_outline(c, depth + 1, out);
}

}  // namespace

std::string_view to_string(Stage s) { return kStageNames[static_cast<int>(s)]; }

Stage stage_from_string(std::string_view text) {
    for (int i = 0; i < 6; ++i)
        if (kStageNames[i] == text) return static_cast<Stage>(i);
    throw ConfigError("unknown stage '" + std::string(text) + "'");
}

std::vector<Stage> stage_plan(const PipelineConfig& cfg) {
    std::vector<Stage> plan;
    if (cfg.stages.retrieval) plan.push_back(Stage::Retrieval);
    if (cfg.stages.understanding) plan.push_back(Stage::Understanding);
    if (cfg.stages.analysis) plan.push_back(Stage::Analysis);
    if (cfg.code_analysis_enabled) plan.push_back(Stage::CodeAnalysis);
    if (cfg.stages.writing) plan.push_back(Stage::Writing);
    if (cfg.stages.refinement) plan.push_back(Stage::Refinement);
    return plan;
}

void Checkpoint::validate(const std::vector<Stage>& plan) const {
    if (completed_stages.size() > plan.size())
        throw ConfigError("checkpoint lists more stages than the pipeline plans");
    for (std::size_t i = 0; i < completed_stages.size(); ++i)
        if (completed_stages[i] != plan[i])
            throw ConfigError("checkpoint stage '" + std::string(to_string(completed_stages[i])) +
                              "' is out of order; expected '" + std::string(to_string(plan[i])) + "'");
}

void save_checkpoint(const Checkpoint& cp, const fs::path& path) {
    const json j{{"completed_stages", stage_list(cp.completed_stages)},
                 {"substrate_dir", cp.substrate_dir.string()},
                 {"config_hash", cp.config_hash}};
    write_file_atomic(path, j.dump(2) + "\n");
}

std::optional<Checkpoint> load_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) return std::nullopt;
    json j;
    try {
        j = json::parse(read_file(path));
        Checkpoint cp;
        for (const auto& s : j.at("completed_stages")) cp.completed_stages.push_back(stage_from_string(s.get<std::string>()));
        cp.substrate_dir = j.at("substrate_dir").get<std::string>();
        cp.config_hash = j.at("config_hash").get<std::string>();
        return cp;
    } catch (const json::exception& e) {
        throw LoadError(path.string(), e.what());
    }
}

Backends make_backends(const PipelineConfig& cfg) {
    const auto& bc = cfg.backend;
    Backends b;
    std::shared_ptr<llm::HttpTransport> transport = std::make_shared<llm::HttplibTransport>(bc.http_timeout_s);
    auto retrying = std::make_shared<llm::RetryingTransport>(transport, bc.profile, llm::real_sleeper());

    if (bc.text == "offline")
        b.text = std::make_shared<OfflineBackend>();
    else
        b.text = std::make_shared<llm::ChatCompletionBackend>(bc.base_url, bc.model, bc.api_key_env, transport);

    if (bc.embedding == "http")
        b.embedder = std::make_shared<llm::HttpEmbeddingBackend>(bc.embedding_base_url, bc.embedding_model,
                                                                 bc.embedding_api_key_env, transport);
    else
        b.embedder = std::make_shared<llm::HashingEmbeddingBackend>();

    if (bc.paper_source == "fixture")
        b.primary = retrieval::FixturePaperSource::from_file(bc.fixture_path);
    else
        b.primary = std::make_shared<retrieval::AcademicGraphSource>(
            retrying, "https://api.semanticscholar.org/graph/v1", bc.graph_api_key_env);
    if (bc.fallback_source == "preprint-archive" && bc.text != "offline")
        b.fallback = std::make_shared<retrieval::PreprintArchiveSource>(retrying);

    b.repos = std::make_shared<code_analysis::DirectoryRepoFetcher>(cfg.paths.repos_dir);
    return b;
}

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

RunSummary run_pipeline(const PipelineConfig& cfg, Backends& backends, const RunOptions& opts) {
    cfg.validate();
    const auto plan = stage_plan(cfg);
    const auto hash = config_hash(cfg);
    const auto& paths = cfg.paths;

    KnowledgeSubstrate s;
    s.topic = cfg.topic;
    Checkpoint cp{{}, paths.substrate_dir, hash};
    RunSummary summary;

    if (opts.resume) {
        if (auto prior = load_checkpoint(paths.checkpoint_path)) {
            if (prior->config_hash != hash)
                throw ConfigError("refusing to resume: checkpoint config hash " + prior->config_hash +
                                  " does not match the current config hash " + hash);
            prior->validate(plan);
            cp = *prior;
            if (!cp.completed_stages.empty()) s = substrate_load(cp.substrate_dir);
            summary.resumed = cp.completed_stages;
        }
    }
    save_checkpoint(cp, paths.checkpoint_path);

    EventLog log;
    log.set_echo(opts.echo_events);
    auto gateway = make_gateway(cfg, backends);
    StageContext ctx{gateway, log};
    std::vector<refinement::RefineResult> refine_results;

    auto finish_logs = [&] { write_events(log, paths.output_dir / "events.jsonl"); };

    for (std::size_t i = cp.completed_stages.size(); i < plan.size(); ++i) {
        const Stage stage = plan[i];
        log.record(events::kInfo, "pipeline", "starting stage " + std::string(to_string(stage)));
        try {
            run_stage(stage, cfg, backends, s, ctx, refine_results);
            substrate_save(s, cp.substrate_dir);
        } catch (const std::exception& e) {
            log.record(events::kExhaustion, "pipeline", std::string(to_string(stage)) + ": " + e.what());
            finish_logs();
            throw StageFailure(stage, e.what());
        }
        cp.completed_stages.push_back(stage);
        save_checkpoint(cp, paths.checkpoint_path);
        summary.executed.push_back(stage);
        if (opts.stop_after && *opts.stop_after == stage) break;
    }
    summary.finished = cp.completed_stages.size() == plan.size();

    json outputs = json::object();
    if (summary.finished && s.outline && !s.drafts.empty()) {
        const auto style = cfg.stages.refinement ? cfg.refinement.citation_style : cfg.writing.citation_style;
        const auto doc = writing::assemble_survey(
            s, {opts.generated_at.empty() ? utc_timestamp() : opts.generated_at, hash, style});
        writing::write_survey(doc, paths.output_dir);
        summary.survey_path = paths.output_dir / "survey.md";
        outputs["survey"] = summary.survey_path->string();
        outputs["citation_map"] = (paths.output_dir / "citation_map.json").string();
        outputs["references"] = doc.bibliography.size();
        outputs["dropped_marks"] = doc.dropped_marks;
    }
    if (!refine_results.empty()) {
        refinement::write_transcripts(refine_results, paths.output_dir / "transcripts");
        outputs["transcripts"] = (paths.output_dir / "transcripts").string();
    }
    if (!s.analyses.empty() && std::find(summary.executed.begin(), summary.executed.end(), Stage::Analysis) !=
                                   summary.executed.end()) {
        const auto tables = analysis::export_comparison_tables(s, paths.output_dir / "tables");
        outputs["comparison_tables"] = tables.size();
    }

    summary.gateway_stats = gateway.stats();
    json event_counts = json::object();
    for (const auto& e : log.events()) event_counts[e.category] = event_counts.value(e.category, 0) + 1;
    summary.manifest = {{"topic", cfg.topic},
                        {"config_hash", hash},
                        {"backends",
                         {{"text", gateway.text_backend_id()},
                          {"embedding", gateway.embedding_backend_id()},
                          {"paper_source", backends.primary ? backends.primary->name() : "none"},
                          {"fallback_source", backends.fallback ? backends.fallback->name() : "none"}}},
                        {"gateway", stats_json(summary.gateway_stats)},
                        {"planned_stages", stage_list(plan)},
                        {"resumed_stages", stage_list(summary.resumed)},
                        {"executed_stages", stage_list(summary.executed)},
                        {"finished", summary.finished},
                        {"papers", s.papers.size()},
                        {"keynotes", s.keynotes.size()},
                        {"clusters", s.clusters.size()},
                        {"drafts", s.drafts.size()},
                        {"events", event_counts},
                        {"outputs", outputs}};
    write_file_atomic(paths.output_dir / "manifest.json", summary.manifest.dump(2) + "\n");
    finish_logs();
    return summary;
}

evaluation::EvaluationReport evaluate_files(const fs::path& survey, const PipelineConfig& cfg, Backends& backends,
                                            const EvaluateOptions& opts) {
    if (!fs::exists(survey)) throw NotFoundError("survey file '" + survey.string() + "' does not exist");
    const auto sidecar = opts.sidecar.value_or(survey.parent_path() / "citation_map.json");
    if (!fs::exists(sidecar))
        throw NotFoundError("citation sidecar '" + sidecar.string() + "' does not exist next to the survey");

    json citation_map;
    try {
        citation_map = json::parse(read_file(sidecar));
    } catch (const json::parse_error& e) {
        throw LoadError(sidecar.string(), e.what());
    }
    const auto s = substrate_load(cfg.paths.substrate_dir);
    const auto premises = evaluation::build_premises(
        s.papers, s.keynotes, evaluation::premise_source_from_string(cfg.evaluation.premise_source));
    std::set<std::string> universe;
    for (const auto& [id, _] : s.papers) universe.insert(id.canonical());

    EventLog log;
    auto gateway = make_gateway(cfg, backends);
    StageContext ctx{gateway, log};
    evaluation::GatewayNli nli(ctx, cfg.evaluation.nli);
    evaluation::GatewayJudge judge(ctx, cfg.evaluation.judge);
    const evaluation::SurveyInput input{opts.system, s.topic.empty() ? cfg.topic : s.topic, read_file(survey),
                                        citation_map};
    auto report = evaluation::evaluate_survey(input, premises, universe, nli,
                                              cfg.evaluation.judge_content ? &judge : nullptr,
                                              {cfg.evaluation.workers, cfg.evaluation.judge_content});
    const auto out_dir = opts.output_dir.value_or(survey.parent_path() / "evaluation");
    evaluation::write_reports({report}, out_dir);
    write_events(log, out_dir / "events.jsonl");
    return report;
}

std::string inspect(const fs::path& substrate_dir, const std::vector<std::string>& selector) {
    static const std::set<std::string> with_id{"keynote", "cluster", "analysis"};
    static const std::set<std::string> bare{"papers", "clusters", "outline"};
    if (selector.empty()) throw InvalidInputError("inspect needs a selector: papers, clusters, outline, keynote <id>, "
                                                  "cluster <id> or analysis <id>");
    const auto& what = selector[0];
    if (!with_id.count(what) && !bare.count(what)) throw InvalidInputError("unknown inspect selector '" + what + "'");
    if (with_id.count(what) && selector.size() != 2) throw InvalidInputError("'" + what + "' takes exactly one id");
    if (bare.count(what) && selector.size() != 1) throw InvalidInputError("'" + what + "' takes no arguments");

    const auto s = substrate_load(substrate_dir);
    std::ostringstream out;
    if (what == "papers") {
        out << "paper_id\ttitle\n";
        for (const auto& [id, p] : s.papers) out << id.canonical() << "\t" << p.title << "\n";
    } else if (what == "clusters") {
        out << "cluster_id\tname\tsize\n";
        for (const auto& c : s.clusters) out << c.cluster_id << "\t" << c.name << "\t" << c.members.size() << "\n";
    } else if (what == "outline") {
        if (!s.outline) throw NotFoundError("the substrate has no outline yet");
        std::string text;
        render_outline(*s.outline, 0, text);
        out << text;
    } else if (what == "keynote") {
        const auto* p = s.find_paper(selector[1]);
        if (!p) throw NotFoundError("no paper with id '" + selector[1] + "'");
        const auto it = s.keynotes.find(p->id);
        if (it == s.keynotes.end()) throw NotFoundError("paper '" + selector[1] + "' has no keynote");
        out << "# " << p->title << "\n\nprovenance: " << to_string(it->second.provenance) << "\n";
        for (const auto& [field, value] : it->second.sections) out << "\n## " << field << "\n" << field_text(value);
    } else if (what == "cluster") {
        const auto& c = find_cluster(s, selector[1]);
        out << c.cluster_id << "\t" << c.name << "\n" << c.summary << "\n\n";
        for (const auto& id : c.members) {
            const auto* p = s.find_paper(id);
            out << id.canonical() << "\t" << (p ? p->title : "") << "\n";
        }
    } else {
        const auto& c = find_cluster(s, selector[1]);
        const auto it = std::find_if(s.analyses.begin(), s.analyses.end(),
                                     [&](const ClusterAnalysis& a) { return a.cluster_id == c.cluster_id; });
        if (it == s.analyses.end()) throw NotFoundError("cluster '" + selector[1] + "' has no analysis");
        out << to_json(*it).dump(2) << "\n";
    }
    return out.str();
}

std::size_t clear_cache(const fs::path& cache_dir) {
    if (!fs::exists(cache_dir)) return 0;
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(cache_dir))
        if (e.is_regular_file()) ++files;
    fs::remove_all(cache_dir);
    return files;
}

}  // namespace litsynth::pipeline
