#include "litsynth/pipeline/config.hpp"

#include <fstream>

#include "litsynth/core/error.hpp"
#include "litsynth/core/hashing.hpp"
#include "litsynth/core/substrate.hpp"

namespace litsynth {

void to_json(nlohmann::json& j, CitationStyle s) { j = std::string(to_string(s)); }
void from_json(const nlohmann::json& j, CitationStyle& s) { s = citation_style_from_string(j.get<std::string>()); }
void to_json(nlohmann::json& j, Granularity g) { j = std::string(to_string(g)); }
void from_json(const nlohmann::json& j, Granularity& g) { g = granularity_from_string(j.get<std::string>()); }

namespace llm {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BackendProfile, context_window, retryable_statuses, max_attempts,
                                                backoff_min_s, backoff_max_s)
}

namespace retrieval {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RetrievalConfig, max_seed_papers, expansion_depth, per_seed_cap,
                                                coarse_similarity_threshold, rerank_batch_size, judge_max_retries,
                                                query_variants, min_primary_hits, judge_temperature, workers)
}

namespace understanding {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(UnderstandingConfig, temperature, max_retries, max_output_tokens,
                                                chunk_budget_tokens, workers)
}

namespace analysis {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AnalysisConfig, design_batch_size, assign_batch_size, max_rounds,
                                                n_questions, max_retries, citation_retries, structured_temperature,
                                                synthesis_temperature, min_table_columns, workers)
}

namespace code_analysis {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CodeAnalysisConfig, enabled, max_rounds, min_reads, revise_every,
                                                batch_size, planner_temperature, reviewer_temperature,
                                                reviser_temperature, creator_temperature, memory_threshold_tokens,
                                                max_retries, max_file_chars, workers)
}

namespace writing {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(WritingConfig, outline_temperature, subsection_temperature,
                                                section_temperature, subsection_least_citations,
                                                subsection_least_words, section_least_citations, section_least_words,
                                                citation_style, max_citation_retries, max_retries, outline_batch_size,
                                                assign_batch_size, max_output_tokens, workers)
}

namespace refinement {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LevelConfig, enabled, max_rounds, planner_temperature,
                                                reviewer_temperature, reviser_temperature)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RefinementConfig, section, subsection, survey, order, use_planner,
                                                max_retries, max_plan_steps, revision_attempts,
                                                memory_threshold_tokens, evidence_budget_tokens, max_output_tokens,
                                                include_code_reports, citation_style, workers)
}

namespace evaluation {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NliConfig, temperature, max_retries, max_output_tokens)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(JudgeConfig, temperature, explanations, max_retries, max_output_tokens)
}

namespace pipeline {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StageFlags, retrieval, understanding, analysis, writing, refinement)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BackendConfig, text, base_url, model, api_key_env, embedding,
                                                embedding_base_url, embedding_model, embedding_api_key_env,
                                                paper_source, fallback_source, fixture_path, graph_api_key_env,
                                                http_timeout_s, profile)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PathsConfig, cache_dir, substrate_dir, checkpoint_path, output_dir,
                                                documents_dir, repos_dir)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvaluationSettings, premise_source, nli, judge, workers, judge_content)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PipelineConfig, topic, stages, code_analysis_enabled, retrieval,
                                                understanding, analysis, code_analysis, writing, refinement,
                                                evaluation, backend, paths)

using nlohmann::json;

namespace {

void reject_unknown(const json& given, const json& known, const std::string& where) {
    if (!given.is_object() || !known.is_object()) return;
    for (const auto& [key, value] : given.items()) {
        const auto name = where.empty() ? key : where + "." + key;
        if (!known.contains(key)) throw ConfigError("unknown config key '" + name + "'");
        reject_unknown(value, known.at(key), name);
    }
}

template <class Fn>
void checked(const char* section, Fn fn) {
    try {
        fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string(section) + ": " + e.what());
    }
}

}  // namespace

void PipelineConfig::validate(bool need_topic) const {
    if (need_topic && topic.find_first_not_of(" \t\r\n") == std::string::npos) throw ConfigError("topic is empty");
    if (!code_analysis_enabled && code_analysis.enabled)
        throw ConfigError("code_analysis.enabled and code_analysis_enabled disagree");
    checked("retrieval", [&] { retrieval.validate(); });
    checked("analysis", [&] { analysis.validate(); });
    checked("code_analysis", [&] { code_analysis.validate(); });
    checked("writing", [&] { writing.validate(); });
    checked("refinement", [&] { refinement.validate(); });
    checked("backend.profile", [&] { backend.profile.validate(); });
    if (understanding.max_retries < 0 || understanding.max_output_tokens < 1 || understanding.workers < 1)
        throw ConfigError("understanding: retries must be non-negative, output tokens and workers positive");
    if (backend.text != "chat" && backend.text != "offline")
        throw ConfigError("backend.text must be 'chat' or 'offline'");
    if (backend.embedding != "hashing" && backend.embedding != "http")
        throw ConfigError("backend.embedding must be 'hashing' or 'http'");
    if (backend.paper_source != "academic-graph" && backend.paper_source != "fixture")
        throw ConfigError("backend.paper_source must be 'academic-graph' or 'fixture'");
    if (backend.fallback_source != "preprint-archive" && backend.fallback_source != "none")
        throw ConfigError("backend.fallback_source must be 'preprint-archive' or 'none'");
    if (backend.paper_source == "fixture" && backend.fixture_path.empty())
        throw ConfigError("backend.fixture_path is required with the fixture paper source");
    if (backend.http_timeout_s < 1) throw ConfigError("backend.http_timeout_s must be positive");
    checked("evaluation", [&] { evaluation::premise_source_from_string(evaluation.premise_source); });
    if (evaluation.workers < 1) throw ConfigError("evaluation.workers must be positive");
    for (const auto* p : {&paths.cache_dir, &paths.substrate_dir, &paths.checkpoint_path, &paths.output_dir})
        if (p->empty()) throw ConfigError("paths must not be empty");
}

json config_to_json(const PipelineConfig& cfg) {
    json j = cfg;
    j["code_analysis"]["enabled"] = cfg.code_analysis_enabled;
    return j;
}

PipelineConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown(j, config_to_json(PipelineConfig{}), "");
    PipelineConfig cfg;
    try {
        cfg = j.get<PipelineConfig>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    } catch (const InvalidInputError& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    cfg.code_analysis_enabled = cfg.code_analysis_enabled || cfg.code_analysis.enabled;
    cfg.code_analysis.enabled = cfg.code_analysis_enabled;
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::string config_hash(const PipelineConfig& cfg) {
    json j = config_to_json(cfg);
    j.erase("paths");
    return stable_hash(j.dump());
}

}  // namespace pipeline
}  // namespace litsynth
