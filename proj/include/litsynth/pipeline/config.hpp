#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "litsynth/analysis/analysis.hpp"
#include "litsynth/code_analysis/code_analysis.hpp"
#include "litsynth/evaluation/evaluation.hpp"
#include "litsynth/llm/gateway.hpp"
#include "litsynth/refinement/refinement.hpp"
#include "litsynth/retrieval/retrieval.hpp"
#include "litsynth/understanding/understanding.hpp"
#include "litsynth/writing/writing.hpp"

namespace litsynth::pipeline {

struct StageFlags {
    bool retrieval = true;
    bool understanding = true;
    bool analysis = true;
    bool writing = true;
    bool refinement = true;
};

// Endpoints and the names of the environment variables holding secrets.
struct BackendConfig {
    std::string text = "chat";  // chat | offline
    std::string base_url = "https://api.openai.com/v1";
    std::string model = "gpt-4o-mini";
    std::string api_key_env = "LITSYNTH_API_KEY";
    std::string embedding = "hashing";  // hashing | http
    std::string embedding_base_url = "https://api.openai.com/v1";
    std::string embedding_model = "text-embedding-3-small";
    std::string embedding_api_key_env = "LITSYNTH_API_KEY";
    std::string paper_source = "academic-graph";      // academic-graph | fixture
    std::string fallback_source = "preprint-archive";  // preprint-archive | none
    std::string fixture_path;
    std::string graph_api_key_env = "S2_API_KEY";
    int http_timeout_s = 120;
    llm::BackendProfile profile;
};

struct PathsConfig {
    std::filesystem::path cache_dir = "litsynth-run/cache";
    std::filesystem::path substrate_dir = "litsynth-run/substrate";
    std::filesystem::path checkpoint_path = "litsynth-run/checkpoint.json";
    std::filesystem::path output_dir = "litsynth-run/output";
    std::filesystem::path documents_dir = "litsynth-run/documents";
    std::filesystem::path repos_dir = "litsynth-run/repos";
};

struct EvaluationSettings {
    std::string premise_source = "abstract";  // abstract | keynote | tldr
    evaluation::NliConfig nli;
    evaluation::JudgeConfig judge;
    std::size_t workers = 4;
    bool judge_content = true;
};

struct PipelineConfig {
    std::string topic;
    StageFlags stages;
    bool code_analysis_enabled = false;
    retrieval::RetrievalConfig retrieval;
    understanding::UnderstandingConfig understanding;
    analysis::AnalysisConfig analysis;
    code_analysis::CodeAnalysisConfig code_analysis;
    writing::WritingConfig writing;
    refinement::RefinementConfig refinement;
    EvaluationSettings evaluation;
    BackendConfig backend;
    PathsConfig paths;

    /// Throws ConfigError. `need_topic` is false for verbs that do not generate.
    void validate(bool need_topic = true) const;
};

nlohmann::json config_to_json(const PipelineConfig& cfg);

/// Values from `j` over the defaults. Unknown keys are a ConfigError, so a
/// typo never silently falls back to a default.
PipelineConfig config_from_json(const nlohmann::json& j);

PipelineConfig load_config(const std::filesystem::path& path);

/// Stable hash of everything but the paths.
std::string config_hash(const PipelineConfig& cfg);

}  // namespace litsynth::pipeline
