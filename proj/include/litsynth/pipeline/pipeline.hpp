#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "litsynth/code_analysis/code_analysis.hpp"
#include "litsynth/core/error.hpp"
#include "litsynth/evaluation/evaluation.hpp"
#include "litsynth/llm/backend.hpp"
#include "litsynth/llm/gateway.hpp"
#include "litsynth/pipeline/config.hpp"
#include "litsynth/retrieval/source.hpp"

namespace litsynth::pipeline {

enum class Stage { Retrieval, Understanding, Analysis, CodeAnalysis, Writing, Refinement };

std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view text);

/// Enabled stages in execution order.
std::vector<Stage> stage_plan(const PipelineConfig& cfg);

class StageFailure : public Error {
public:
    StageFailure(Stage stage, const std::string& what)
        : Error("stage '" + std::string(to_string(stage)) + "' failed: " + what), stage_(stage) {}
    Stage stage() const noexcept { return stage_; }

private:
    Stage stage_;
};

struct Checkpoint {
    std::vector<Stage> completed_stages;
    std::filesystem::path substrate_dir;
    std::string config_hash;

    /// Throws ConfigError unless the stages are a prefix of `plan`.
    void validate(const std::vector<Stage>& plan) const;
};

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path);
std::optional<Checkpoint> load_checkpoint(const std::filesystem::path& path);

struct Backends {
    std::shared_ptr<llm::TextBackend> text;
    std::shared_ptr<llm::EmbeddingBackend> embedder;
    std::shared_ptr<retrieval::PaperSource> primary;
    std::shared_ptr<retrieval::PaperSource> fallback;  // may be null
    std::shared_ptr<code_analysis::RepoFetcher> repos;
    llm::Sleeper sleeper;  // empty means real sleeping
};

/// Builds the backends `cfg.backend` names. Offline mode needs no network.
Backends make_backends(const PipelineConfig& cfg);

struct RunOptions {
    bool resume = false;
    std::optional<Stage> stop_after;  // simulates an interrupted run
    std::string generated_at;         // empty means the current UTC time
    bool echo_events = false;
};

struct RunSummary {
    std::vector<Stage> executed;
    std::vector<Stage> resumed;  // already complete in the checkpoint
    bool finished = false;       // every planned stage done
    std::optional<std::filesystem::path> survey_path;
    llm::GatewayStats gateway_stats;
    nlohmann::json manifest;
};

/// Runs the enabled stages, saving the substrate and checkpoint after each.
/// On resume, a config hash mismatch is a ConfigError; a failing stage throws
/// StageFailure and leaves the checkpoint at the last completed stage.
RunSummary run_pipeline(const PipelineConfig& cfg, Backends& backends, const RunOptions& opts = {});

struct EvaluateOptions {
    std::optional<std::filesystem::path> sidecar;     // default: citation_map.json next to the survey
    std::optional<std::filesystem::path> output_dir;  // default: <survey dir>/evaluation
    std::string system = "litsynth";
};

/// Scores a survey against the papers in `cfg.paths.substrate_dir`. Missing
/// survey or sidecar is a NotFoundError. Reports are always written.
evaluation::EvaluationReport evaluate_files(const std::filesystem::path& survey, const PipelineConfig& cfg,
                                            Backends& backends, const EvaluateOptions& opts = {});

/// Renders one artifact: `papers`, `clusters`, `outline`, `keynote <id>`,
/// `cluster <id>` or `analysis <id>`. Unknown selectors are InvalidInputError;
/// unknown ids are NotFoundError.
std::string inspect(const std::filesystem::path& substrate_dir, const std::vector<std::string>& selector);

/// Removes the cache directory. Returns the number of files deleted.
std::size_t clear_cache(const std::filesystem::path& cache_dir);

std::string utc_timestamp();

}  // namespace litsynth::pipeline
