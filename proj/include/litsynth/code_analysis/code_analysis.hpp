#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "litsynth/core/types.hpp"
#include "litsynth/llm/context.hpp"

namespace litsynth::code_analysis {

inline constexpr const char* kStage = "code_analysis";

enum class OpKind { GetSourceCode, Create, Revise, Review, Finish };

std::string_view to_string(OpKind op);
OpKind op_kind_from_string(std::string_view text);

struct PlannerOp {
    OpKind op = OpKind::Finish;
    std::string path;  // get_source_code only, repository relative
    std::string rationale;
    bool forced = false;  // injected by the loop to keep the revise cadence

    bool operator==(const PlannerOp&) const = default;
};

struct PseudocodeReview {
    int conciseness = 0;
    int logical_structure = 0;
    int implementation_specificity = 0;
    std::vector<std::string> suggestions;

    bool operator==(const PseudocodeReview&) const = default;
};

/// Scores must lie in [0, 10]. Throws InvalidInputError.
void validate(const PseudocodeReview& review);

struct RepoSnapshot {
    PaperId paper_id;
    std::map<std::string, std::string> files;
    std::set<std::string> config_files;  // dependency manifests and readmes, keys of `files`
};

/// Relative, non-empty, no "." or ".." segments, no backslashes.
bool is_safe_relative_path(std::string_view path);
/// requirements.txt, pyproject.toml, package.json, README*, Dockerfile and similar.
bool is_config_file(std::string_view path);
/// Throws InvalidInputError on unsafe paths or config entries missing from files.
void validate(const RepoSnapshot& repo);

/// Reads a directory tree. Hidden entries, binary files and files larger than
/// `max_file_bytes` are skipped.
RepoSnapshot load_repo_dir(const std::filesystem::path& dir, const PaperId& id, std::size_t max_file_bytes = 200000);

class RepoFetcher {
public:
    virtual ~RepoFetcher() = default;
    virtual std::optional<RepoSnapshot> fetch(const std::string& url, const PaperId& id) = 0;
};

/// Maps a repository URL to `<root>/<last path segment without .git>`.
class DirectoryRepoFetcher : public RepoFetcher {
public:
    explicit DirectoryRepoFetcher(std::filesystem::path root) : root_(std::move(root)) {}
    std::optional<RepoSnapshot> fetch(const std::string& url, const PaperId& id) override;

private:
    std::filesystem::path root_;
};

struct CodeAnalysisConfig {
    bool enabled = false;
    int max_rounds = 10;
    int min_reads = 3;
    int revise_every = 3;
    std::size_t batch_size = 5;
    double planner_temperature = 0.0;
    double reviewer_temperature = 0.0;
    double reviser_temperature = 0.0;
    double creator_temperature = 0.3;
    std::size_t memory_threshold_tokens = 8000;
    int max_retries = 3;
    std::size_t max_file_chars = 12000;  // per file inside creator and reviser prompts
    std::size_t workers = 4;

    void validate() const;
};

/// Operation history and review feedback shown to the planner. Compresses
/// itself whenever its token estimate passes the threshold.
class PlannerMemory {
public:
    explicit PlannerMemory(std::size_t threshold_tokens);

    void add(std::string entry);
    std::string render() const;
    std::size_t tokens() const;
    std::size_t compressions() const { return compressions_; }
    std::size_t size() const { return entries_.size(); }

private:
    void compress();

    std::size_t threshold_;
    std::vector<std::string> entries_;
    std::size_t compressions_ = 0;
};

struct LoopResult {
    std::string pseudocode;
    std::vector<PseudocodeReview> reviews;
    std::vector<PlannerOp> trace;  // executed operations, one per round
    int rounds = 0;
    bool finished = false;
    std::size_t rejections = 0;
    std::size_t planner_calls = 0;
    std::size_t max_memory_tokens = 0;  // largest memory estimate seen at a planner call
};

/// First rule an executed trace breaks, or nullopt when it is legal: at least
/// `min_reads` distinct reads before create, create at most once and before
/// review or revise, at most `revise_every` non-revise rounds between
/// revisions after create, and finish at most once and last.
std::optional<std::string> trace_violation(const std::vector<PlannerOp>& trace, int min_reads, int revise_every);

/// Planner-driven loop producing repository pseudocode. The planner returns
/// sub-plans (ordered operation lists). Illegal operations are rejected with
/// the rest of their sub-plan and the planner is asked again.
LoopResult run_pseudocode_loop(const RepoSnapshot& repo, const CodeAnalysisConfig& cfg, StageContext& ctx);

struct PseudocodeEntry {
    PaperId paper_id;
    std::string pseudocode;
};

/// Batches of cfg.batch_size, one report per batch, then one integration call.
/// Batch reports that do not fit the window are merged pairwise first.
std::string batch_code_report(const std::vector<PseudocodeEntry>& entries, const std::string& topic,
                              const CodeAnalysisConfig& cfg, StageContext& ctx);

/// Configuration files of every repository, or a placeholder entry.
nlohmann::json environment_payload(const std::vector<RepoSnapshot>& repos, std::size_t max_file_chars);

std::string environment_report(const std::vector<RepoSnapshot>& repos, const std::string& topic,
                               const CodeAnalysisConfig& cfg, StageContext& ctx);

/// Paragraphs of `report` that carry a `<paper_id>` mark for `id`.
std::string report_excerpt(const std::string& report, const PaperId& id);

/// No-op unless cfg.enabled. Fills s.code_reports for papers whose repository
/// produced pseudocode.
void run_code_analysis(KnowledgeSubstrate& s, RepoFetcher& fetcher, const CodeAnalysisConfig& cfg, StageContext& ctx);

}  // namespace litsynth::code_analysis
