#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "litsynth/core/types.hpp"
#include "litsynth/llm/context.hpp"
#include "litsynth/writing/writing.hpp"

namespace litsynth::refinement {

inline constexpr const char* kStage = "refinement";

enum class Skill { ReadKeynotes, Review, Revise, Finish };

std::string_view to_string(Skill s);
Skill skill_from_string(std::string_view text);

struct SkillInvocation {
    Skill skill = Skill::Review;
    std::vector<std::string> paper_ids;  // read_keynotes
    std::string instructions;           // revise

    bool operator==(const SkillInvocation&) const = default;
};

struct MemoryEvent {
    int round = 0;
    std::string skill;
    std::string summary;
    std::optional<double> score_delta;
};

/// Append-only record of skill outcomes. Once the rendered history exceeds the
/// token threshold, older rounds are folded into a digest; the latest round is
/// always rendered verbatim.
class RefinementMemory {
public:
    explicit RefinementMemory(std::size_t threshold_tokens = 8000) : threshold_(threshold_tokens) {}

    /// Throws InvalidInputError when `e.round` is below the last recorded round.
    void add(MemoryEvent e);
    const std::vector<MemoryEvent>& events() const { return events_; }
    const std::string& compressed_state() const { return compressed_; }
    std::size_t folded() const { return folded_; }
    std::size_t compressions() const { return compressions_; }
    std::string render() const;

private:
    std::string render_events(std::size_t from) const;
    void fold();

    std::size_t threshold_;
    std::vector<MemoryEvent> events_;
    std::string compressed_;
    std::size_t folded_ = 0;
    std::size_t compressions_ = 0;
};

struct LevelConfig {
    bool enabled = true;
    int max_rounds = 3;
    double planner_temperature = 0.7;
    double reviewer_temperature = 1.0;
    double reviser_temperature = 0.5;
};

struct RefinementConfig {
    LevelConfig section{true, 3, 0.7, 1.0, 0.5};
    LevelConfig subsection{true, 3, 0.1, 0.1, 0.1};
    LevelConfig survey{true, 5, 0.7, 1.0, 0.5};
    std::vector<Granularity> order{Granularity::Section, Granularity::Subsection, Granularity::Survey};
    bool use_planner = true;  // false selects the plain review/revise loop
    int max_retries = 3;      // malformed planner or reviewer replies
    std::size_t max_plan_steps = 4;
    int revision_attempts = 2;
    std::size_t memory_threshold_tokens = 8000;
    std::size_t evidence_budget_tokens = 6000;
    std::size_t max_output_tokens = 8192;
    bool include_code_reports = false;
    CitationStyle citation_style = CitationStyle::TitleMark;
    std::size_t workers = 4;

    const LevelConfig& level(Granularity g) const;
    LevelConfig& level(Granularity g);
    void validate() const;
};

struct ReviewVerdict {
    std::map<std::string, double> scores;  // 0..10 per dimension
    std::vector<std::string> suggestions;
    bool satisfactory = false;

    double mean() const;
};

/// Strict parse; rejects empty or out-of-range scores with OutputError.
ReviewVerdict parse_review(const nlohmann::json& j);

/// Mean score difference when both verdicts score the same dimensions.
std::optional<double> score_delta(const ReviewVerdict* previous, const ReviewVerdict& current);

struct EvidenceBundle {
    nlohmann::json items = nlohmann::json::array();
    std::vector<std::string> skipped;  // unknown ids
    bool compressed = false;
};

/// Keynotes (plus code reports when asked) for known ids, shrunk to `budget`
/// tokens. Unknown ids are skipped with a monitor event.
EvidenceBundle read_keynotes_skill(const std::vector<std::string>& ids, const KnowledgeSubstrate& s,
                                   std::size_t budget, bool include_code_reports, StageContext& ctx);

/// Contiguous outline nodes refined as one text.
struct Target {
    std::string name;
    Granularity granularity = Granularity::Subsection;
    std::vector<writing::NodePath> paths;
};

/// Every leaf; every top-level section with its children; the whole survey.
std::vector<Target> targets(const KnowledgeSubstrate& s, Granularity g);

/// Single-node targets render as the bare draft; larger ones carry '#'
/// anchor lines that a revision must keep unchanged.
std::string render_target(const Target& t, const KnowledgeSubstrate& s);

/// Splits a revision back into unit texts and re-verifies each one against
/// its node's evidence. Throws OutputError with the reason.
std::vector<std::string> split_revision(const Target& t, const std::string& revised, const KnowledgeSubstrate& s,
                                        CitationStyle style);

struct RefineResult {
    std::string name;
    Granularity granularity = Granularity::Subsection;
    std::vector<std::string> texts;  // per path of the target
    RefinementMemory memory;
    int rounds = 0;
    bool finished = false;
    std::size_t skill_calls = 0;
    std::size_t rejected_revisions = 0;
    bool skipped = false;  // over the context budget
};

/// Planner-driven loop: one planner call per round, its sub-plan executed in
/// order, ending on finish or after max_rounds.
RefineResult refine(const Target& t, const KnowledgeSubstrate& s, const RefinementConfig& cfg, StageContext& ctx);

/// Review then revise for a fixed number of rounds; stops early when the
/// reviewer calls the draft satisfactory.
RefineResult skill_loop_fallback(const Target& t, const KnowledgeSubstrate& s, int rounds,
                                 const RefinementConfig& cfg, StageContext& ctx);

/// Writes result texts into the drafts and refreshes their citation lists.
void apply_result(KnowledgeSubstrate& s, const Target& t, const RefineResult& r, CitationStyle style);

/// Enabled levels in configured order; targets of one level run in parallel.
/// Appends every skill outcome to the revision log.
std::vector<RefineResult> run_refinement(KnowledgeSubstrate& s, const RefinementConfig& cfg, StageContext& ctx);

std::string transcript(const RefineResult& r);
/// One markdown transcript per refined unit, numbered in run order.
void write_transcripts(const std::vector<RefineResult>& results, const std::filesystem::path& dir);

}  // namespace litsynth::refinement
