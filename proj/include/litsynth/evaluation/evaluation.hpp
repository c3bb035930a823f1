#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "litsynth/core/types.hpp"
#include "litsynth/llm/context.hpp"

namespace litsynth::evaluation {

inline constexpr const char* kStage = "evaluation";

// ---------------------------------------------------------------- claims

struct ClaimRecord {
    int claim_id = 0;
    std::string text;               // sentence with citation tokens removed
    std::vector<std::string> refs;  // canonical paper ids, first appearance order, no duplicates
};

/// Body of an assembled survey: front matter, headings and the reference
/// list removed.
std::string survey_body(std::string_view survey_text);

/// Reference number -> canonical paper id, from the citation sidecar.
std::map<int, std::string> reference_numbers(const nlohmann::json& citation_map);

/// One claim per sentence holding at least one `[n]` citation that resolves
/// through the sidecar. Claim ids count from 0 in reading order.
std::vector<ClaimRecord> extract_claims(std::string_view survey_text, const nlohmann::json& citation_map);

// ------------------------------------------------------------ NLI verdicts

using RefSet = std::vector<std::string>;  // kept sorted

RefSet make_ref_set(std::vector<std::string> refs);

/// h(c, S) for the subsets the metrics query. h(c, {}) is always false.
class NliVerdictTable {
public:
    void set(int claim_id, const std::vector<std::string>& refs, bool entailed);
    std::optional<bool> find(int claim_id, const std::vector<std::string>& refs) const;
    /// Throws EvaluationError naming the claim and subset when absent.
    bool at(int claim_id, const std::vector<std::string>& refs) const;
    std::size_t size() const { return entries_.size(); }

private:
    std::map<std::pair<int, RefSet>, bool> entries_;
};

/// Full set, then singletons, then leave-one-out sets; duplicates and the
/// empty set are left out.
std::vector<RefSet> required_subsets(const ClaimRecord& claim);

struct Ratio {
    double value = 1.0;
    bool warning = false;  // denominator was zero, value defaulted to 1
    std::size_t numerator = 0;
    std::size_t denominator = 0;
};

Ratio citation_recall(const std::vector<ClaimRecord>& claims, const NliVerdictTable& verdicts);

/// g(c, r) = h(c, {r}) or not h(c, Ref \ {r}).
bool necessity_g(const ClaimRecord& claim, const std::string& ref, const NliVerdictTable& verdicts);

Ratio citation_precision(const std::vector<ClaimRecord>& claims, const NliVerdictTable& verdicts);

/// Bracketed citation groups in the survey body. Each number counts once and
/// is valid when it maps to a bibliography entry whose paper is in the
/// universe. Malformed groups and leftover `<key>` marks count as invalid.
Ratio valid_citation_ratio(std::string_view survey_text, const std::map<int, std::string>& bibliography,
                           const std::set<std::string>& universe);

// --------------------------------------------------------- content scores

struct RubricDimension {
    std::string_view key;
    std::string_view label;
    std::string_view group;  // core, writing or depth
};

inline constexpr std::array<RubricDimension, 11> kRubric{{
    {"synthesis", "Synthesis Quality", "core"},
    {"organization", "Organization", "core"},
    {"comprehensiveness", "Comprehensiveness", "core"},
    {"relevance", "Relevance", "core"},
    {"readability", "Readability", "writing"},
    {"academic_rigor", "Academic Rigor", "writing"},
    {"clarity_coherence", "Clarity & Coherence", "writing"},
    {"critical_analysis", "Critical Analysis", "depth"},
    {"novelty_insights", "Novelty and Insights", "depth"},
    {"specificity", "Specificity", "depth"},
    {"future_directions", "Future Directions", "depth"},
}};

struct ContentScores {
    double core = 1.0;
    double writing = 1.0;
    double depth = 1.0;
    std::map<std::string, double> sub_scores;
};

/// Throws InvalidInputError when a score lies outside [1, 10].
void validate(const ContentScores& s);

double weighted_content_score(const ContentScores& s);

/// Dimension scores as the mean of their rubric sub-scores. Every rubric key
/// must be present.
ContentScores scores_from_subdimensions(const std::map<std::string, double>& sub_scores);

// ------------------------------------------------------------- statistics

struct Dispersion {
    double mean = 0;
    double std = 0;
    double cv_percent = 0;
    double max_abs_dev = 0;
    double range = 0;
};

enum class StdConvention { Sample, Population };

/// Sample (n-1) standard deviation unless told otherwise. Throws
/// InvalidInputError below two samples, EvaluationError on a zero mean.
Dispersion coefficient_of_variation(const std::vector<double>& samples,
                                    StdConvention convention = StdConvention::Sample);

double cohens_kappa(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// Per-item category counts over a fixed category list.
struct RatingMatrix {
    std::vector<std::string> categories;
    std::vector<std::vector<int>> counts;  // items x categories

    /// Items x raters labels. Throws InvalidInputError on ragged rows or
    /// labels outside `categories` (when given).
    static RatingMatrix from_labels(const std::vector<std::vector<std::string>>& labels,
                                    std::vector<std::string> categories = {});
};

double fleiss_kappa(const RatingMatrix& m);

// -------------------------------------------------------------- backends

struct Premise {
    std::string paper_id;
    std::string title;
    std::string text;
};

enum class PremiseSource { Abstract, Keynote, Tldr };

std::string_view to_string(PremiseSource p);
PremiseSource premise_source_from_string(std::string_view text);

/// Premise text per paper. Keynote premises fall back to the abstract, then
/// the tldr, when a paper has no keynote.
std::map<std::string, Premise> build_premises(const std::map<PaperId, PaperRecord>& papers,
                                              const std::map<PaperId, Keynote>& keynotes, PremiseSource source);

class NliBackend {
public:
    virtual ~NliBackend() = default;
    virtual bool entails(const std::string& claim, const std::vector<Premise>& premises) = 0;
};

class FunctionNli : public NliBackend {
public:
    using Fn = std::function<bool(const std::string&, const std::vector<Premise>&)>;
    explicit FunctionNli(Fn fn) : fn_(std::move(fn)) {}
    bool entails(const std::string& claim, const std::vector<Premise>& premises) override {
        return fn_(claim, premises);
    }

private:
    Fn fn_;
};

struct NliConfig {
    double temperature = 0.0;
    int max_retries = 3;
    int max_output_tokens = 256;
};

/// Asks the text model through the gateway (tag evaluation.nli) for a JSON
/// {"entailed": bool} verdict.
class GatewayNli : public NliBackend {
public:
    GatewayNli(StageContext& ctx, NliConfig cfg = {}) : ctx_(ctx), cfg_(cfg) {}
    bool entails(const std::string& claim, const std::vector<Premise>& premises) override;

private:
    StageContext& ctx_;
    NliConfig cfg_;
};

class Judge {
public:
    virtual ~Judge() = default;
    virtual ContentScores score(const std::string& survey_text, const std::string& topic) = 0;
};

struct JudgeConfig {
    double temperature = 0.0;
    bool explanations = false;
    int max_retries = 3;
    int max_output_tokens = 2048;
};

/// Strict parse of {"scores": {rubric key: 1..10}}.
ContentScores parse_judge_reply(const nlohmann::json& j);

/// Rubric prompt through the gateway (tag evaluation.judge). Long surveys are
/// truncated to the context window with a compression event.
class GatewayJudge : public Judge {
public:
    GatewayJudge(StageContext& ctx, JudgeConfig cfg = {}) : ctx_(ctx), cfg_(cfg) {}
    ContentScores score(const std::string& survey_text, const std::string& topic) override;

private:
    StageContext& ctx_;
    JudgeConfig cfg_;
};

/// Calls the NLI backend for every full set, and for the singletons and
/// leave-one-out sets of claims whose full set is entailed.
NliVerdictTable collect_verdicts(const std::vector<ClaimRecord>& claims, const std::map<std::string, Premise>& premises,
                                 NliBackend& nli, std::size_t workers);

// ---------------------------------------------------------------- report

struct MetricValue {
    std::optional<double> value;
    bool warning = false;
    std::string error;  // set when the metric could not be computed
};

struct EvaluationReport {
    std::string system;
    std::size_t claims = 0;
    std::size_t citations = 0;
    MetricValue recall;
    MetricValue precision;
    MetricValue valid_ratio;
    std::optional<ContentScores> content;
    MetricValue total;
    std::vector<std::string> warnings;

    bool complete() const;
};

struct SurveyInput {
    std::string system;
    std::string topic;
    std::string text;
    nlohmann::json citation_map;
};

struct EvaluationOptions {
    std::size_t workers = 4;
    bool judge_content = true;
};

/// Claims, verdicts, citation metrics and content scores. Backend failures
/// leave the affected metrics empty with an error marker.
EvaluationReport evaluate_survey(const SurveyInput& survey, const std::map<std::string, Premise>& premises,
                                 const std::set<std::string>& universe, NliBackend& nli, Judge* judge,
                                 const EvaluationOptions& opts = {});

nlohmann::json to_json(const EvaluationReport& r);

/// Tab-separated table, one row per system: content columns then citation columns.
std::string report_tsv(const std::vector<EvaluationReport>& reports);

/// Writes report.tsv and report.json into `dir`.
void write_reports(const std::vector<EvaluationReport>& reports, const std::filesystem::path& dir);

}  // namespace litsynth::evaluation
