#include "litsynth/evaluation/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <regex>

#include "litsynth/core/error.hpp"
#include "litsynth/core/parallel.hpp"
#include "litsynth/core/substrate.hpp"
#include "litsynth/core/text.hpp"
#include "litsynth/llm/structured.hpp"
#include "litsynth/llm/tokens.hpp"

namespace litsynth::evaluation {

using nlohmann::json;

namespace {

// A bracket group that holds a digit is taken as a citation attempt; a group
// directly followed by '(' is a markdown link.
const std::regex& bracket_re() {
    static const std::regex re(R"(\[([^\[\]\n]{1,24})\](\()?)");
    return re;
}

const std::regex& number_list_re() {
    static const std::regex re(R"(^\s*\d+\s*([,;]\s*\d+\s*)*$)");
    return re;
}

struct CitationToken {
    std::size_t offset = 0;
    std::size_t length = 0;
    bool well_formed = false;
    std::vector<int> numbers;
};

std::vector<CitationToken> citation_tokens(const std::string& s) {
    std::vector<CitationToken> out;
    for (auto it = std::sregex_iterator(s.begin(), s.end(), bracket_re()); it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        if (m[2].matched) continue;
        const std::string inner = m[1].str();
        if (std::none_of(inner.begin(), inner.end(), [](unsigned char c) { return std::isdigit(c); })) continue;
        CitationToken t;
        t.offset = static_cast<std::size_t>(m.position(0));
        t.length = static_cast<std::size_t>(m.length(1)) + 2;
        t.well_formed = std::regex_match(inner, number_list_re());
        if (t.well_formed) {
            std::string cur;
            for (char c : inner + ",") {
                if (std::isdigit(static_cast<unsigned char>(c))) {
                    cur += c;
                } else if (!cur.empty()) {
                    t.numbers.push_back(std::stoi(cur.size() > 9 ? std::string("999999999") : cur));
                    cur.clear();
                }
            }
        }
        out.push_back(std::move(t));
    }
    return out;
}

std::string collapse_spaces(std::string_view s) {
    std::string out;
    bool space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = true;
            continue;
        }
        if (space && !out.empty() && c != '.' && c != ',' && c != ';' && c != ':' && c != '!' && c != '?') out += ' ';
        space = false;
        out += c;
    }
    return out;
}

std::string describe(int claim_id, const RefSet& refs) {
    return "claim " + std::to_string(claim_id) + " with {" + text::join(refs, ", ") + "}";
}

std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------- claims

std::string survey_body(std::string_view survey_text) {
    std::string_view rest = survey_text;
    if (rest.starts_with("---\n")) {
        const auto end = rest.find("\n---", 3);
        if (end != std::string_view::npos) {
            const auto nl = rest.find('\n', end + 4);
            rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
        }
    }
    std::string out;
    for (const auto& line : text::split_lines(rest)) {
        const std::string t = text::trim(line);
        if (t.starts_with("#")) {
            if (text::to_lower(t) == "## references") break;
            out += "\n";  // headings end the running paragraph
            continue;
        }
        out += line + "\n";
    }
    return out;
}

std::map<int, std::string> reference_numbers(const json& citation_map) {
    std::map<int, std::string> out;
    if (!citation_map.is_object() || !citation_map.contains("references")) return out;
    for (const auto& r : citation_map.at("references")) {
        if (!r.is_object() || !r.contains("n") || !r.contains("paper_id")) continue;
        if (!r.at("n").is_number_integer() || !r.at("paper_id").is_string()) continue;
        out[r.at("n").get<int>()] = r.at("paper_id").get<std::string>();
    }
    return out;
}

std::vector<ClaimRecord> extract_claims(std::string_view survey_text, const json& citation_map) {
    const auto numbers = reference_numbers(citation_map);
    std::vector<ClaimRecord> out;
    for (const auto& sentence : text::split_sentences(survey_body(survey_text))) {
        ClaimRecord c;
        std::string stripped;
        std::size_t pos = 0;
        for (const auto& t : citation_tokens(sentence)) {
            stripped += sentence.substr(pos, t.offset - pos);
            pos = t.offset + t.length;
            for (int n : t.numbers) {
                auto it = numbers.find(n);
                if (it == numbers.end()) continue;
                if (std::find(c.refs.begin(), c.refs.end(), it->second) == c.refs.end()) c.refs.push_back(it->second);
            }
        }
        if (c.refs.empty()) continue;
        stripped += sentence.substr(std::min(pos, sentence.size()));
        c.claim_id = static_cast<int>(out.size());
        c.text = collapse_spaces(text::trim(stripped));
        out.push_back(std::move(c));
    }
    return out;
}

// ------------------------------------------------------------ NLI verdicts

RefSet make_ref_set(std::vector<std::string> refs) {
    std::sort(refs.begin(), refs.end());
    refs.erase(std::unique(refs.begin(), refs.end()), refs.end());
    return refs;
}

void NliVerdictTable::set(int claim_id, const std::vector<std::string>& refs, bool entailed) {
    entries_[{claim_id, make_ref_set(refs)}] = entailed;
}

std::optional<bool> NliVerdictTable::find(int claim_id, const std::vector<std::string>& refs) const {
    auto key = make_ref_set(refs);
    if (key.empty()) return false;
    auto it = entries_.find({claim_id, std::move(key)});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

bool NliVerdictTable::at(int claim_id, const std::vector<std::string>& refs) const {
    if (auto v = find(claim_id, refs)) return *v;
    throw EvaluationError("missing NLI verdict for " + describe(claim_id, make_ref_set(refs)));
}

std::vector<RefSet> required_subsets(const ClaimRecord& claim) {
    const RefSet full = make_ref_set(claim.refs);
    std::vector<RefSet> out;
    auto add = [&](RefSet s) {
        if (s.empty() || std::find(out.begin(), out.end(), s) != out.end()) return;
        out.push_back(std::move(s));
    };
    add(full);
    for (const auto& r : full) add({r});
    for (const auto& r : full) {
        RefSet rest;
        for (const auto& o : full)
            if (o != r) rest.push_back(o);
        add(std::move(rest));
    }
    return out;
}

Ratio citation_recall(const std::vector<ClaimRecord>& claims, const NliVerdictTable& verdicts) {
    Ratio r;
    r.denominator = claims.size();
    for (const auto& c : claims)
        if (verdicts.at(c.claim_id, c.refs)) ++r.numerator;
    if (r.denominator == 0) {
        r.warning = true;
        r.value = 1.0;
    } else {
        r.value = static_cast<double>(r.numerator) / static_cast<double>(r.denominator);
    }
    return r;
}

bool necessity_g(const ClaimRecord& claim, const std::string& ref, const NliVerdictTable& verdicts) {
    if (verdicts.at(claim.claim_id, {ref})) return true;
    std::vector<std::string> rest;
    for (const auto& o : claim.refs)
        if (o != ref) rest.push_back(o);
    return !verdicts.at(claim.claim_id, rest);
}

Ratio citation_precision(const std::vector<ClaimRecord>& claims, const NliVerdictTable& verdicts) {
    Ratio r;
    for (const auto& c : claims) {
        r.denominator += c.refs.size();
        if (!verdicts.at(c.claim_id, c.refs)) continue;
        for (const auto& ref : c.refs)
            if (necessity_g(c, ref, verdicts)) ++r.numerator;
    }
    if (r.denominator == 0) {
        r.warning = true;
        r.value = 1.0;
    } else {
        r.value = static_cast<double>(r.numerator) / static_cast<double>(r.denominator);
    }
    return r;
}

Ratio valid_citation_ratio(std::string_view survey_text, const std::map<int, std::string>& bibliography,
                           const std::set<std::string>& universe) {
    const std::string body = survey_body(survey_text);
    Ratio r;
    for (const auto& t : citation_tokens(body)) {
        if (!t.well_formed) {
            ++r.denominator;
            continue;
        }
        for (int n : t.numbers) {
            ++r.denominator;
            auto it = bibliography.find(n);
            if (it != bibliography.end() && universe.contains(it->second)) ++r.numerator;
        }
    }
    r.denominator += text::find_angle_marks(body).size();
    if (r.denominator == 0) {
        r.warning = true;
        r.value = 1.0;
    } else {
        r.value = static_cast<double>(r.numerator) / static_cast<double>(r.denominator);
    }
    return r;
}

// --------------------------------------------------------- content scores

void validate(const ContentScores& s) {
    auto check = [](std::string_view name, double v) {
        if (!std::isfinite(v) || v < 1.0 || v > 10.0)
            throw InvalidInputError(std::string(name) + " score " + std::to_string(v) + " is outside [1, 10]");
    };
    check("core", s.core);
    check("writing", s.writing);
    check("depth", s.depth);
    for (const auto& [k, v] : s.sub_scores) check(k, v);
}

double weighted_content_score(const ContentScores& s) {
    validate(s);
    return 0.4 * s.core + 0.2 * s.writing + 0.4 * s.depth;
}

ContentScores scores_from_subdimensions(const std::map<std::string, double>& sub_scores) {
    std::map<std::string, std::pair<double, int>> groups;
    ContentScores out;
    for (const auto& d : kRubric) {
        auto it = sub_scores.find(std::string(d.key));
        if (it == sub_scores.end()) throw InvalidInputError("missing rubric score '" + std::string(d.key) + "'");
        auto& g = groups[std::string(d.group)];
        g.first += it->second;
        ++g.second;
        out.sub_scores[std::string(d.key)] = it->second;
    }
    out.core = groups["core"].first / groups["core"].second;
    out.writing = groups["writing"].first / groups["writing"].second;
    out.depth = groups["depth"].first / groups["depth"].second;
    validate(out);
    return out;
}

// ------------------------------------------------------------- statistics

Dispersion coefficient_of_variation(const std::vector<double>& samples, StdConvention convention) {
    if (samples.size() < 2) throw InvalidInputError("coefficient of variation needs at least two samples");
    const double n = static_cast<double>(samples.size());
    Dispersion d;
    for (double x : samples) d.mean += x;
    d.mean /= n;
    double ss = 0;
    for (double x : samples) ss += (x - d.mean) * (x - d.mean);
    d.std = std::sqrt(ss / (convention == StdConvention::Sample ? n - 1 : n));
    const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
    d.range = *hi - *lo;
    for (double x : samples) d.max_abs_dev = std::max(d.max_abs_dev, std::abs(x - d.mean));
    if (d.mean == 0) throw EvaluationError("coefficient of variation is undefined for a zero mean");
    d.cv_percent = 100.0 * d.std / d.mean;
    return d;
}

double cohens_kappa(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.size() != b.size())
        throw InvalidInputError("label sequences differ in length (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
    if (a.empty()) throw InvalidInputError("label sequences are empty");
    const double n = static_cast<double>(a.size());
    std::map<std::string, double> ca, cb;
    double agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ca[a[i]] += 1;
        cb[b[i]] += 1;
        if (a[i] == b[i]) agree += 1;
    }
    const double po = agree / n;
    double pe = 0;
    for (const auto& [label, count] : ca)
        if (auto it = cb.find(label); it != cb.end()) pe += (count / n) * (it->second / n);
    if (pe >= 1.0) return 1.0;
    return (po - pe) / (1.0 - pe);
}

RatingMatrix RatingMatrix::from_labels(const std::vector<std::vector<std::string>>& labels,
                                       std::vector<std::string> categories) {
    const bool declared = !categories.empty();
    if (!declared) {
        std::set<std::string> seen;
        for (const auto& row : labels) seen.insert(row.begin(), row.end());
        categories.assign(seen.begin(), seen.end());
    }
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < categories.size(); ++i) index[categories[i]] = i;

    RatingMatrix m;
    m.categories = categories;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!labels.empty() && labels[i].size() != labels[0].size())
            throw InvalidInputError("item " + std::to_string(i) + " has " + std::to_string(labels[i].size()) +
                                    " labels, expected " + std::to_string(labels[0].size()));
        std::vector<int> row(categories.size(), 0);
        for (const auto& l : labels[i]) {
            auto it = index.find(l);
            if (it == index.end()) throw InvalidInputError("label '" + l + "' is not a declared category");
            ++row[it->second];
        }
        m.counts.push_back(std::move(row));
    }
    return m;
}

double fleiss_kappa(const RatingMatrix& m) {
    if (m.counts.empty()) throw InvalidInputError("rating matrix has no items");
    long raters = -1;
    for (std::size_t i = 0; i < m.counts.size(); ++i) {
        const auto& row = m.counts[i];
        if (row.size() != m.categories.size())
            throw InvalidInputError("item " + std::to_string(i) + " does not match the category list");
        long sum = 0;
        for (int c : row) {
            if (c < 0) throw InvalidInputError("negative count at item " + std::to_string(i));
            sum += c;
        }
        if (raters < 0) raters = sum;
        if (sum != raters)
            throw InvalidInputError("item " + std::to_string(i) + " has " + std::to_string(sum) +
                                    " ratings, expected " + std::to_string(raters));
    }
    if (raters < 2) throw InvalidInputError("fleiss kappa needs at least two raters per item");

    const double n = static_cast<double>(raters);
    const double N = static_cast<double>(m.counts.size());
    double p_bar = 0;
    std::vector<double> p(m.categories.size(), 0.0);
    for (const auto& row : m.counts) {
        double sq = 0;
        for (std::size_t c = 0; c < row.size(); ++c) {
            sq += static_cast<double>(row[c]) * row[c];
            p[c] += row[c];
        }
        p_bar += (sq - n) / (n * (n - 1));
    }
    p_bar /= N;
    double pe = 0;
    for (double& pc : p) {
        pc /= N * n;
        pe += pc * pc;
    }
    if (pe >= 1.0) {
        if (p_bar >= 1.0) return 1.0;
        throw EvaluationError("fleiss kappa is undefined: chance agreement is 1 but observed agreement is not");
    }
    return (p_bar - pe) / (1.0 - pe);
}

// -------------------------------------------------------------- backends

std::string_view to_string(PremiseSource p) {
    switch (p) {
        case PremiseSource::Abstract: return "abstract";
        case PremiseSource::Keynote: return "keynote";
        case PremiseSource::Tldr: return "tldr";
    }
    return "abstract";
}

PremiseSource premise_source_from_string(std::string_view t) {
    const std::string s = text::to_lower(t);
    if (s == "abstract") return PremiseSource::Abstract;
    if (s == "keynote") return PremiseSource::Keynote;
    if (s == "tldr") return PremiseSource::Tldr;
    throw ConfigError("unknown premise source '" + std::string(t) + "'");
}

std::map<std::string, Premise> build_premises(const std::map<PaperId, PaperRecord>& papers,
                                              const std::map<PaperId, Keynote>& keynotes, PremiseSource source) {
    std::map<std::string, Premise> out;
    for (const auto& [id, p] : papers) {
        Premise pr{id.canonical(), p.title, ""};
        const std::string& first = source == PremiseSource::Tldr ? p.tldr : p.abstract;
        const std::string& second = source == PremiseSource::Tldr ? p.abstract : p.tldr;
        if (source == PremiseSource::Keynote) {
            if (auto k = keynotes.find(id); k != keynotes.end()) {
                for (const auto& [name, body] : k->second.sections)
                    if (!body.empty()) pr.text += name + ": " + body + "\n";
            }
        }
        if (pr.text.empty()) pr.text = !first.empty() ? first : second;
        out[id.canonical()] = std::move(pr);
    }
    return out;
}

namespace {

constexpr std::string_view kNliInstructions =
    "Decide whether the cited sources, taken together, entail the claim. A claim is entailed when every "
    "factual statement in it is supported by the source texts. Reply with JSON only: {\"entailed\": true} or "
    "{\"entailed\": false}.";

std::size_t prompt_budget(const StageContext& ctx, int max_tokens) {
    const auto max_out = static_cast<std::size_t>(max_tokens);
    const std::size_t window = ctx.gateway.profile().context_window;
    return window > max_out + 512 ? window - max_out - 512 : 0;
}

}  // namespace

bool GatewayNli::entails(const std::string& claim, const std::vector<Premise>& premises) {
    std::vector<Premise> ps = premises;
    auto build = [&] {
        json items = json::array();
        for (const auto& p : ps) items.push_back({{"paper_id", p.paper_id}, {"title", p.title}, {"text", p.text}});
        return llm::render_prompt(kNliInstructions, {{"claim", claim}, {"sources", items}});
    };
    const std::size_t budget = prompt_budget(ctx_, cfg_.max_output_tokens);
    std::string prompt = build();
    for (int i = 0; i < 24 && llm::estimate_tokens(prompt) > budget; ++i) {
        for (auto& p : ps) p.text = std::string(text::utf8_prefix(p.text, text::utf8_length(p.text) / 2));
        prompt = build();
        if (i == 0) ctx_.log.record(events::kCompression, kStage, "nli sources shortened for: " + claim.substr(0, 60));
    }
    llm::StructuredCall call{{prompt, cfg_.temperature, cfg_.max_output_tokens, "evaluation.nli"},
                             cfg_.max_retries, kStage, nullptr, &ctx_.log};
    return llm::ask_structured<bool>(ctx_.gateway, call, [](const std::string& reply) {
        const json j = llm::parse_json_reply(reply);
        if (!j.is_object() || !j.contains("entailed") || !j.at("entailed").is_boolean())
            throw OutputError("reply must be an object with a boolean 'entailed'");
        return j.at("entailed").get<bool>();
    });
}

ContentScores parse_judge_reply(const json& j) {
    if (!j.is_object() || !j.contains("scores") || !j.at("scores").is_object())
        throw OutputError("reply must be an object with a 'scores' object");
    const auto& scores = j.at("scores");
    std::map<std::string, double> sub;
    for (const auto& d : kRubric) {
        const std::string key(d.key);
        if (!scores.contains(key)) throw OutputError("missing score for '" + key + "'");
        if (!scores.at(key).is_number()) throw OutputError("score for '" + key + "' is not a number");
        const double v = scores.at(key).get<double>();
        if (!std::isfinite(v) || v < 1 || v > 10)
            throw OutputError("score for '" + key + "' is outside 1..10");
        sub[key] = v;
    }
    return scores_from_subdimensions(sub);
}

ContentScores GatewayJudge::score(const std::string& survey_text, const std::string& topic) {
    std::string instructions =
        "You are an expert reviewer of academic surveys. Score the survey on each rubric dimension from 1 "
        "(poor) to 10 (excellent).\n";
    for (const auto& d : kRubric)
        instructions += "- " + std::string(d.key) + ": " + std::string(d.label) + "\n";
    instructions += cfg_.explanations
                        ? "Reply with JSON only: {\"scores\": {dimension: number}, \"explanations\": {dimension: text}}."
                        : "Reply with JSON only: {\"scores\": {dimension: number}}. Give no explanations.";

    std::string survey = survey_text;
    auto build = [&] { return llm::render_prompt(instructions, {{"topic", topic}, {"survey", survey}}); };
    const std::size_t budget = prompt_budget(ctx_, cfg_.max_output_tokens);
    std::string prompt = build();
    for (int i = 0; i < 24 && llm::estimate_tokens(prompt) > budget; ++i) {
        survey = std::string(text::utf8_prefix(survey, text::utf8_length(survey) / 2));
        prompt = build();
        if (i == 0) ctx_.log.record(events::kCompression, kStage, "survey truncated for the judge");
    }
    if (llm::estimate_tokens(prompt) > budget) throw BudgetError("judge prompt does not fit the context window");

    llm::StructuredCall call{{prompt, cfg_.temperature, cfg_.max_output_tokens, "evaluation.judge"},
                             cfg_.max_retries, kStage, nullptr, &ctx_.log};
    return llm::ask_structured<ContentScores>(ctx_.gateway, call, [](const std::string& reply) {
        return parse_judge_reply(llm::parse_json_reply(reply));
    });
}

NliVerdictTable collect_verdicts(const std::vector<ClaimRecord>& claims, const std::map<std::string, Premise>& premises,
                                 NliBackend& nli, std::size_t workers) {
    struct Job {
        int claim_id;
        const std::string* text;
        RefSet refs;
    };
    auto run = [&](const std::vector<Job>& jobs) {
        return parallel_map(jobs, workers, [&](const Job& job) {
            std::vector<Premise> ps;
            for (const auto& r : job.refs) {
                auto it = premises.find(r);
                ps.push_back(it != premises.end() ? it->second : Premise{r, "", ""});
            }
            return nli.entails(*job.text, ps);
        });
    };

    NliVerdictTable table;
    std::vector<Job> full;
    for (const auto& c : claims) full.push_back({c.claim_id, &c.text, make_ref_set(c.refs)});
    const auto full_verdicts = run(full);
    for (std::size_t i = 0; i < full.size(); ++i) table.set(full[i].claim_id, full[i].refs, full_verdicts[i]);

    std::vector<Job> rest;
    for (std::size_t i = 0; i < claims.size(); ++i) {
        if (!full_verdicts[i]) continue;
        for (auto& s : required_subsets(claims[i]))
            if (!table.find(claims[i].claim_id, s)) rest.push_back({claims[i].claim_id, &claims[i].text, std::move(s)});
    }
    const auto rest_verdicts = run(rest);
    for (std::size_t i = 0; i < rest.size(); ++i) table.set(rest[i].claim_id, rest[i].refs, rest_verdicts[i]);
    return table;
}

// ---------------------------------------------------------------- report

bool EvaluationReport::complete() const {
    return recall.error.empty() && precision.error.empty() && valid_ratio.error.empty() && total.error.empty();
}

EvaluationReport evaluate_survey(const SurveyInput& survey, const std::map<std::string, Premise>& premises,
                                 const std::set<std::string>& universe, NliBackend& nli, Judge* judge,
                                 const EvaluationOptions& opts) {
    EvaluationReport r;
    r.system = survey.system;

    const auto numbers = reference_numbers(survey.citation_map);
    const Ratio valid = valid_citation_ratio(survey.text, numbers, universe);
    r.citations = valid.denominator;
    r.valid_ratio.value = valid.value;
    r.valid_ratio.warning = valid.warning;
    if (valid.warning) r.warnings.push_back("no citations found; valid citation ratio defaulted to 1");

    const auto claims = extract_claims(survey.text, survey.citation_map);
    r.claims = claims.size();
    try {
        const auto table = collect_verdicts(claims, premises, nli, opts.workers);
        const Ratio rec = citation_recall(claims, table);
        const Ratio pre = citation_precision(claims, table);
        r.recall = {rec.value, rec.warning, ""};
        r.precision = {pre.value, pre.warning, ""};
        if (rec.warning) r.warnings.push_back("no citation-bearing claims; recall defaulted to 1");
        if (pre.warning) r.warnings.push_back("no claim references; precision defaulted to 1");
    } catch (const Error& e) {
        r.recall.error = std::string("nli: ") + e.what();
        r.precision.error = r.recall.error;
    }

    if (judge && opts.judge_content) {
        try {
            ContentScores cs = judge->score(survey.text, survey.topic);
            r.total.value = weighted_content_score(cs);
            r.content = std::move(cs);
        } catch (const Error& e) {
            r.total.error = std::string("judge: ") + e.what();
        }
    }
    return r;
}

json to_json(const EvaluationReport& r) {
    auto metric = [](const MetricValue& m) {
        json j = {{"value", m.value ? json(*m.value) : json(nullptr)}, {"warning", m.warning}};
        if (!m.error.empty()) j["error"] = m.error;
        return j;
    };
    json j = {{"system", r.system},
              {"claims", r.claims},
              {"citations", r.citations},
              {"recall", metric(r.recall)},
              {"precision", metric(r.precision)},
              {"valid_citation_ratio", metric(r.valid_ratio)},
              {"total", metric(r.total)},
              {"warnings", r.warnings}};
    if (r.content)
        j["content"] = {{"core", r.content->core},
                        {"writing", r.content->writing},
                        {"depth", r.content->depth},
                        {"sub_scores", r.content->sub_scores}};
    else
        j["content"] = nullptr;
    return j;
}

std::string report_tsv(const std::vector<EvaluationReport>& reports) {
    auto cell = [](const MetricValue& m) { return m.value ? fmt3(*m.value) : (m.error.empty() ? "-" : "ERR"); };
    std::string out = "system\tcore\twriting\tdepth\ttotal\tclaims\tcitations\trecall\tprecision\tvalid_ratio\n";
    for (const auto& r : reports) {
        out += r.system + "\t";
        if (r.content)
            out += fmt3(r.content->core) + "\t" + fmt3(r.content->writing) + "\t" + fmt3(r.content->depth) + "\t";
        else
            out += "-\t-\t-\t";
        out += cell(r.total) + "\t" + std::to_string(r.claims) + "\t" + std::to_string(r.citations) + "\t" +
               cell(r.recall) + "\t" + cell(r.precision) + "\t" + cell(r.valid_ratio) + "\n";
    }
    return out;
}

void write_reports(const std::vector<EvaluationReport>& reports, const std::filesystem::path& dir) {
    json all = json::array();
    for (const auto& r : reports) all.push_back(to_json(r));
    write_file_atomic(dir / "report.tsv", report_tsv(reports));
    write_file_atomic(dir / "report.json", all.dump(2) + "\n");
}

}  // namespace litsynth::evaluation
