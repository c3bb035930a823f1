#include "litsynth/refinement/refinement.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "litsynth/core/citation_index.hpp"
#include "litsynth/core/error.hpp"
#include "litsynth/core/parallel.hpp"
#include "litsynth/core/substrate.hpp"
#include "litsynth/core/text.hpp"
#include "litsynth/llm/structured.hpp"
#include "litsynth/llm/tokens.hpp"

namespace litsynth::refinement {

using nlohmann::json;
using writing::NodePath;

std::string_view to_string(Skill s) {
    switch (s) {
        case Skill::ReadKeynotes: return "read_keynotes";
        case Skill::Review: return "review";
        case Skill::Revise: return "revise";
        case Skill::Finish: return "finish";
    }
    return "review";
}

Skill skill_from_string(std::string_view t) {
    const auto lower = text::to_lower(text::trim(t));
    if (lower == "read_keynotes" || lower == "read") return Skill::ReadKeynotes;
    if (lower == "review") return Skill::Review;
    if (lower == "revise") return Skill::Revise;
    if (lower == "finish") return Skill::Finish;
    throw InvalidInputError("unknown skill '" + std::string(t) + "'");
}

// ---- memory ----

void RefinementMemory::add(MemoryEvent e) {
    if (!events_.empty() && e.round < events_.back().round)
        throw InvalidInputError("memory events must be added in round order");
    events_.push_back(std::move(e));
    fold();
}

std::string RefinementMemory::render_events(std::size_t from) const {
    std::string out;
    for (std::size_t i = from; i < events_.size(); ++i) {
        const auto& e = events_[i];
        out += "round " + std::to_string(e.round) + " | " + e.skill + " | " + e.summary;
        if (e.score_delta) {
            std::ostringstream d;
            d.setf(std::ios::showpos);
            d.precision(3);
            d << *e.score_delta;
            out += " | score change " + d.str();
        }
        out += "\n";
    }
    return out;
}

std::string RefinementMemory::render() const {
    if (compressed_.empty()) return render_events(folded_);
    return compressed_ + "\n" + render_events(folded_);
}

void RefinementMemory::fold() {
    if (llm::estimate_tokens(render()) <= threshold_) return;
    const int latest = events_.back().round;
    std::size_t target = folded_;
    while (target < events_.size() && events_[target].round < latest &&
           llm::estimate_tokens(render_events(target)) > threshold_ / 2)
        ++target;
    if (target == folded_) return;
    folded_ = target;
    ++compressions_;
    std::map<std::string, int> counts;
    for (std::size_t i = 0; i < folded_; ++i) ++counts[events_[i].skill];
    compressed_ = "Digest of rounds 1-" + std::to_string(events_[folded_ - 1].round) + ":";
    for (const auto& [skill, n] : counts) compressed_ += " " + skill + " x" + std::to_string(n) + ";";
    for (std::size_t i = folded_; i-- > 0;) {
        if (events_[i].skill == "review") {
            compressed_ += " last earlier review: " + std::string(text::utf8_prefix(events_[i].summary, 200));
            break;
        }
    }
}

// ---- config ----

const LevelConfig& RefinementConfig::level(Granularity g) const {
    switch (g) {
        case Granularity::Section: return section;
        case Granularity::Subsection: return subsection;
        case Granularity::Survey: return survey;
    }
    return survey;
}

LevelConfig& RefinementConfig::level(Granularity g) {
    return const_cast<LevelConfig&>(static_cast<const RefinementConfig&>(*this).level(g));
}

void RefinementConfig::validate() const {
    for (auto g : {Granularity::Section, Granularity::Subsection, Granularity::Survey})
        if (level(g).max_rounds < 1) throw ConfigError("refinement max_rounds must be at least 1");
    std::set<Granularity> seen;
    for (auto g : order)
        if (!seen.insert(g).second) throw ConfigError("refinement order lists a level twice");
    if (max_retries < 0) throw ConfigError("max_retries must be non-negative");
    if (max_plan_steps == 0) throw ConfigError("max_plan_steps must be positive");
    if (revision_attempts < 1) throw ConfigError("revision_attempts must be at least 1");
}

// ---- review ----

double ReviewVerdict::mean() const {
    if (scores.empty()) return 0.0;
    double sum = 0;
    for (const auto& [k, v] : scores) sum += v;
    return sum / static_cast<double>(scores.size());
}

ReviewVerdict parse_review(const json& j) {
    if (!j.is_object() || !j.contains("scores") || !j["scores"].is_object() || j["scores"].empty())
        throw OutputError("review needs a non-empty 'scores' object");
    ReviewVerdict v;
    for (const auto& [dim, score] : j["scores"].items()) {
        if (!score.is_number()) throw OutputError("score for '" + dim + "' is not a number");
        const double x = score.get<double>();
        if (x < 0.0 || x > 10.0) throw OutputError("score for '" + dim + "' is outside 0-10");
        v.scores[dim] = x;
    }
    if (j.contains("suggestions")) {
        if (!j["suggestions"].is_array()) throw OutputError("'suggestions' must be a list");
        for (const auto& s : j["suggestions"]) v.suggestions.push_back(s.is_string() ? s.get<std::string>() : s.dump());
    }
    if (j.contains("satisfactory")) {
        if (!j["satisfactory"].is_boolean()) throw OutputError("'satisfactory' must be true or false");
        v.satisfactory = j["satisfactory"].get<bool>();
    }
    return v;
}

std::optional<double> score_delta(const ReviewVerdict* previous, const ReviewVerdict& current) {
    if (!previous || previous->scores.size() != current.scores.size()) return std::nullopt;
    for (const auto& [k, v] : current.scores)
        if (!previous->scores.count(k)) return std::nullopt;
    return current.mean() - previous->mean();
}

// ---- evidence ----

namespace {

void shrink_strings(json& j) {
    if (j.is_string()) {
        const auto& s = j.get_ref<const std::string&>();
        const auto len = text::utf8_length(s);
        if (len > 32) j = std::string(text::utf8_prefix(s, len / 2));
    } else if (j.is_array() || j.is_object()) {
        for (auto& v : j) shrink_strings(v);
    }
}

}  // namespace

EvidenceBundle read_keynotes_skill(const std::vector<std::string>& ids, const KnowledgeSubstrate& s,
                                   std::size_t budget, bool include_code_reports, StageContext& ctx) {
    EvidenceBundle b;
    std::set<std::string> seen;
    for (const auto& raw : ids) {
        const auto id = text::trim(raw);
        if (!seen.insert(id).second) continue;
        const auto* paper = s.find_paper(id);
        if (!paper) {
            b.skipped.push_back(id);
            ctx.log.record(events::kMonitor, kStage, "read_keynotes: unknown paper '" + id + "' skipped");
            continue;
        }
        json item{{"paper_id", paper->id.canonical()}, {"title", paper->title}};
        if (auto k = s.keynotes.find(paper->id); k != s.keynotes.end()) {
            for (const auto& [field, value] : k->second.sections) item[field] = value;
        } else {
            item["abstract"] = paper->abstract;
        }
        if (include_code_reports)
            if (auto c = s.code_reports.find(paper->id); c != s.code_reports.end() && !c->second.code_report.empty())
                item["code_report"] = c->second.code_report;
        b.items.push_back(std::move(item));
    }
    int halvings = 0;
    while (!b.items.empty() && llm::estimate_tokens(b.items.dump()) > budget) {
        const auto before = b.items.dump().size();
        shrink_strings(b.items);
        ++halvings;
        if (b.items.dump().size() == before) b.items.erase(b.items.size() - 1);
    }
    if (halvings > 0) {
        b.compressed = true;
        ctx.log.record(events::kCompression, kStage,
                       "keynote bundle shrunk " + std::to_string(halvings) + " times to fit " + std::to_string(budget) +
                           " tokens");
    }
    return b;
}

// ---- targets ----

namespace {

const OutlineNode& node_at(const KnowledgeSubstrate& s, const NodePath& p) {
    const auto* n = writing::find_node(*s.outline, p);
    if (!n) throw PreconditionError("no outline node '" + join_path(p) + "'");
    return *n;
}

std::set<PaperId> scope_of(const KnowledgeSubstrate& s, const NodePath& p) {
    const auto& n = node_at(s, p);
    return n.is_leaf() ? n.assigned_papers : writing::section_scope(n);
}

const DraftUnit& draft_at(const KnowledgeSubstrate& s, const NodePath& p) {
    auto it = std::find_if(s.drafts.begin(), s.drafts.end(), [&](const DraftUnit& d) { return d.node_path == p; });
    if (it == s.drafts.end()) throw PreconditionError("no draft for '" + join_path(p) + "'");
    return *it;
}

std::string anchor(const NodePath& p) { return std::string(p.size() + 1, '#') + " " + p.back(); }

std::string level_name(Granularity g) { return std::string(to_string(g)); }

std::string join_parts(const Target& t, const std::vector<std::string>& parts) {
    if (t.paths.size() == 1) return parts.at(0);
    std::string out;
    for (std::size_t i = 0; i < t.paths.size(); ++i) out += anchor(t.paths[i]) + "\n\n" + parts.at(i) + "\n\n";
    return out;
}

}  // namespace

std::vector<Target> targets(const KnowledgeSubstrate& s, Granularity g) {
    if (!s.outline) throw PreconditionError("refinement needs an outline");
    std::vector<Target> out;
    const auto paths = writing::node_paths(*s.outline);
    switch (g) {
        case Granularity::Subsection:
            for (const auto& p : paths)
                if (node_at(s, p).is_leaf()) out.push_back({join_path(p), g, {p}});
            break;
        case Granularity::Section:
            for (const auto& sec : s.outline->children) {
                Target t{sec.title, g, {{sec.title}}};
                for (const auto& c : sec.children) t.paths.push_back({sec.title, c.title});
                out.push_back(std::move(t));
            }
            break;
        case Granularity::Survey:
            out.push_back({s.outline->title, g, paths});
            break;
    }
    return out;
}

std::string render_target(const Target& t, const KnowledgeSubstrate& s) {
    std::vector<std::string> parts;
    for (const auto& p : t.paths) parts.push_back(draft_at(s, p).text);
    return join_parts(t, parts);
}

std::vector<std::string> split_revision(const Target& t, const std::string& revised, const KnowledgeSubstrate& s,
                                        CitationStyle style) {
    const std::string body = text::strip_code_fence(revised);
    std::vector<std::string> parts;
    if (t.paths.size() == 1) {
        parts.push_back(body);
    } else {
        std::vector<std::string> anchors;
        std::string current;
        bool started = false;
        for (const auto& line : text::split_lines(body)) {
            const auto trimmed = text::trim(line);
            if (!trimmed.empty() && trimmed[0] == '#') {
                if (started) parts.push_back(text::trim(current));
                anchors.push_back(trimmed);
                current.clear();
                started = true;
                continue;
            }
            if (!started && !trimmed.empty()) throw OutputError("text appears before the first '#' anchor line");
            current += line + "\n";
        }
        if (started) parts.push_back(text::trim(current));
        std::vector<std::string> expected;
        for (const auto& p : t.paths) expected.push_back(anchor(p));
        if (anchors != expected)
            throw OutputError("the '#' anchor lines were changed; keep every anchor line exactly as given and in order");
    }

    const CitationIndex index(s.papers);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto name = join_path(t.paths[i]);
        if (parts[i].empty()) throw OutputError("the text for '" + name + "' is empty");
        if (parts[i].find('#') != std::string::npos)
            throw OutputError("the text for '" + name + "' contains '#' outside the anchor lines");
        const auto v = writing::verify_citations(parts[i], scope_of(s, t.paths[i]), style, index);
        if (!v.ok()) {
            std::string keys;
            for (const auto& k : v.violations) keys += (keys.empty() ? "<" : ", <") + k + ">";
            throw OutputError("the text for '" + name + "' cites " + keys +
                              ", which is outside the evidence of that part; cite only listed papers");
        }
    }
    return parts;
}

// ---- loop ----

namespace {

const char* kPlannerPrompt =
    "You are the planning agent of a survey refinement system. Inspect the draft, the outline, the memory of\n"
    "earlier rounds and the available evidence, then plan the next steps. Skills:\n"
    "- read_keynotes: fetch keynotes of papers by id (`paper_ids`) before revising claims about them;\n"
    "- review: score the draft and collect improvement suggestions;\n"
    "- revise: edit the draft following `instructions`;\n"
    "- finish: stop when the draft is satisfactory.\n"
    "Return a short sub-plan strictly as JSON:\n"
    "{\"plan\": [{\"skill\": \"review\"}, {\"skill\": \"read_keynotes\", \"paper_ids\": [\"...\"]},\n"
    "  {\"skill\": \"revise\", \"instructions\": \"...\"}, {\"skill\": \"finish\"}]}";

const char* kReviewPrompt =
    "You are the reviewer of a survey refinement system. Assess the draft for critical analysis depth, logical\n"
    "coherence, academic rigor and readability, and check that every claim is supported by the cited papers.\n"
    "Score each dimension from 0 to 10, list concrete suggestions, and say whether the draft is satisfactory.\n"
    "Return strictly JSON:\n"
    "{\"scores\": {\"critical_analysis\": 0, \"logical_coherence\": 0, \"academic_rigor\": 0, \"readability\": 0},\n"
    " \"suggestions\": [\"...\"], \"satisfactory\": false}";

const char* kRevisePrompt =
    "You are the reviser of a survey refinement system. Rewrite the draft following the instructions and the\n"
    "review suggestions, using the evidence where it helps. Rules:\n"
    "- Only cite papers listed in `papers`, using the format in `citation_format`.\n"
    "- Keep every '#' anchor line of the draft exactly as it is and in the same order; add no other '#'.\n"
    "- Return only the revised draft text.";

struct Loop {
    const Target& t;
    const KnowledgeSubstrate& s;
    const RefinementConfig& cfg;
    const LevelConfig& level;
    StageContext& ctx;
    RefineResult r;
    std::string text;
    std::optional<ReviewVerdict> last_review;
    json evidence = json::array();

    Loop(const Target& target, const KnowledgeSubstrate& sub, const RefinementConfig& c, StageContext& cx)
        : t(target), s(sub), cfg(c), level(c.level(target.granularity)), ctx(cx) {
        r.name = t.name;
        r.granularity = t.granularity;
        r.memory = RefinementMemory(cfg.memory_threshold_tokens);
        text = render_target(t, s);
    }

    std::string tag(const char* role) const { return "refinement." + level_name(t.granularity) + "." + role; }

    json papers() const {
        std::set<PaperId> all;
        for (const auto& p : t.paths) {
            const auto sc = scope_of(s, p);
            all.insert(sc.begin(), sc.end());
        }
        json out = json::array();
        for (const auto& id : all) {
            const auto* p = s.find_paper(id);
            out.push_back({{"paper_id", id.canonical()}, {"title", p ? p->title : ""}});
        }
        return out;
    }

    json base_input(int round) const {
        return {{"granularity", level_name(t.granularity)},
                {"unit", t.name},
                {"round", round},
                {"max_rounds", level.max_rounds},
                {"draft", text},
                {"outline", writing::outline_prompt_json(*s.outline)},
                {"memory", r.memory.render()}};
    }

    llm::StructuredCall call(const std::string& prompt, const std::string& tg, double temperature, int retries) const {
        return {{prompt, temperature, cfg.max_output_tokens, tg}, retries, kStage, nullptr, &ctx.log};
    }

    void remember(int round, Skill skill, std::string summary, std::optional<double> delta = std::nullopt) {
        r.memory.add({round, std::string(to_string(skill)), std::move(summary), delta});
        ++r.skill_calls;
    }

    std::vector<SkillInvocation> plan(int round) {
        json input = base_input(round);
        input["papers"] = papers();
        const auto prompt = llm::render_prompt(kPlannerPrompt, input);
        return llm::ask_structured<std::vector<SkillInvocation>>(
            ctx.gateway, call(prompt, tag("planner"), level.planner_temperature, cfg.max_retries),
            [](const std::string& reply) {
                const json j = llm::parse_json_reply(reply);
                const json& list = j.is_object() && j.contains("plan") ? j["plan"] : j;
                const json steps = list.is_object() ? json::array({list}) : list;
                if (!steps.is_array() || steps.empty()) throw OutputError("the plan must be a non-empty list of steps");
                std::vector<SkillInvocation> out;
                for (const auto& step : steps) {
                    if (!step.is_object() || !step.contains("skill") || !step["skill"].is_string())
                        throw OutputError("every plan step needs a string 'skill'");
                    SkillInvocation inv;
                    try {
                        inv.skill = skill_from_string(step["skill"].get<std::string>());
                    } catch (const InvalidInputError& e) {
                        throw OutputError(e.what());
                    }
                    if (inv.skill == Skill::ReadKeynotes) {
                        if (!step.contains("paper_ids") || !step["paper_ids"].is_array() || step["paper_ids"].empty())
                            throw OutputError("read_keynotes needs a non-empty 'paper_ids' list");
                        for (const auto& id : step["paper_ids"])
                            inv.paper_ids.push_back(id.is_string() ? id.get<std::string>() : id.dump());
                    }
                    if (inv.skill == Skill::Revise && step.contains("instructions") && step["instructions"].is_string())
                        inv.instructions = step["instructions"].get<std::string>();
                    out.push_back(std::move(inv));
                }
                return out;
            });
    }

    ReviewVerdict review(int round) {
        const auto prompt = llm::render_prompt(kReviewPrompt, base_input(round));
        auto v = llm::ask_structured<ReviewVerdict>(
            ctx.gateway, call(prompt, tag("review"), level.reviewer_temperature, cfg.max_retries),
            [](const std::string& reply) { return parse_review(llm::parse_json_reply(reply)); });
        const auto delta = score_delta(last_review ? &*last_review : nullptr, v);
        std::ostringstream summary;
        summary.precision(3);
        summary << "mean score " << v.mean() << (v.satisfactory ? ", satisfactory" : "");
        for (const auto& sgg : v.suggestions) summary << "; " << sgg;
        remember(round, Skill::Review, summary.str(), delta);
        last_review = v;
        return v;
    }

    void read(int round, const std::vector<std::string>& ids) {
        auto b = read_keynotes_skill(ids, s, cfg.evidence_budget_tokens, cfg.include_code_reports, ctx);
        evidence = b.items;
        std::string summary = "read " + std::to_string(b.items.size()) + " keynotes";
        if (!b.skipped.empty()) summary += ", skipped unknown " + text::join(b.skipped, ", ");
        if (b.compressed) summary += ", shrunk to budget";
        remember(round, Skill::ReadKeynotes, summary);
    }

    void revise(int round, const std::string& instructions) {
        json input = base_input(round);
        input["instructions"] = instructions.empty() ? "Apply the latest review suggestions." : instructions;
        input["suggestions"] = last_review ? json(last_review->suggestions) : json::array();
        input["evidence"] = evidence;
        input["papers"] = papers();
        input["citation_format"] = cfg.citation_style == CitationStyle::TitleMark ? "<paper title>" : "<paper id>";
        const auto prompt = llm::render_prompt(kRevisePrompt, input);
        try {
            const auto reply = llm::ask_text(
                ctx.gateway, call(prompt, tag("revise"), level.reviser_temperature, cfg.revision_attempts - 1),
                [&](const std::string& rep) { split_revision(t, rep, s, cfg.citation_style); });
            const auto parts = split_revision(t, reply, s, cfg.citation_style);
            r.texts = parts;
            text = join_parts(t, parts);
            remember(round, Skill::Revise, "revision accepted (" + std::to_string(writing::prose_words(text)) + " words)");
        } catch (const OutputError& e) {
            ++r.rejected_revisions;
            ctx.log.record(events::kRejection, kStage, t.name + ": revision rejected in round " + std::to_string(round));
            remember(round, Skill::Revise, std::string("revision rejected, previous text kept: ") + e.what());
        }
    }

    void init_texts() {
        for (const auto& p : t.paths) r.texts.push_back(draft_at(s, p).text);
    }
};

template <class Body>
RefineResult guarded(const Target& t, const KnowledgeSubstrate& s, const RefinementConfig& cfg, StageContext& ctx,
                     Body body) {
    Loop loop(t, s, cfg, ctx);
    loop.init_texts();
    try {
        body(loop);
    } catch (const BudgetError& e) {
        loop.r.skipped = true;
        ctx.log.record(events::kSkip, kStage, t.name + ": refinement stopped, over the context budget: " + e.what());
    }
    return std::move(loop.r);
}

}  // namespace

RefineResult refine(const Target& t, const KnowledgeSubstrate& s, const RefinementConfig& cfg, StageContext& ctx) {
    return guarded(t, s, cfg, ctx, [&](Loop& loop) {
        for (int round = 1; round <= loop.level.max_rounds && !loop.r.finished; ++round) {
            loop.r.rounds = round;
            auto steps = loop.plan(round);
            if (steps.size() > cfg.max_plan_steps) steps.resize(cfg.max_plan_steps);
            for (const auto& step : steps) {
                if (step.skill == Skill::Finish) {
                    loop.remember(round, Skill::Finish, "planner judged the draft satisfactory");
                    loop.r.finished = true;
                    break;
                }
                if (step.skill == Skill::Review) loop.review(round);
                if (step.skill == Skill::ReadKeynotes) loop.read(round, step.paper_ids);
                if (step.skill == Skill::Revise) loop.revise(round, step.instructions);
            }
        }
        if (!loop.r.finished)
            ctx.log.record(events::kInfo, kStage, t.name + ": stopped after " + std::to_string(loop.r.rounds) + " rounds");
    });
}

RefineResult skill_loop_fallback(const Target& t, const KnowledgeSubstrate& s, int rounds,
                                 const RefinementConfig& cfg, StageContext& ctx) {
    if (rounds < 1) throw PreconditionError("skill loop needs at least one round");
    return guarded(t, s, cfg, ctx, [&](Loop& loop) {
        for (int round = 1; round <= rounds; ++round) {
            loop.r.rounds = round;
            const auto v = loop.review(round);
            if (v.satisfactory) {
                loop.r.finished = true;
                break;
            }
            loop.revise(round, "");
        }
    });
}

void apply_result(KnowledgeSubstrate& s, const Target& t, const RefineResult& r, CitationStyle style) {
    const CitationIndex index(s.papers);
    for (std::size_t i = 0; i < t.paths.size() && i < r.texts.size(); ++i) {
        auto it = std::find_if(s.drafts.begin(), s.drafts.end(),
                               [&](const DraftUnit& d) { return d.node_path == t.paths[i]; });
        if (it == s.drafts.end()) continue;
        it->text = r.texts[i];
        it->citations = writing::verify_citations(it->text, scope_of(s, t.paths[i]), style, index).marks;
    }
}

std::vector<RefineResult> run_refinement(KnowledgeSubstrate& s, const RefinementConfig& cfg, StageContext& ctx) {
    cfg.validate();
    std::vector<RefineResult> all;
    for (auto g : cfg.order) {
        const auto& level = cfg.level(g);
        if (!level.enabled) continue;
        const auto ts = targets(s, g);
        auto results = parallel_map(ts, cfg.workers, [&](const Target& t) {
            return cfg.use_planner ? refine(t, s, cfg, ctx) : skill_loop_fallback(t, s, level.max_rounds, cfg, ctx);
        });
        for (std::size_t i = 0; i < ts.size(); ++i) {
            apply_result(s, ts[i], results[i], cfg.citation_style);
            for (const auto& e : results[i].memory.events())
                s.revision_log.push_back({"refinement." + level_name(g), e.skill,
                                          ts[i].name + " (round " + std::to_string(e.round) + "): " + e.summary});
            all.push_back(std::move(results[i]));
        }
        ctx.log.record(events::kInfo, kStage, level_name(g) + " level refined " + std::to_string(ts.size()) + " units");
    }
    return all;
}

std::string transcript(const RefineResult& r) {
    std::string out = "# Refinement of " + r.name + "\n\n";
    out += "level: " + level_name(r.granularity) + "\nrounds: " + std::to_string(r.rounds) +
           "\nfinished: " + (r.finished ? "yes" : "no") + "\nrejected revisions: " + std::to_string(r.rejected_revisions) +
           (r.skipped ? "\nskipped: over budget" : "") + "\n\n";
    for (const auto& e : r.memory.events()) {
        out += "- round " + std::to_string(e.round) + ", " + e.skill + ": " + e.summary;
        if (e.score_delta) out += " (score change " + std::to_string(*e.score_delta) + ")";
        out += "\n";
    }
    return out;
}

void write_transcripts(const std::vector<RefineResult>& results, const std::filesystem::path& dir) {
    for (std::size_t i = 0; i < results.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%03zu_%s.md", i + 1, level_name(results[i].granularity).c_str());
        write_file_atomic(dir / name, transcript(results[i]));
    }
}

}  // namespace litsynth::refinement
