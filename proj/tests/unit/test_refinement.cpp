#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "litsynth/core/error.hpp"
#include "litsynth/core/substrate.hpp"
#include "litsynth/core/text.hpp"
#include "litsynth/llm/tokens.hpp"
#include "litsynth/refinement/refinement.hpp"
#include "stage_rig.hpp"

using namespace litsynth;
using namespace litsynth::refinement;
using nlohmann::json;
using testutil::pid;
using writing::NodePath;

namespace {

std::string title_of(int i) { return "Paper " + std::to_string(i) + ": A Study"; }
std::string cite(int i) { return "<" + title_of(i) + ">"; }

std::set<PaperId> ids(std::initializer_list<int> ns) {
    std::set<PaperId> out;
    for (int n : ns) out.insert(pid("p" + std::to_string(n)));
    return out;
}

KnowledgeSubstrate substrate() {
    KnowledgeSubstrate s;
    s.topic = "survey generation";
    for (int i = 1; i <= 6; ++i) {
        const auto id = "p" + std::to_string(i);
        s.papers.emplace(pid(id), testutil::paper(id, title_of(i)));
        s.keynotes.emplace(pid(id), testutil::keynote(id, "tldr of " + id));
    }
    OutlineNode root{"Survey", "d", {}, {}};
    OutlineNode intro{"Introduction", "motivation", {}, ids({1, 2})};
    OutlineNode methods{"Methods", "designs", {}, {}};
    methods.children.push_back({"Planning", "planning", {}, ids({1, 3, 5})});
    methods.children.push_back({"Retrieval", "retrieval", {}, ids({2, 4, 6})});
    OutlineNode concl{"Conclusion", "summary", {}, ids({1, 6})};
    root.children = {intro, methods, concl};
    s.outline = root;
    s.drafts = {{{"Introduction"}, "Intro text " + cite(1) + ".", {}, Granularity::Section},
                {{"Methods"}, "Methods preamble " + cite(1) + " " + cite(4) + ".", {}, Granularity::Section},
                {{"Methods", "Planning"}, "Planning text " + cite(3) + ".", {}, Granularity::Subsection},
                {{"Methods", "Retrieval"}, "Retrieval text " + cite(6) + ".", {}, Granularity::Subsection},
                {{"Conclusion"}, "Closing text " + cite(6) + ".", {}, Granularity::Section}};
    return s;
}

Target planning_target() { return {"Methods / Planning", Granularity::Subsection, {{"Methods", "Planning"}}}; }

json review_json(double score, bool ok = false) {
    return {{"scores", {{"critical_analysis", score}, {"readability", score}}},
            {"suggestions", {"deepen the comparison"}},
            {"satisfactory", ok}};
}

json plan(std::initializer_list<const char*> skills) {
    json steps = json::array();
    for (const char* s : skills) steps.push_back({{"skill", s}});
    return {{"plan", steps}};
}

/// Reviser that keeps anchors and swaps one word, leaving citations intact.
void faithful_reviser(testutil::StageRig& rig, const std::string& level) {
    rig.json_responder("refinement." + level + ".revise", [](const json& in, const llm::CompletionRequest&) {
        auto d = in["draft"].get<std::string>();
        for (std::size_t pos; (pos = d.find(" text ")) != std::string::npos;) d.replace(pos, 6, " prose ");
        return d;
    });
}

}  // namespace

TEST_CASE("skill names round-trip") {
    for (auto s : {Skill::ReadKeynotes, Skill::Review, Skill::Revise, Skill::Finish})
        CHECK(skill_from_string(to_string(s)) == s);
    CHECK_THROWS_AS(skill_from_string("dance"), InvalidInputError);
}

TEST_CASE("config defaults follow the level table") {
    RefinementConfig cfg;
    CHECK(cfg.survey.max_rounds == 5);
    CHECK(cfg.section.max_rounds == 3);
    CHECK(cfg.subsection.max_rounds == 3);
    CHECK(cfg.section.planner_temperature == doctest::Approx(0.7));
    CHECK(cfg.section.reviewer_temperature == doctest::Approx(1.0));
    CHECK(cfg.section.reviser_temperature == doctest::Approx(0.5));
    CHECK(cfg.survey.reviewer_temperature == doctest::Approx(1.0));
    for (double t : {cfg.subsection.planner_temperature, cfg.subsection.reviewer_temperature,
                     cfg.subsection.reviser_temperature})
        CHECK(t == doctest::Approx(0.1));
    CHECK(cfg.order == std::vector<Granularity>{Granularity::Section, Granularity::Subsection, Granularity::Survey});
    CHECK_NOTHROW(cfg.validate());
    cfg.order.push_back(Granularity::Section);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("review, revise, finish gives three skill events and the reviser text") {
    testutil::StageRig rig;
    rig.text->on("refinement.subsection.planner",
                 {plan({"review"}).dump(), plan({"revise"}).dump(), plan({"finish"}).dump()});
    rig.text->on("refinement.subsection.review", {review_json(7).dump()});
    const std::string revised = "Sharper planning analysis " + cite(3) + " and " + cite(5) + ".";
    rig.text->on("refinement.subsection.revise", {revised});
    auto s = substrate();
    auto r = refine(planning_target(), s, RefinementConfig{}, rig.ctx);
    REQUIRE(r.memory.events().size() == 3);
    CHECK(r.memory.events()[0].skill == "review");
    CHECK(r.memory.events()[1].skill == "revise");
    CHECK(r.memory.events()[2].skill == "finish");
    CHECK(r.texts == std::vector<std::string>{revised});
    CHECK(r.finished);
    CHECK(r.rounds == 3);
    for (const auto& c : rig.text->calls()) CHECK(c.temperature == doctest::Approx(0.1));
}

TEST_CASE("a revision citing outside the evidence is rejected and the original kept") {
    testutil::StageRig rig;
    rig.text->on("refinement.subsection.planner", {plan({"revise", "finish"}).dump()});
    const std::string bad = "Planning text " + cite(3) + " and " + cite(2) + ".";
    rig.text->on("refinement.subsection.revise", {bad});
    auto s = substrate();
    const CitationIndex index(s.papers);
    CHECK_FALSE(writing::verify_citations(bad, ids({1, 3, 5}), CitationStyle::TitleMark, index).ok());

    auto r = refine(planning_target(), s, RefinementConfig{}, rig.ctx);
    CHECK(r.texts[0] == "Planning text " + cite(3) + ".");
    CHECK(r.rejected_revisions == 1);
    CHECK(rig.text->call_count("refinement.subsection.revise") == 2);
    CHECK(rig.log.count(events::kRejection, kStage) == 1);
    REQUIRE(r.memory.events().size() == 2);
    CHECK(r.memory.events()[0].summary.find("revision rejected") != std::string::npos);
    CHECK(r.memory.events()[0].summary.find(title_of(2)) != std::string::npos);
}

TEST_CASE("a never-finishing planner stops after max_rounds") {
    testutil::StageRig rig;
    rig.text->on("refinement.survey.planner", {plan({"review"}).dump()});
    rig.text->on("refinement.survey.review", {review_json(6).dump()});
    auto s = substrate();
    RefinementConfig cfg;
    REQUIRE(cfg.survey.max_rounds == 5);
    auto r = refine(targets(s, Granularity::Survey).at(0), s, cfg, rig.ctx);
    CHECK(r.rounds == 5);
    CHECK_FALSE(r.finished);
    CHECK(rig.text->call_count("refinement.survey.planner") == 5);
    CHECK(r.memory.events().size() == 5);
}

TEST_CASE("malformed plans are retried") {
    testutil::StageRig rig;
    rig.text->on("refinement.subsection.planner",
                 {R"({"plan": [{"skill": "dance"}]})", plan({"finish"}).dump()});
    auto s = substrate();
    auto r = refine(planning_target(), s, RefinementConfig{}, rig.ctx);
    CHECK(r.finished);
    CHECK(rig.text->call_count("refinement.subsection.planner") == 2);
    CHECK(rig.text->calls()[1].prompt.find("unknown skill 'dance'") != std::string::npos);
}

TEST_CASE("review verdicts are parsed strictly") {
    auto v = parse_review(review_json(7.5, true));
    CHECK(v.scores.at("readability") == doctest::Approx(7.5));
    CHECK(v.suggestions == std::vector<std::string>{"deepen the comparison"});
    CHECK(v.satisfactory);
    CHECK_THROWS_AS(parse_review(review_json(12)), OutputError);
    CHECK_THROWS_AS(parse_review(review_json(-1)), OutputError);
    CHECK_THROWS_AS(parse_review(json{{"scores", json::object()}}), OutputError);
    CHECK_THROWS_AS(parse_review(json{{"scores", {{"a", "high"}}}}), OutputError);
}

TEST_CASE("score deltas between rounds go into memory") {
    testutil::StageRig rig;
    rig.text->on("refinement.subsection.planner", {plan({"review"}).dump(), plan({"review", "finish"}).dump()});
    rig.text->on("refinement.subsection.review", {review_json(6).dump(), review_json(12).dump(), review_json(8).dump()});
    auto s = substrate();
    auto r = refine(planning_target(), s, RefinementConfig{}, rig.ctx);
    REQUIRE(r.memory.events().size() == 3);
    CHECK_FALSE(r.memory.events()[0].score_delta);
    REQUIRE(r.memory.events()[1].score_delta);
    CHECK(*r.memory.events()[1].score_delta == doctest::Approx(2.0));
    CHECK(rig.text->call_count("refinement.subsection.review") == 3);
    CHECK(r.memory.render().find("score change +2") != std::string::npos);
}

TEST_CASE("deltas need comparable dimensions") {
    ReviewVerdict a{{{"x", 5}}, {}, false};
    ReviewVerdict b{{{"y", 9}}, {}, false};
    ReviewVerdict c{{{"x", 8}}, {}, false};
    CHECK_FALSE(score_delta(nullptr, a));
    CHECK_FALSE(score_delta(&a, b));
    CHECK(*score_delta(&a, c) == doctest::Approx(3.0));
}

TEST_CASE("reading keynotes") {
    testutil::StageRig rig;
    auto s = substrate();
    auto two = read_keynotes_skill({"p1", "p2"}, s, 100000, false, rig.ctx);
    CHECK(two.items.size() == 2);
    CHECK(two.items[0]["tldr"] == "tldr of p1");

    auto one = read_keynotes_skill({"p1", "ghost"}, s, 100000, false, rig.ctx);
    CHECK(one.items.size() == 1);
    CHECK(one.skipped == std::vector<std::string>{"ghost"});
    CHECK(rig.log.count(events::kMonitor, kStage) == 1);

    for (auto& [id, k] : s.keynotes) k.sections["methodology"] = std::string(20000, 'x');
    auto big = read_keynotes_skill({"p1", "p2", "p3"}, s, 1000, false, rig.ctx);
    CHECK(big.compressed);
    CHECK(llm::estimate_tokens(big.items.dump()) <= 1000);
    CHECK(big.items.size() == 3);
    CHECK(rig.log.count(events::kCompression, kStage) == 1);
}

TEST_CASE("code reports join the bundle only when enabled") {
    testutil::StageRig rig;
    auto s = substrate();
    s.code_reports[pid("p1")] = {"pseudocode of p1", "env"};
    CHECK_FALSE(read_keynotes_skill({"p1"}, s, 100000, false, rig.ctx).items[0].contains("code_report"));
    CHECK(read_keynotes_skill({"p1"}, s, 100000, true, rig.ctx).items[0]["code_report"] == "pseudocode of p1");
}

TEST_CASE("evidence read by the planner reaches the reviser") {
    testutil::StageRig rig;
    rig.text->on("refinement.subsection.planner",
                 {json{{"plan", {{{"skill", "read_keynotes"}, {"paper_ids", {"p5"}}}, {{"skill", "revise"}}, {{"skill", "finish"}}}}}.dump()});
    json seen;
    rig.json_responder("refinement.subsection.revise", [&](const json& in, const llm::CompletionRequest&) {
        seen = in;
        return "Planning text " + cite(5) + ".";
    });
    auto s = substrate();
    auto r = refine(planning_target(), s, RefinementConfig{}, rig.ctx);
    REQUIRE(seen["evidence"].size() == 1);
    CHECK(seen["evidence"][0]["paper_id"] == "p5");
    CHECK(r.memory.events().size() == 3);
}

TEST_CASE("skill loop runs a fixed schedule") {
    testutil::StageRig rig;
    rig.text->on("refinement.subsection.review", {review_json(6).dump()});
    faithful_reviser(rig, "subsection");
    auto s = substrate();
    auto r = skill_loop_fallback(planning_target(), s, 2, RefinementConfig{}, rig.ctx);
    CHECK(rig.text->call_count("refinement.subsection.review") == 2);
    CHECK(rig.text->call_count("refinement.subsection.revise") <= 2);
    CHECK(rig.text->call_count("refinement.subsection.planner") == 0);
    CHECK(r.texts[0] == "Planning prose " + cite(3) + ".");
    CHECK(r.rounds == 2);
}

TEST_CASE("skill loop stops early on a satisfactory review") {
    testutil::StageRig rig;
    rig.text->on("refinement.subsection.review", {review_json(9, true).dump()});
    faithful_reviser(rig, "subsection");
    auto s = substrate();
    auto r = skill_loop_fallback(planning_target(), s, 2, RefinementConfig{}, rig.ctx);
    CHECK(rig.text->call_count("refinement.subsection.review") == 1);
    CHECK(rig.text->call_count("refinement.subsection.revise") == 0);
    CHECK(r.finished);
    CHECK_THROWS_AS(skill_loop_fallback(planning_target(), s, 0, RefinementConfig{}, rig.ctx), PreconditionError);
}

TEST_CASE("skill loop keeps the original on a citation-breaking revision") {
    testutil::StageRig rig;
    rig.text->on("refinement.subsection.review", {review_json(5).dump()});
    rig.text->on("refinement.subsection.revise", {"Planning text " + cite(4) + "."});
    auto s = substrate();
    auto r = skill_loop_fallback(planning_target(), s, 1, RefinementConfig{}, rig.ctx);
    CHECK(r.texts[0] == "Planning text " + cite(3) + ".");
    CHECK(r.rejected_revisions == 1);
}

TEST_CASE("targets per level") {
    auto s = substrate();
    auto leaves = targets(s, Granularity::Subsection);
    REQUIRE(leaves.size() == 4);
    CHECK(leaves[1].paths == std::vector<NodePath>{{"Methods", "Planning"}});
    auto sections = targets(s, Granularity::Section);
    REQUIRE(sections.size() == 3);
    CHECK(sections[1].paths.size() == 3);
    auto survey = targets(s, Granularity::Survey);
    REQUIRE(survey.size() == 1);
    CHECK(survey[0].paths.size() == 5);
}

TEST_CASE("anchored revisions split back into units") {
    auto s = substrate();
    const auto t = targets(s, Granularity::Section)[1];
    const auto rendered = render_target(t, s);
    CHECK(rendered.find("## Methods\n") == 0);
    CHECK(rendered.find("\n### Planning\n") != std::string::npos);

    auto parts = split_revision(t, rendered, s, CitationStyle::TitleMark);
    REQUIRE(parts.size() == 3);
    CHECK(parts[2] == "Retrieval text " + cite(6) + ".");

    auto renamed = rendered;
    renamed.replace(renamed.find("### Planning"), 12, "### Plans");
    CHECK_THROWS_AS(split_revision(t, renamed, s, CitationStyle::TitleMark), OutputError);

    auto swapped = rendered;
    swapped.replace(swapped.find(cite(3)), cite(3).size(), cite(6));
    CHECK_THROWS_WITH_AS(split_revision(t, swapped, s, CitationStyle::TitleMark),
                         doctest::Contains("Methods / Planning"), OutputError);

    CHECK_THROWS_AS(split_revision(t, "stray\n" + rendered, s, CitationStyle::TitleMark), OutputError);
}

TEST_CASE("memory keeps every event and compresses old rounds only") {
    RefinementMemory m(60);
    for (int round = 1; round <= 6; ++round)
        for (int k = 0; k < 3; ++k) {
            const auto before = m.events().size();
            m.add({round, "review", "round " + std::to_string(round) + " suggestion number " + std::to_string(k), std::nullopt});
            CHECK(m.events().size() == before + 1);
            const auto latest = m.events().back().round;
            for (std::size_t i = m.folded(); i < m.events().size(); ++i) CHECK(m.events()[i].round <= latest);
            for (std::size_t i = 0; i < m.folded(); ++i) CHECK(m.events()[i].round < latest);
            CHECK(m.render().find("round " + std::to_string(round) + " suggestion number " + std::to_string(k)) !=
                  std::string::npos);
        }
    CHECK(m.compressions() >= 1);
    CHECK(m.compressed_state().find("review x") != std::string::npos);
    CHECK_THROWS_AS(m.add({1, "review", "late", std::nullopt}), InvalidInputError);
}

TEST_CASE("property: skill calls stay within rounds times sub-plan length") {
    std::mt19937 rng(5);
    const std::vector<const char*> names{"review", "revise", "read_keynotes", "finish"};
    for (int trial = 0; trial < 25; ++trial) {
        testutil::StageRig rig;
        rig.text->respond("refinement.subsection.planner", "", [&](const llm::CompletionRequest&) {
            json steps = json::array();
            const int n = 1 + static_cast<int>(rng() % 7);
            for (int i = 0; i < n; ++i) {
                json step{{"skill", names[rng() % (trial % 3 == 0 ? 4 : 3)]}};
                if (step["skill"] == "read_keynotes") step["paper_ids"] = {"p" + std::to_string(1 + rng() % 7)};
                steps.push_back(step);
            }
            return llm::BackendReply{200, json{{"plan", steps}}.dump()};
        });
        rig.text->on("refinement.subsection.review", {review_json(5).dump()});
        faithful_reviser(rig, "subsection");
        auto s = substrate();
        RefinementConfig cfg;
        cfg.subsection.max_rounds = 1 + trial % 4;
        auto r = refine(planning_target(), s, cfg, rig.ctx);
        CHECK(r.skill_calls <= static_cast<std::size_t>(cfg.subsection.max_rounds) * cfg.max_plan_steps);
        CHECK(r.memory.events().size() == r.skill_calls);
        CHECK(r.rounds <= cfg.subsection.max_rounds);
        const CitationIndex index(s.papers);
        CHECK(writing::verify_citations(r.texts[0], ids({1, 3, 5}), CitationStyle::TitleMark, index).ok());
    }
}

TEST_CASE("run_refinement applies levels in order and never breaks citations") {
    testutil::StageRig rig;
    for (const char* level : {"section", "subsection", "survey"}) {
        rig.text->on(std::string("refinement.") + level + ".planner", {plan({"review", "revise", "finish"}).dump()});
        rig.text->on(std::string("refinement.") + level + ".review", {review_json(7).dump()});
    }
    faithful_reviser(rig, "section");
    faithful_reviser(rig, "subsection");
    rig.text->on("refinement.survey.revise", {"## Introduction\n\nbroken " + cite(5)});
    auto s = substrate();
    RefinementConfig cfg;
    cfg.workers = 1;
    auto results = run_refinement(s, cfg, rig.ctx);
    REQUIRE(results.size() == 3 + 4 + 1);
    CHECK(results[0].granularity == Granularity::Section);
    CHECK(results[3].granularity == Granularity::Subsection);
    CHECK(results[7].granularity == Granularity::Survey);
    CHECK(results[7].rejected_revisions == 1);
    CHECK(writing::locality_violations(s, CitationStyle::TitleMark).empty());
    CHECK(s.drafts[2].text == "Planning prose " + cite(3) + ".");
    CHECK(s.drafts[1].citations.size() == 2);
    CHECK(s.revision_log.size() == 8 * 3);
    CHECK(s.revision_log.front().stage == "refinement.section");
    CHECK(s.revision_log.back().stage == "refinement.survey");

    const auto calls = rig.text->calls();
    std::vector<std::string> level_order;
    for (const auto& c : calls) {
        const auto level = c.tag.substr(11, c.tag.find('.', 11) - 11);
        if (level_order.empty() || level_order.back() != level) level_order.push_back(level);
    }
    CHECK(level_order == std::vector<std::string>{"section", "subsection", "survey"});
}

TEST_CASE("disabled levels are skipped") {
    testutil::StageRig rig;
    rig.text->on("refinement.subsection.planner", {plan({"finish"}).dump()});
    auto s = substrate();
    RefinementConfig cfg;
    cfg.section.enabled = false;
    cfg.survey.enabled = false;
    auto results = run_refinement(s, cfg, rig.ctx);
    CHECK(results.size() == 4);
    CHECK(rig.text->call_count_prefix("refinement.section") == 0);
    CHECK(rig.text->call_count_prefix("refinement.survey") == 0);
}

TEST_CASE("transcripts are written per unit") {
    testutil::StageRig rig;
    rig.text->on("refinement.subsection.planner", {plan({"finish"}).dump()});
    auto s = substrate();
    RefinementConfig cfg;
    cfg.section.enabled = cfg.survey.enabled = false;
    auto results = run_refinement(s, cfg, rig.ctx);
    testutil::TempDir dir;
    write_transcripts(results, dir.path());
    CHECK(std::filesystem::exists(dir / "001_subsection.md"));
    CHECK(std::filesystem::exists(dir / "004_subsection.md"));
    CHECK(read_file(dir / "002_subsection.md").find("# Refinement of Methods / Planning") == 0);
}
