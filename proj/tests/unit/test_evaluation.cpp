#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "litsynth/core/substrate.hpp"
#include "litsynth/evaluation/evaluation.hpp"
#include "litsynth/llm/tokens.hpp"
#include "stage_rig.hpp"

using namespace litsynth;
using namespace litsynth::evaluation;
using nlohmann::json;

namespace {

json citation_map(int n) {
    json refs = json::array();
    for (int i = 1; i <= n; ++i) refs.push_back({{"n", i}, {"paper_id", "p" + std::to_string(i)}, {"title", "T"}});
    return {{"style", "title"}, {"references", refs}};
}

ContentScores fixed(double core, double writing, double depth) {
    ContentScores s;
    s.core = core;
    s.writing = writing;
    s.depth = depth;
    return s;
}

ClaimRecord claim(int id, std::vector<std::string> refs) { return {id, "claim " + std::to_string(id), std::move(refs)}; }

// Brute-force reading of the recall and precision formulas over a verdict for
// every non-empty subset, keyed by bitmask. Returns numerator/denominator pairs.
struct Instance {
    std::vector<std::vector<std::string>> refs;
    std::vector<std::vector<bool>> h;  // claim -> mask -> verdict, mask 0 unused
};

std::pair<long, long> oracle_recall(const Instance& in) {
    long num = 0;
    for (std::size_t i = 0; i < in.refs.size(); ++i) {
        const unsigned full = (1u << in.refs[i].size()) - 1;
        num += in.h[i][full] ? 1 : 0;
    }
    return {num, static_cast<long>(in.refs.size())};
}

std::pair<long, long> oracle_precision(const Instance& in) {
    long num = 0, den = 0;
    for (std::size_t i = 0; i < in.refs.size(); ++i) {
        const unsigned full = (1u << in.refs[i].size()) - 1;
        auto h = [&](unsigned mask) { return mask != 0 && in.h[i][mask]; };
        for (std::size_t k = 0; k < in.refs[i].size(); ++k) {
            ++den;
            const unsigned bit = 1u << k;
            const bool g = h(bit) || !h(full & ~bit);
            if (h(full) && g) ++num;
        }
    }
    return {num, den};
}

Instance random_instance(std::mt19937& rng) {
    Instance in;
    const int n_claims = std::uniform_int_distribution<int>(0, 6)(rng);
    for (int c = 0; c < n_claims; ++c) {
        std::vector<std::string> pool{"a", "b", "c", "d", "e", "f", "g"};
        std::shuffle(pool.begin(), pool.end(), rng);
        const int k = std::uniform_int_distribution<int>(1, 4)(rng);
        in.refs.emplace_back(pool.begin(), pool.begin() + k);
        std::vector<bool> h(1u << k);
        for (auto&& v : h) v = std::bernoulli_distribution(0.5)(rng);
        in.h.push_back(std::move(h));
    }
    return in;
}

std::vector<ClaimRecord> claims_of(const Instance& in) {
    std::vector<ClaimRecord> out;
    for (std::size_t i = 0; i < in.refs.size(); ++i) out.push_back(claim(static_cast<int>(i), in.refs[i]));
    return out;
}

NliVerdictTable full_table(const Instance& in) {
    NliVerdictTable t;
    for (std::size_t i = 0; i < in.refs.size(); ++i) {
        for (unsigned mask = 1; mask < in.h[i].size(); ++mask) {
            std::vector<std::string> sub;
            for (std::size_t k = 0; k < in.refs[i].size(); ++k)
                if (mask & (1u << k)) sub.push_back(in.refs[i][k]);
            t.set(static_cast<int>(i), sub, in.h[i][mask]);
        }
    }
    return t;
}

// NLI backend answering from an instance, keyed by claim text.
FunctionNli instance_nli(const Instance& in, std::atomic<int>* calls = nullptr) {
    return FunctionNli([&in, calls](const std::string& text, const std::vector<Premise>& ps) {
        if (calls) ++*calls;
        const auto i = static_cast<std::size_t>(std::stoi(text.substr(text.find(' ') + 1)));
        unsigned mask = 0;
        for (const auto& p : ps)
            for (std::size_t k = 0; k < in.refs[i].size(); ++k)
                if (in.refs[i][k] == p.paper_id) mask |= 1u << k;
        return in.h[i][mask];
    });
}

}  // namespace

TEST_CASE("claims are citation-bearing sentences with resolvable refs") {
    const json map = citation_map(3);
    SUBCASE("two citations in one sentence") {
        auto cs = extract_claims("Methods A and B are related [1][2].", map);
        REQUIRE(cs.size() == 1);
        CHECK(cs[0].refs == std::vector<std::string>{"p1", "p2"});
        CHECK(cs[0].text == "Methods A and B are related.");
    }
    SUBCASE("uncited sentence yields nothing") { CHECK(extract_claims("No citations here. None at all.", map).empty()); }
    SUBCASE("three sentences") {
        auto cs = extract_claims("One [1]. Two [2]. Three [3].", map);
        REQUIRE(cs.size() == 3);
        CHECK(cs[2].claim_id == 2);
        CHECK(cs[2].refs == std::vector<std::string>{"p3"});
    }
    SUBCASE("duplicates and grouped numbers") {
        auto cs = extract_claims("Shown twice [1, 3] and again [1].", map);
        REQUIRE(cs.size() == 1);
        CHECK(cs[0].refs == std::vector<std::string>{"p1", "p3"});
    }
    SUBCASE("unresolvable numbers are not claims") { CHECK(extract_claims("Ghost [9].", map).empty()); }
    SUBCASE("front matter, headings and the reference list are skipped") {
        const std::string doc =
            "---\ntopic: \"x [1]\"\n---\n\n# Title [1]\n\n## Intro\n\nBody claim [2].\n\n## References\n\n[1] T. p1\n";
        auto cs = extract_claims(doc, map);
        REQUIRE(cs.size() == 1);
        CHECK(cs[0].refs == std::vector<std::string>{"p2"});
    }
}

TEST_CASE("recall counts entailed full sets") {
    std::vector<ClaimRecord> cs{claim(0, {"a"}), claim(1, {"b"}), claim(2, {"c"})};
    NliVerdictTable t;
    t.set(0, {"a"}, true);
    t.set(1, {"b"}, false);
    t.set(2, {"c"}, true);
    const Ratio r = citation_recall(cs, t);
    CHECK(r.value == doctest::Approx(2.0 / 3.0));
    CHECK(r.numerator == 2);
    CHECK_FALSE(r.warning);

    const Ratio empty = citation_recall({}, t);
    CHECK(empty.value == 1.0);
    CHECK(empty.warning);
}

TEST_CASE("necessity and precision on hand-evaluated cases") {
    const ClaimRecord c = claim(0, {"r1", "r2"});
    SUBCASE("each reference necessary") {
        NliVerdictTable t;
        t.set(0, {"r1"}, false);
        t.set(0, {"r2"}, false);
        t.set(0, {"r1", "r2"}, true);
        CHECK(necessity_g(c, "r1", t));
        CHECK(necessity_g(c, "r2", t));
        CHECK(citation_precision({c}, t).value == 1.0);
    }
    SUBCASE("redundant second reference") {
        NliVerdictTable t;
        t.set(0, {"r1", "r2"}, true);
        t.set(0, {"r1"}, true);
        t.set(0, {"r2"}, false);
        CHECK(necessity_g(c, "r1", t));
        CHECK_FALSE(necessity_g(c, "r2", t));
        const Ratio p = citation_precision({c}, t);
        CHECK(p.numerator == 1);
        CHECK(p.denominator == 2);
        CHECK(p.value == 0.5);
    }
    SUBCASE("unsupported claim scores zero") {
        NliVerdictTable t;
        t.set(0, {"r1", "r2"}, false);
        CHECK(citation_precision({c}, t).value == 0.0);
    }
    SUBCASE("singleton claim") {
        NliVerdictTable t;
        t.set(1, {"r"}, true);
        CHECK(necessity_g(claim(1, {"r"}), "r", t));
    }
    SUBCASE("zero references") {
        const Ratio p = citation_precision({}, NliVerdictTable{});
        CHECK(p.value == 1.0);
        CHECK(p.warning);
    }
    SUBCASE("missing verdict names the pair") {
        NliVerdictTable t;
        t.set(0, {"r1", "r2"}, true);
        t.set(0, {"r1"}, false);
        CHECK_THROWS_WITH_AS(citation_precision({c}, t), doctest::Contains("claim 0 with {r2}"), EvaluationError);
        CHECK_THROWS_AS(citation_recall({claim(5, {"x"})}, t), EvaluationError);
    }
}

TEST_CASE("required subsets are full, singletons and leave-one-out") {
    auto subs = required_subsets(claim(0, {"c", "a", "b"}));
    CHECK(subs.size() == 7);
    CHECK(subs[0] == RefSet{"a", "b", "c"});
    CHECK(subs[1] == RefSet{"a"});
    CHECK(subs[4] == RefSet{"b", "c"});
    CHECK(required_subsets(claim(0, {"a"})).size() == 1);
    CHECK(required_subsets(claim(0, {"a", "b"})).size() == 3);
}

TEST_CASE("property: recall and precision equal the brute-force oracle") {
    std::mt19937 rng(20240611);
    for (int round = 0; round < 1000; ++round) {
        const Instance in = random_instance(rng);
        const auto cs = claims_of(in);
        const auto table = full_table(in);
        const auto [rn, rd] = oracle_recall(in);
        const auto [pn, pd] = oracle_precision(in);
        const Ratio r = citation_recall(cs, table);
        const Ratio p = citation_precision(cs, table);
        CHECK(static_cast<long>(r.numerator) == rn);
        CHECK(static_cast<long>(r.denominator) == rd);
        CHECK(static_cast<long>(p.numerator) == pn);
        CHECK(static_cast<long>(p.denominator) == pd);
        if (rd) CHECK(r.value == static_cast<double>(rn) / static_cast<double>(rd));
        if (pd) CHECK(p.value == static_cast<double>(pn) / static_cast<double>(pd));
        CHECK(r.value >= 0.0);
        CHECK(r.value <= 1.0);
        CHECK(p.value >= 0.0);
        CHECK(p.value <= 1.0);
    }
}

TEST_CASE("property: collected verdicts give oracle metrics with only the needed queries") {
    std::mt19937 rng(77);
    for (int round = 0; round < 200; ++round) {
        const Instance in = random_instance(rng);
        const auto cs = claims_of(in);
        std::atomic<int> calls{0};
        auto nli = instance_nli(in, &calls);
        const auto table = collect_verdicts(cs, {}, nli, 3);
        int bound = 0;
        for (const auto& c : cs) bound += static_cast<int>(required_subsets(c).size());
        CHECK(calls.load() <= bound);
        CHECK(citation_recall(cs, table).numerator == static_cast<std::size_t>(oracle_recall(in).first));
        CHECK(citation_precision(cs, table).numerator == static_cast<std::size_t>(oracle_precision(in).first));
    }
}

TEST_CASE("property: flipping a full-set verdict to true never lowers recall") {
    std::mt19937 rng(5);
    for (int round = 0; round < 300; ++round) {
        Instance in = random_instance(rng);
        if (in.refs.empty()) continue;
        const auto cs = claims_of(in);
        const double before = citation_recall(cs, full_table(in)).value;
        const std::size_t i = std::uniform_int_distribution<std::size_t>(0, in.refs.size() - 1)(rng);
        in.h[i][(1u << in.refs[i].size()) - 1] = true;
        CHECK(citation_recall(cs, full_table(in)).value >= before);
    }
}

TEST_CASE("valid citation ratio") {
    const std::set<std::string> universe{"p1", "p2", "p3"};
    std::map<int, std::string> bib{{1, "p1"}, {2, "p2"}, {3, "p3"}, {4, "ghost"}};
    SUBCASE("all resolvable") { CHECK(valid_citation_ratio("A [1]. B [2, 3].", bib, universe).value == 1.0); }
    SUBCASE("nine of ten") {
        std::string text;
        for (int i = 0; i < 9; ++i) text += "Claim [1]. ";
        text += "Claim [4].";
        const Ratio r = valid_citation_ratio(text, bib, universe);
        CHECK(r.denominator == 10);
        CHECK(r.value == doctest::Approx(0.9));
    }
    SUBCASE("malformed tokens and leftover marks are invalid") {
        const Ratio r = valid_citation_ratio("Good [1]. Bad [1a]. Raw <some title>.", bib, universe);
        CHECK(r.numerator == 1);
        CHECK(r.denominator == 3);
    }
    SUBCASE("links and plain brackets are not citations") {
        const Ratio r = valid_citation_ratio("See [the repo 2](http://x). A [note].", bib, universe);
        CHECK(r.denominator == 0);
        CHECK(r.warning);
        CHECK(r.value == 1.0);
    }
    SUBCASE("unknown number") { CHECK(valid_citation_ratio("X [7].", bib, universe).value == 0.0); }
}

TEST_CASE("weighted content score reproduces the reported totals") {
    CHECK(std::abs(weighted_content_score(fixed(9.100, 8.356, 8.333)) - 8.644) <= 0.001);
    CHECK(std::abs(weighted_content_score(fixed(9.083, 8.311, 8.450)) - 8.676) <= 0.001);
    CHECK(std::abs(weighted_content_score(fixed(8.938, 8.417, 8.063)) - 8.483) <= 0.001);
    CHECK_THROWS_AS(weighted_content_score(fixed(0.5, 5, 5)), InvalidInputError);
    CHECK_THROWS_AS(weighted_content_score(fixed(5, 10.5, 5)), InvalidInputError);
}

TEST_CASE("dimension scores average their rubric sub-scores") {
    const std::map<std::string, double> sub{
        {"synthesis", 9.067},       {"organization", 8.867},     {"comprehensiveness", 9.000},
        {"relevance", 9.400},       {"readability", 8.000},      {"academic_rigor", 8.933},
        {"clarity_coherence", 8.000}, {"critical_analysis", 8.933}, {"novelty_insights", 8.400},
        {"specificity", 7.933},     {"future_directions", 8.533}};
    const ContentScores s = scores_from_subdimensions(sub);
    CHECK(std::abs(s.core - 9.083) <= 0.001);
    CHECK(std::abs(s.writing - 8.311) <= 0.001);
    CHECK(std::abs(s.depth - 8.450) <= 0.001);
    CHECK(std::abs(weighted_content_score(s) - 8.676) <= 0.001);

    auto missing = sub;
    missing.erase("specificity");
    CHECK_THROWS_AS(scores_from_subdimensions(missing), InvalidInputError);
}

TEST_CASE("property: weighted total is an affine identity and preserves ranking under shifts") {
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> u(1.0, 9.0);
    for (int round = 0; round < 500; ++round) {
        const double v = u(rng);
        CHECK(weighted_content_score(fixed(v, v, v)) == doctest::Approx(v).epsilon(1e-12));

        const auto a = fixed(u(rng), u(rng), u(rng));
        const auto b = fixed(u(rng), u(rng), u(rng));
        const double shift = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const double ta = weighted_content_score(a), tb = weighted_content_score(b);
        const double sa = weighted_content_score(fixed(a.core + shift, a.writing + shift, a.depth + shift));
        const double sb = weighted_content_score(fixed(b.core + shift, b.writing + shift, b.depth + shift));
        CHECK(sa - ta == doctest::Approx(shift).epsilon(1e-9));
        CHECK(sb - tb == doctest::Approx(shift).epsilon(1e-9));
        if (std::abs(ta - tb) > 1e-9) CHECK((ta < tb) == (sa < sb));
        CHECK(ta >= 1.0);
        CHECK(ta <= 10.0);
    }
}

TEST_CASE("coefficient of variation") {
    const Dispersion d = coefficient_of_variation({8, 10});
    CHECK(d.std == doctest::Approx(1.41421).epsilon(1e-5));
    CHECK(d.cv_percent == doctest::Approx(15.713).epsilon(1e-4));
    CHECK(d.max_abs_dev == 1.0);
    CHECK(d.range == 2.0);
    CHECK(coefficient_of_variation({8, 10}, StdConvention::Population).std == doctest::Approx(1.0));

    const Dispersion c = coefficient_of_variation({7.5, 7.5, 7.5});
    CHECK(c.std == 0.0);
    CHECK(c.cv_percent == 0.0);
    CHECK(c.range == 0.0);

    CHECK_THROWS_AS(coefficient_of_variation({3}), InvalidInputError);
    CHECK_THROWS_AS(coefficient_of_variation({-1, 1}), EvaluationError);
}

TEST_CASE("property: cv is invariant under positive scaling") {
    std::mt19937 rng(11);
    for (int round = 0; round < 300; ++round) {
        std::vector<double> xs(std::uniform_int_distribution<int>(2, 12)(rng));
        for (auto& x : xs) x = std::uniform_real_distribution<double>(1.0, 10.0)(rng);
        const double k = std::uniform_real_distribution<double>(0.01, 100.0)(rng);
        std::vector<double> ys = xs;
        for (auto& y : ys) y *= k;
        CHECK(std::abs(coefficient_of_variation(xs).cv_percent - coefficient_of_variation(ys).cv_percent) <= 1e-9);
    }
}

TEST_CASE("cohen's kappa") {
    const std::vector<std::string> a{"A", "A", "B", "B"}, b{"A", "B", "A", "B"};
    CHECK(cohens_kappa(a, a) == 1.0);
    CHECK(cohens_kappa(a, b) == doctest::Approx(0.0));
    CHECK(cohens_kappa({"A", "A"}, {"A", "A"}) == 1.0);
    CHECK(cohens_kappa({"A", "B"}, {"B", "A"}) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(cohens_kappa(a, {"A"}), InvalidInputError);
    CHECK_THROWS_AS(cohens_kappa({}, {}), InvalidInputError);
}

TEST_CASE("property: cohen's kappa is symmetric, relabel-invariant and bounded") {
    std::mt19937 rng(13);
    const std::vector<std::string> labels{"A", "B", "Tie"};
    const std::map<std::string, std::string> relabel{{"A", "Tie"}, {"B", "A"}, {"Tie", "B"}};
    for (int round = 0; round < 100; ++round) {
        const int n = std::uniform_int_distribution<int>(1, 30)(rng);
        std::vector<std::string> a, b, ra, rb;
        for (int i = 0; i < n; ++i) {
            a.push_back(labels[std::uniform_int_distribution<int>(0, 2)(rng)]);
            b.push_back(labels[std::uniform_int_distribution<int>(0, 2)(rng)]);
            ra.push_back(relabel.at(a.back()));
            rb.push_back(relabel.at(b.back()));
        }
        const double k = cohens_kappa(a, b);
        CHECK(k == doctest::Approx(cohens_kappa(b, a)).epsilon(1e-12));
        CHECK(k == doctest::Approx(cohens_kappa(ra, rb)).epsilon(1e-12));
        CHECK(k >= -1.0 - 1e-12);
        CHECK(k <= 1.0 + 1e-12);
    }
}

TEST_CASE("fleiss' kappa") {
    SUBCASE("unanimous") {
        auto m = RatingMatrix::from_labels({{"A", "A", "A"}, {"B", "B", "B"}, {"Tie", "Tie", "Tie"}});
        CHECK(fleiss_kappa(m) == doctest::Approx(1.0));
        CHECK(fleiss_kappa(RatingMatrix::from_labels({{"A", "A"}, {"A", "A"}})) == 1.0);
    }
    SUBCASE("two-rater fixture matches direct evaluation") {
        // items (A,A) (A,B) (B,A) (B,B): P_i = 1,0,0,1 so P-bar = 0.5; p_A = p_B = 0.5 so P_e = 0.5
        auto m = RatingMatrix::from_labels({{"A", "A"}, {"A", "B"}, {"B", "A"}, {"B", "B"}});
        CHECK(fleiss_kappa(m) == doctest::Approx((0.5 - 0.5) / (1 - 0.5)));
    }
    SUBCASE("seeded uniform labels tend to zero") {
        std::mt19937 rng(2024);
        std::vector<std::vector<std::string>> labels;
        const std::vector<std::string> cats{"A", "B", "Tie"};
        for (int i = 0; i < 10000; ++i) {
            std::vector<std::string> row;
            for (int r = 0; r < 3; ++r) row.push_back(cats[std::uniform_int_distribution<int>(0, 2)(rng)]);
            labels.push_back(std::move(row));
        }
        CHECK(std::abs(fleiss_kappa(RatingMatrix::from_labels(labels, cats))) <= 0.05);
    }
    SUBCASE("invalid input") {
        CHECK_THROWS_AS(RatingMatrix::from_labels({{"A", "B"}, {"A"}}), InvalidInputError);
        CHECK_THROWS_AS(RatingMatrix::from_labels({{"A", "C"}}, {"A", "B"}), InvalidInputError);
        RatingMatrix m{{"A", "B"}, {{2, 0}, {1, 2}}};
        CHECK_THROWS_AS(fleiss_kappa(m), InvalidInputError);
        CHECK_THROWS_AS(fleiss_kappa(RatingMatrix::from_labels({{"A"}, {"B"}})), InvalidInputError);
    }
}

TEST_CASE("premises follow the configured source") {
    std::map<PaperId, PaperRecord> papers{{testutil::pid("p1"), testutil::paper("p1", "One", "abs one", "tl one")},
                                          {testutil::pid("p2"), testutil::paper("p2", "Two", "", "tl two")}};
    std::map<PaperId, Keynote> keynotes{{testutil::pid("p1"), testutil::keynote("p1", "key tl")}};
    CHECK(build_premises(papers, keynotes, PremiseSource::Abstract).at("p1").text == "abs one");
    CHECK(build_premises(papers, keynotes, PremiseSource::Abstract).at("p2").text == "tl two");
    CHECK(build_premises(papers, keynotes, PremiseSource::Tldr).at("p1").text == "tl one");
    const auto k = build_premises(papers, keynotes, PremiseSource::Keynote);
    CHECK(k.at("p1").text.find("tldr: key tl") != std::string::npos);
    CHECK(k.at("p2").text == "tl two");
    CHECK(premise_source_from_string("Keynote") == PremiseSource::Keynote);
    CHECK_THROWS_AS(premise_source_from_string("fulltext"), ConfigError);
}

TEST_CASE("gateway NLI parses verdicts and retries malformed replies") {
    testutil::StageRig rig;
    rig.text->on("evaluation.nli", {"maybe", "{\"entailed\": true}"});
    GatewayNli nli(rig.ctx);
    CHECK(nli.entails("X holds.", {{"p1", "One", "X holds in all cases."}}));
    CHECK(rig.text->call_count("evaluation.nli") == 2);
    const auto calls = rig.text->calls();
    const json in = llm::extract_input(calls.back().prompt);
    CHECK(in["claim"] == "X holds.");
    CHECK(in["sources"][0]["paper_id"] == "p1");
    CHECK(calls.back().temperature == 0.0);
}

TEST_CASE("gateway judge scores the rubric without explanations by default") {
    testutil::StageRig rig;
    json scores;
    for (const auto& d : kRubric) scores[std::string(d.key)] = 8;
    rig.text->on("evaluation.judge", {"{\"scores\": {\"synthesis\": 11}}", json{{"scores", scores}}.dump()});
    GatewayJudge judge(rig.ctx);
    const ContentScores s = judge.score("A survey body.", "topic");
    CHECK(s.core == 8.0);
    CHECK(weighted_content_score(s) == doctest::Approx(8.0));
    const auto calls = rig.text->calls();
    CHECK(calls.size() == 2);
    CHECK(calls[0].prompt.find("Give no explanations") != std::string::npos);
    CHECK(calls[1].prompt.find("outside 1..10") != std::string::npos);

    CHECK_THROWS_AS(parse_judge_reply(json{{"scores", {{"synthesis", 5}}}}), OutputError);
}

TEST_CASE("judge input is truncated to the context window") {
    testutil::StageRig rig(std::make_shared<llm::HashingEmbeddingBackend>(), 4096);
    json scores;
    for (const auto& d : kRubric) scores[std::string(d.key)] = 7;
    rig.text->on("evaluation.judge", {json{{"scores", scores}}.dump()});
    GatewayJudge judge(rig.ctx, JudgeConfig{0.0, false, 1, 1024});
    judge.score(std::string(40000, 'w') + " end", "topic");
    CHECK(rig.log.count(events::kCompression, kStage) == 1);
    CHECK(llm::estimate_tokens(rig.text->calls().back().prompt) <= 4096 - 1024 - 512);
}

TEST_CASE("property: a fixed mock judge is perfectly stable") {
    testutil::StageRig rig;
    std::mt19937 rng(3);
    std::vector<double> totals;
    for (int run = 0; run < 5; ++run) {
        json scores;
        for (const auto& d : kRubric) scores[std::string(d.key)] = 8.5;
        rig.text->on("evaluation.judge", {json{{"scores", scores}}.dump()});
        GatewayJudge judge(rig.ctx);
        totals.push_back(weighted_content_score(judge.score("Survey run " + std::to_string(run), "t")));
    }
    CHECK(coefficient_of_variation(totals).cv_percent <= 0.244);
}

TEST_CASE("evaluate_survey end to end with mocks") {
    const std::string text = "---\ntopic: \"t\"\n---\n\n# T\n\n## A\n\nFirst claim [1][2]. Second claim [3]. Plain.\n\n"
                             "## References\n\n[1] One. p1\n";
    SurveyInput in{"sys", "t", text, citation_map(3)};
    const std::set<std::string> universe{"p1", "p2", "p3"};

    struct Fixed : Judge {
        ContentScores score(const std::string&, const std::string&) override { return fixed(9.100, 8.356, 8.333); }
    } judge;

    SUBCASE("all-true NLI") {
        FunctionNli nli([](const std::string&, const std::vector<Premise>&) { return true; });
        const auto r = evaluate_survey(in, {}, universe, nli, &judge);
        CHECK(r.claims == 2);
        CHECK(r.citations == 3);
        CHECK(*r.recall.value == 1.0);
        CHECK(*r.precision.value == 1.0);
        CHECK(*r.valid_ratio.value == 1.0);
        CHECK(std::abs(*r.total.value - 8.644) <= 0.001);
        CHECK(r.complete());
        CHECK(r.warnings.empty());
    }
    SUBCASE("fixture verdicts match the oracle") {
        // claim 0 {p1,p2}: full true, p1 alone true, p2 alone false -> precision 1/2 of its refs
        FunctionNli nli([](const std::string& claim, const std::vector<Premise>& ps) {
            if (claim.starts_with("Second")) return false;
            return ps.size() == 2 || ps[0].paper_id == "p1";
        });
        const auto r = evaluate_survey(in, {}, universe, nli, nullptr);
        CHECK(*r.recall.value == 0.5);
        CHECK(*r.precision.value == doctest::Approx(1.0 / 3.0));
        CHECK_FALSE(r.total.value);
        CHECK(r.total.error.empty());
    }
    SUBCASE("empty survey") {
        FunctionNli nli([](const std::string&, const std::vector<Premise>&) { return true; });
        const auto r = evaluate_survey({"sys", "t", "Nothing cited.", citation_map(0)}, {}, universe, nli, nullptr);
        CHECK(*r.recall.value == 1.0);
        CHECK(*r.precision.value == 1.0);
        CHECK(*r.valid_ratio.value == 1.0);
        CHECK(r.recall.warning);
        CHECK(r.warnings.size() == 3);
    }
    SUBCASE("backend exhaustion yields a partial report") {
        testutil::StageRig rig;
        rig.text->on("evaluation.nli", "", std::vector<llm::BackendReply>{{429, ""}});
        GatewayNli nli(rig.ctx);
        const auto r = evaluate_survey(in, {}, universe, nli, &judge);
        CHECK_FALSE(r.recall.value);
        CHECK(r.recall.error.find("exhausted") != std::string::npos);
        CHECK(*r.valid_ratio.value == 1.0);
        CHECK(r.total.value);
        CHECK_FALSE(r.complete());

        testutil::TempDir dir;
        write_reports({r}, dir.path());
        const std::string tsv = read_file(dir / "report.tsv");
        CHECK(tsv.find("sys\t9.100\t8.356\t8.333\t8.644\t2\t3\tERR\tERR\t1.000") != std::string::npos);
        const json j = json::parse(read_file(dir / "report.json"));
        CHECK(j[0]["recall"]["value"].is_null());
        CHECK(j[0]["recall"].contains("error"));
    }
}
