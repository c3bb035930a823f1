#include <doctest.h>

#include <httplib.h>

#include <set>
#include <thread>

#include "helpers.hpp"
#include "litsynth/core/error.hpp"
#include "litsynth/llm/scripted.hpp"
#include "litsynth/llm/structured.hpp"
#include "litsynth/retrieval/retrieval.hpp"
#include "synthetic_graph.hpp"

using namespace litsynth;
using namespace litsynth::retrieval;
using nlohmann::json;

namespace {

struct Rig {
    std::shared_ptr<llm::ScriptedBackend> text = std::make_shared<llm::ScriptedBackend>();
    std::shared_ptr<llm::ScriptedEmbeddingBackend> emb = std::make_shared<llm::ScriptedEmbeddingBackend>();
    llm::Gateway gw{text, emb, [] {
                        llm::GatewayOptions o;
                        o.sleeper = [](double) {};
                        return o;
                    }()};
    EventLog log;
    StageContext ctx{gw, log};
};

// Judge that accepts every candidate except the listed ids.
llm::Responder judge_rejecting(std::set<std::string> reject) {
    return [reject](const llm::CompletionRequest& r) {
        auto in = llm::extract_input(r.prompt);
        json out = json::array();
        for (const auto& c : in["candidates"]) {
            auto id = c["paper_id"].get<std::string>();
            out.push_back({{"paper_id", id}, {"relevant", !reject.count(id)}, {"note", "about " + id}});
        }
        return llm::BackendReply{200, out.dump()};
    };
}

json topic_fixture(int n, const std::string& prefix = "p") {
    json papers = json::array();
    for (int i = 0; i < n; ++i)
        papers.push_back({{"id", prefix + std::to_string(100 + i)}, {"title", "agent survey " + std::to_string(i)}});
    return {{"papers", papers}};
}

std::vector<std::string> ids(const std::vector<PaperRecord>& v) {
    std::vector<std::string> out;
    for (const auto& p : v) out.push_back(p.id.canonical());
    return out;
}

}  // namespace

TEST_CASE("seed search caps at max_seed_papers") {
    FixturePaperSource src(topic_fixture(40));
    RetrievalConfig cfg;
    cfg.min_primary_hits = 0;
    CHECK(search_seeds("agent survey", cfg, src, nullptr, nullptr).size() == 15);

    FixturePaperSource small(topic_fixture(3));
    CHECK(search_seeds("agent survey", cfg, small, nullptr, nullptr).size() == 3);
    CHECK_THROWS_AS(search_seeds("  ", cfg, small, nullptr, nullptr), InvalidInputError);
}

TEST_CASE("seed search falls back when the primary fails") {
    Rig rig;
    rig.text->on("retrieval.keywords", {"[]"});
    FixturePaperSource primary(topic_fixture(10));
    primary.set_failing(true);
    FixturePaperSource fallback(topic_fixture(5, "f"), "backup");
    RetrievalConfig cfg;
    auto seeds = search_seeds("agent survey", cfg, primary, &fallback, &rig.ctx);
    CHECK(seeds.size() == 5);
    CHECK(rig.log.count(events::kFallback) == 1);
    CHECK(rig.log.any_message_contains(events::kFallback, "backup"));

    fallback.set_failing(true);
    CHECK_THROWS_AS(search_seeds("agent survey", cfg, primary, &fallback, &rig.ctx), RetrievalError);
}

TEST_CASE("seed search supplements a thin primary") {
    FixturePaperSource primary(topic_fixture(2));
    FixturePaperSource fallback(topic_fixture(4, "f"), "backup");
    RetrievalConfig cfg;
    auto seeds = search_seeds("agent survey", cfg, primary, &fallback, nullptr);
    CHECK(seeds.size() == 6);
    CHECK(seeds[0].id.canonical() == "p100");
}

TEST_CASE("keyword variants widen the seed queries") {
    Rig rig;
    rig.text->on("retrieval.keywords", {R"(["quantum chemistry", "agent survey", "quantum chemistry"])"});
    json fx = topic_fixture(3);
    fx["papers"].push_back({{"id", "q1"}, {"title", "quantum chemistry methods"}});
    FixturePaperSource src(fx);
    RetrievalConfig cfg;
    cfg.min_primary_hits = 0;
    auto seeds = search_seeds("agent survey", cfg, src, nullptr, &rig.ctx);
    CHECK(ids(seeds) == std::vector<std::string>{"p100", "p101", "p102", "q1"});
    CHECK(src.call_count() == 2);
}

TEST_CASE("judge filter") {
    Rig rig;
    rig.text->respond("retrieval.judge", "", judge_rejecting({"p101"}));
    FixturePaperSource src(topic_fixture(4));
    auto cands = src.search("agent", 10);
    RetrievalConfig cfg;
    CHECK(ids(judge_filter(cands, "agents", cfg, rig.ctx)) == std::vector<std::string>{"p100", "p102", "p103"});
}

TEST_CASE("judge filter accepts all") {
    Rig rig;
    rig.text->respond("retrieval.judge", "", judge_rejecting({}));
    FixturePaperSource src(topic_fixture(4));
    auto cands = src.search("agent", 10);
    CHECK(ids(judge_filter(cands, "agents", RetrievalConfig{}, rig.ctx)) == ids(cands));
}

TEST_CASE("malformed verdict is retried once") {
    Rig rig;
    rig.text->on("retrieval.judge", "Previous attempts", {R"([{"paper_id":"p100","relevant":true,"note":"x"}])"});
    rig.text->on("retrieval.judge", {"certainly! p100 is relevant"});
    FixturePaperSource src(topic_fixture(1));
    auto out = judge_filter(src.search("agent", 5), "agents", RetrievalConfig{}, rig.ctx);
    CHECK(out.size() == 1);
    CHECK(rig.text->call_count("retrieval.judge") == 2);
}

TEST_CASE("verdict missing a candidate is rejected until exhaustion") {
    Rig rig;
    rig.text->on("retrieval.judge", {R"([{"paper_id":"p100","relevant":true}])"});
    FixturePaperSource src(topic_fixture(2));
    CHECK_THROWS_AS(judge_filter(src.search("agent", 5), "agents", RetrievalConfig{}, rig.ctx), OutputError);
    CHECK(rig.text->call_count("retrieval.judge") == 4);
}

TEST_CASE("expansion depth 0 returns the seeds") {
    auto fx = synthetic::citation_graph(1, 30, 5);
    FixturePaperSource src(fx);
    RetrievalConfig cfg;
    cfg.expansion_depth = 0;
    auto seeds = std::vector<PaperRecord>{*src.lookup(testutil::pid("n001")), *src.lookup(testutil::pid("n002"))};
    CHECK(ids(expand_graph(seeds, cfg, src, nullptr)) == ids(seeds));
}

TEST_CASE("seed with 7 citing and 5 cited papers keeps all 12") {
    json papers = json::array();
    std::vector<std::string> refs;
    for (int i = 0; i < 5; ++i) {
        refs.push_back("out" + std::to_string(i));
        papers.push_back({{"id", "out" + std::to_string(i)}, {"title", "o"}});
    }
    papers.push_back({{"id", "seed"}, {"title", "s"}, {"references", refs}});
    for (int i = 0; i < 7; ++i)
        papers.push_back({{"id", "in" + std::to_string(i)}, {"title", "i"}, {"references", {"seed"}}});
    FixturePaperSource src(json{{"papers", papers}});
    auto out = expand_graph({*src.lookup(testutil::pid("seed"))}, RetrievalConfig{}, src, nullptr);
    CHECK(out.size() == 13);
}

TEST_CASE("per-seed cap keeps the most cited neighbours") {
    json papers = json::array();
    std::vector<std::string> refs;
    for (int i = 0; i < 30; ++i) {
        auto id = "r" + std::to_string(10 + i);
        refs.push_back(id);
        papers.push_back({{"id", id}, {"title", "x"}, {"metadata", {{"citation_count", std::to_string(i % 10)}}}});
    }
    papers.push_back({{"id", "seed"}, {"title", "s"}, {"references", refs}});
    json fx = {{"papers", papers}};
    FixturePaperSource src(fx);
    auto out = expand_graph({*src.lookup(testutil::pid("seed"))}, RetrievalConfig{}, src, nullptr);
    REQUIRE(out.size() == 21);
    std::set<std::string> got;
    for (std::size_t i = 1; i < out.size(); ++i) got.insert(out[i].id.canonical());
    auto expect = synthetic::oracle_neighbors(fx, "seed", 20);
    CHECK(got == std::set<std::string>(expect.begin(), expect.end()));
    // counts 9,8,7 are taken in full (3 each), then the two smallest ids with count 6
    CHECK(got.count("r19"));
    CHECK(got.count("r16"));
    CHECK_FALSE(got.count("r10"));
}

TEST_CASE("depth-1 expansion equals the brute-force neighbour union on random graphs") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        auto fx = synthetic::citation_graph(seed, 60, 8);
        FixturePaperSource src(fx);
        RetrievalConfig cfg;
        cfg.per_seed_cap = 1 + static_cast<int>(seed % 6);
        std::vector<PaperRecord> seeds;
        std::vector<std::string> seed_ids;
        for (int i = 0; i < 4; ++i) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "n%03d", static_cast<int>((seed * 7 + static_cast<std::uint64_t>(i) * 13) % 60));
            if (std::find(seed_ids.begin(), seed_ids.end(), buf) != seed_ids.end()) continue;
            seed_ids.push_back(buf);
            seeds.push_back(*src.lookup(testutil::pid(buf)));
        }
        auto out = expand_graph(seeds, cfg, src, nullptr);
        auto got = ids(out);
        CHECK(std::set<std::string>(got.begin(), got.end()).size() == got.size());
        CHECK(std::set<std::string>(got.begin(), got.end()) == synthetic::oracle_depth1(fx, seed_ids, cfg.per_seed_cap));
        CHECK(ids(expand_graph(seeds, cfg, src, nullptr)) == got);

        // raising the cap never drops a paper
        auto wider = cfg;
        wider.per_seed_cap += 3;
        auto bigger = ids(expand_graph(seeds, wider, src, nullptr));
        std::set<std::string> big(bigger.begin(), bigger.end());
        for (const auto& id : got) CHECK(big.count(id));
    }
}

TEST_CASE("depth 2 reaches neighbours of neighbours") {
    json fx = {{"papers",
                {{{"id", "a"}, {"title", "a"}, {"references", {"b"}}},
                 {{"id", "b"}, {"title", "b"}, {"references", {"c"}}},
                 {{"id", "c"}, {"title", "c"}}}}};
    FixturePaperSource src(fx);
    RetrievalConfig cfg;
    cfg.expansion_depth = 2;
    CHECK(ids(expand_graph({*src.lookup(testutil::pid("a"))}, cfg, src, nullptr)) ==
          std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("unreachable neighbours are skipped with a log entry") {
    Rig rig;
    json fx = {{"papers", {{{"id", "a"}, {"title", "a"}, {"references", {"b", "ghost"}}}, {{"id", "b"}, {"title", "b"}}}}};
    FixturePaperSource src(fx);
    auto out = expand_graph({*src.lookup(testutil::pid("a"))}, RetrievalConfig{}, src, &rig.ctx);
    CHECK(out.size() == 2);
    CHECK(rig.log.any_message_contains(events::kSkip, "ghost"));
}

TEST_CASE("coarse filter") {
    Rig rig;
    rig.emb->set("topic", {1, 0}).set("A\n", {1, 0.2}).set("B\n", {0, 1});
    std::vector<PaperRecord> papers{testutil::paper("a", "A"), testutil::paper("b", "B")};
    RetrievalConfig cfg;
    cfg.coarse_similarity_threshold = -1;
    CHECK(coarse_filter(papers, "topic", cfg, rig.ctx).size() == 2);
    cfg.coarse_similarity_threshold = 0.5;
    CHECK(ids(coarse_filter(papers, "topic", cfg, rig.ctx)) == std::vector<std::string>{"a"});
    CHECK(coarse_filter({}, "topic", cfg, rig.ctx).empty());
    rig.emb->fail_next(100, 400);
    CHECK_THROWS_AS(coarse_filter({testutil::paper("c", "C")}, "topic", cfg, rig.ctx), RetrievalError);
}

TEST_CASE("rerank batches by twenty and logs notes") {
    Rig rig;
    rig.text->respond("retrieval.rerank", "", judge_rejecting({"p105", "p150"}));
    FixturePaperSource src(topic_fixture(60));
    auto all = src.search("agent", 100);
    REQUIRE(all.size() == 60);
    auto kept = llm_rerank_filter(all, "agents", RetrievalConfig{}, rig.ctx);
    CHECK(rig.text->call_count("retrieval.rerank") == 3);
    CHECK(kept.size() == 58);
    CHECK(rig.log.count(events::kRelevance) == 58);
}

TEST_CASE("full stage is deterministic and stays inside the neighbourhood") {
    auto run_once = [] {
        Rig rig;
        rig.text->on("retrieval.keywords", {R"(["citation network"])"});
        rig.text->respond("retrieval.judge", "", judge_rejecting({"n003", "n010"}));
        rig.text->respond("retrieval.rerank", "", judge_rejecting({"n003", "n010"}));
        rig.emb->fallback(std::make_shared<llm::HashingEmbeddingBackend>());
        auto fx = synthetic::citation_graph(5, 50, 6);
        FixturePaperSource src(fx);
        RetrievalConfig cfg;
        cfg.coarse_similarity_threshold = -1;
        auto out = run_retrieval("graph study", cfg, src, nullptr, rig.ctx);
        return ids(out);
    };
    auto a = run_once();
    CHECK(a == run_once());
    CHECK(std::set<std::string>(a.begin(), a.end()).size() == a.size());
    CHECK(std::find(a.begin(), a.end(), "n003") == a.end());
    CHECK(std::find(a.begin(), a.end(), "n010") == a.end());
}

TEST_CASE("academic graph and preprint clients parse API payloads") {
    httplib::Server srv;
    srv.Get("/graph/v1/paper/search", [](const httplib::Request& r, httplib::Response& res) {
        CHECK(r.get_param_value("query") == "llm agents");
        json body = {{"data",
                      {{{"paperId", "74fdf80"}, {"externalIds", {{"ArXiv", "2406.10252"}}}, {"title", "T1"},
                        {"abstract", "A1"}, {"tldr", {{"text", "short"}}}, {"citationCount", 12}, {"year", 2024},
                        {"authors", {{{"name", "X"}}, {{"name", "Y"}}}}},
                       {{"paperId", "abc"}, {"externalIds", nullptr}, {"title", "T2"}, {"abstract", nullptr}}}}};
        res.set_content(body.dump(), "application/json");
    });
    srv.Get(R"(/graph/v1/paper/arXiv:2406\.10252/citations)", [](const httplib::Request&, httplib::Response& res) {
        json body = {{"data", {{{"citingPaper", {{"paperId", "c1"}, {"title", "C"}}}}, {{"citingPaper", {{"paperId", nullptr}}}}}}};
        res.set_content(body.dump(), "application/json");
    });
    srv.Get(R"(/graph/v1/paper/missing)", [](const httplib::Request&, httplib::Response& res) { res.status = 404; });
    srv.Get("/arxiv", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"(<feed><entry><id>http://arxiv.org/abs/2406.10252v2</id><published>2024-06-14T00:00:00Z</published>
<title>Auto
  Survey &amp; More</title><summary> Abstract text. </summary><author><name>A B</name></author></entry></feed>)",
                        "application/atom+xml");
    });
    const int port = srv.bind_to_any_port("127.0.0.1");
    std::thread t([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    const auto base = "http://127.0.0.1:" + std::to_string(port);
    auto transport = std::make_shared<llm::HttplibTransport>(5);

    AcademicGraphSource graph(transport, base + "/graph/v1", "");
    auto hits = graph.search("llm agents", 10);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].id.canonical() == "2406.10252");
    CHECK(hits[0].id.source() == IdSource::PreprintArchive);
    CHECK(hits[0].tldr == "short");
    CHECK(hits[0].metadata.at("citation_count") == "12");
    CHECK(hits[0].metadata.at("authors") == "X, Y");
    CHECK(hits[1].id.source() == IdSource::AcademicGraph);
    CHECK(hits[1].abstract.empty());
    auto cites = graph.citations(hits[0].id, 10);
    REQUIRE(cites.size() == 1);
    CHECK(cites[0].id.canonical() == "c1");
    CHECK_FALSE(graph.lookup(testutil::pid("missing")).has_value());
    CHECK(graph.references(testutil::pid("nothing-here"), 5).empty());
    AcademicGraphSource broken(transport, base + "/nowhere", "");
    CHECK_THROWS_AS(broken.search("x", 1), RetrievalError);

    PreprintArchiveSource arxiv(transport, base + "/arxiv");
    auto found = arxiv.search("survey", 5);
    REQUIRE(found.size() == 1);
    CHECK(found[0].id.canonical() == "2406.10252");
    CHECK(found[0].title == "Auto Survey & More");
    CHECK(found[0].abstract == "Abstract text.");
    CHECK(found[0].metadata.at("year") == "2024");
    CHECK(arxiv.citations(found[0].id, 5).empty());

    srv.stop();
    t.join();
}
