#include <doctest.h>

#include <fstream>
#include <random>

#include "helpers.hpp"
#include "litsynth/core/error.hpp"
#include "litsynth/llm/scripted.hpp"
#include "litsynth/llm/structured.hpp"
#include "litsynth/llm/tokens.hpp"
#include "litsynth/understanding/understanding.hpp"

using namespace litsynth;
using namespace litsynth::understanding;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Rig {
    std::shared_ptr<llm::ScriptedBackend> text = std::make_shared<llm::ScriptedBackend>();
    llm::Gateway gw;
    EventLog log;
    StageContext ctx{gw, log};

    explicit Rig(std::size_t window = 512000)
        : gw(text, std::make_shared<llm::HashingEmbeddingBackend>(), [window] {
              llm::GatewayOptions o;
              o.profile.context_window = window;
              o.sleeper = [](double) {};
              return o;
          }()) {}
};

// Shape of the keynote case in the paper's appendix: lists, nested objects and extras.
const char* kAppendixKeynote = R"({
  "title": "AutoSurvey: Large Language Models Can Automatically Write Surveys",
  "key_contributions": ["Introduction of AutoSurvey", "A two-stage parallel generation approach"],
  "methodology": "AutoSurvey follows a four-phase pipeline.",
  "experiments": {"setup": "20 topics", "baselines": ["Human-authored surveys", "Naive RAG"]},
  "results": "Near-human citation quality.",
  "limitations": ["Citation errors", "Automated evaluation"],
  "future_directions": ["Other domains"],
  "critical_reflections": ["Merging may hurt coherence"],
  "tldr": "AutoSurvey automates survey creation."
})";

void write(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << s;
}

std::string minimal_pdf() {
    std::string body = "%PDF-1.4\n1 0 obj\n<< /Type /Catalog >>\nendobj\n";
    const auto xref = body.size();
    body += "xref\n0 2\n0000000000 65535 f \n0000000009 00000 n \ntrailer\n<< /Size 2 /Root 1 0 R >>\n";
    body += "startxref\n" + std::to_string(xref) + "\n%%EOF\n";
    return body;
}

}  // namespace

TEST_CASE("keynote from the appendix shape") {
    Rig rig;
    rig.text->on("understanding.keynote", {kAppendixKeynote});
    ParsedDocument doc{testutil::pid("2406.10252"), "AutoSurvey", "# Intro\nText.\n", "x.md"};
    auto k = extract_keynote(doc, UnderstandingConfig{}, rig.ctx);
    CHECK(k.provenance == Provenance::FullText);
    for (auto f : {"contributions", "methodology", "experiments", "limitations", "tldr", "critical_reflections"})
        CHECK_FALSE(k.field(f).empty());
    CHECK(k.field("tldr") == "AutoSurvey automates survey creation.");
    CHECK(json::parse(k.field("contributions")).size() == 2);
    CHECK(k.sections.count("future_directions") == 1);
    CHECK(k.sections.count("key_contributions") == 0);
}

TEST_CASE("keynote missing tldr is retried with the field in error memory") {
    Rig rig;
    auto bad = json::parse(kAppendixKeynote);
    bad.erase("tldr");
    rig.text->on("understanding.keynote", {bad.dump(), kAppendixKeynote});
    ParsedDocument doc{testutil::pid("p1"), "P", "body", "x.md"};
    auto k = extract_keynote(doc, UnderstandingConfig{}, rig.ctx);
    CHECK_FALSE(k.field("tldr").empty());
    CHECK(rig.text->call_count() == 2);
    CHECK(rig.text->calls()[1].prompt.find("lacks field 'tldr'") != std::string::npos);
}

TEST_CASE("persistent invalid keynote becomes a keynote error") {
    Rig rig;
    rig.text->on("understanding.keynote", {"{}"});
    ParsedDocument doc{testutil::pid("p1"), "P", "body", "x.md"};
    CHECK_THROWS_AS(extract_keynote(doc, UnderstandingConfig{}, rig.ctx), KeynoteError);
}

TEST_CASE("long documents are chunked and merged") {
    Rig rig;
    rig.text->on("understanding.chunk", {R"({"methodology": "part notes"})"});
    rig.text->on("understanding.merge", {kAppendixKeynote});
    std::string md;
    for (int s = 0; s < 4; ++s) md += "# Section " + std::to_string(s) + "\n" + std::string(300, 'a' + static_cast<char>(s)) + "\n";
    UnderstandingConfig cfg;
    cfg.chunk_budget_tokens = 100;
    REQUIRE(llm::estimate_tokens(md) > cfg.chunk_budget_tokens);
    ParsedDocument doc{testutil::pid("p1"), "P", md, "x.md"};
    auto k = extract_keynote(doc, cfg, rig.ctx);
    CHECK(rig.text->call_count("understanding.chunk") >= 2);
    CHECK(rig.text->call_count("understanding.merge") == 1);
    for (auto f : kMandatoryKeynoteFields) CHECK_FALSE(k.field(f).empty());
    CHECK(rig.log.count(events::kCompression) >= 1);
}

TEST_CASE("context window drives chunking when no budget is set") {
    Rig rig(4096 + 1024 + 200);
    rig.text->on("understanding.chunk", {R"({"tldr": "n"})"});
    rig.text->on("understanding.merge", {kAppendixKeynote});
    std::string md = "# A\n" + std::string(600, 'x') + "\n# B\n" + std::string(600, 'y') + "\n";
    ParsedDocument doc{testutil::pid("p1"), "P", md, "x.md"};
    extract_keynote(doc, UnderstandingConfig{}, rig.ctx);
    CHECK(rig.text->call_count("understanding.chunk") >= 2);
}

TEST_CASE("keynote extraction is cache stable") {
    Rig rig;
    rig.text->on("understanding.keynote", {kAppendixKeynote});
    ParsedDocument doc{testutil::pid("p1"), "P", "body", "x.md"};
    auto a = extract_keynote(doc, UnderstandingConfig{}, rig.ctx);
    rig.text->reset_calls();
    auto b = extract_keynote(doc, UnderstandingConfig{}, rig.ctx);
    CHECK(a == b);
    CHECK(rig.text->call_count() == 0);
}

TEST_CASE("chunk_document keeps content and respects the budget") {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::string md;
        const int sections = 1 + static_cast<int>(rng() % 6);
        for (int s = 0; s < sections; ++s) {
            md += "# H" + std::to_string(s) + "\n";
            const int lines = static_cast<int>(rng() % 8);
            for (int l = 0; l < lines; ++l) md += std::string(rng() % 120, 'w') + "é\n";
        }
        const std::size_t budget = 10 + rng() % 90;
        auto chunks = chunk_document(md, budget);
        std::string joined;
        for (const auto& c : chunks) {
            CHECK(llm::estimate_tokens(c) <= budget);
            joined += c;
        }
        CHECK(joined == md);
    }
}

TEST_CASE("fallback keynotes") {
    auto a = fallback_keynote(testutil::paper("p", "T", "An abstract.", ""));
    REQUIRE(a);
    CHECK(a->provenance == Provenance::AbstractFallback);
    CHECK(a->field("tldr") == "An abstract.");
    auto t = fallback_keynote(testutil::paper("p", "T", "", "Short."));
    REQUIRE(t);
    CHECK(t->provenance == Provenance::TldrFallback);
    CHECK_FALSE(fallback_keynote(testutil::paper("p", "T", " ", "")).has_value());
}

TEST_CASE("validate_pdf") {
    testutil::TempDir dir;
    const auto good = dir / "good.pdf";
    write(good, minimal_pdf());
    CHECK(validate_pdf(good));
    CHECK(fs::exists(good));

    const auto cut = dir / "cut.pdf";
    const auto full = minimal_pdf();
    write(cut, full.substr(0, full.size() / 2));
    CHECK_FALSE(validate_pdf(cut));
    CHECK_FALSE(fs::exists(cut));

    const auto empty = dir / "empty.pdf";
    write(empty, "");
    CHECK_FALSE(validate_pdf(empty));

    const auto badxref = dir / "bad.pdf";
    auto broken = full;
    broken.replace(broken.find("startxref\n") + 10, 2, "99");
    write(badxref, broken);
    CHECK_FALSE(validate_pdf(badxref));

    CHECK_THROWS_AS(validate_pdf(dir / "missing.pdf"), IoError);
}

TEST_CASE("stage gives every paper exactly one keynote or skip") {
    testutil::TempDir dir;
    write(dir / "docs" / "p1.md", "# Intro\nFull text.\n");
    Rig rig;
    rig.text->on("understanding.keynote", {kAppendixKeynote});
    std::map<PaperId, PaperRecord> papers;
    auto p1 = testutil::paper("p1", "One", "abs");
    p1.full_text_ref = "p1.md";
    auto p2 = testutil::paper("p2", "Two", "abstract two");
    auto p3 = testutil::paper("p3", "Three", "", "tl");
    auto p4 = testutil::paper("p4", "Four");
    auto p5 = testutil::paper("p5", "Five", "abs five");
    p5.full_text_ref = "missing.md";
    for (auto* p : {&p1, &p2, &p3, &p4, &p5}) papers.emplace(p->id, *p);

    auto res = run_understanding(papers, dir / "docs", UnderstandingConfig{}, rig.ctx);
    CHECK(res.keynotes.size() + res.skipped.size() == papers.size());
    for (const auto& [id, k] : res.keynotes) {
        CHECK(std::find(res.skipped.begin(), res.skipped.end(), id) == res.skipped.end());
        if (k.provenance == Provenance::FullText) CHECK(papers.at(id).full_text_ref.has_value());
        else CHECK_FALSE(papers.at(id).full_text_ref.has_value());
    }
    CHECK(res.keynotes.at(testutil::pid("p1")).provenance == Provenance::FullText);
    CHECK(res.keynotes.at(testutil::pid("p3")).provenance == Provenance::TldrFallback);
    CHECK(res.skipped == std::vector<PaperId>{testutil::pid("p4")});
    CHECK(res.lost_full_text == std::vector<PaperId>{testutil::pid("p5")});
    CHECK(rig.log.count(events::kSkip) == 1);
}
