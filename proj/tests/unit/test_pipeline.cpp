#include <doctest.h>

#include <fstream>

#include "e2e_rig.hpp"
#include "helpers.hpp"
#include "litsynth/core/substrate.hpp"
#include "litsynth/evaluation/evaluation.hpp"
#include "litsynth/writing/writing.hpp"

using namespace litsynth;
using namespace litsynth::pipeline;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Offline replies, except that the chosen tag prefix fails with a 400.
class FailingOn : public OfflineBackend {
public:
    explicit FailingOn(std::string prefix) : prefix_(std::move(prefix)) {}
    llm::BackendReply generate(const llm::CompletionRequest& req) override {
        if (req.tag.starts_with(prefix_)) return {400, "injected failure"};
        return OfflineBackend::generate(req);
    }

private:
    std::string prefix_;
};

}  // namespace

TEST_CASE("config round-trips through JSON and rejects unknown keys") {
    PipelineConfig cfg;
    cfg.topic = "graph neural networks";
    cfg.code_analysis_enabled = true;
    cfg.refinement.survey.max_rounds = 4;
    const auto back = config_from_json(config_to_json(cfg));
    CHECK(config_to_json(back) == config_to_json(cfg));
    CHECK(back.code_analysis.enabled);

    json j = config_to_json(cfg);
    j["retrieval"]["max_seed_paper"] = 3;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"topc", "x"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"retrieval", {{"per_seed_cap", "many"}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"writing", {{"citation_style", "footnote"}}}}), ConfigError);
}

TEST_CASE("defaults carry the documented parameters") {
    const PipelineConfig cfg;
    CHECK(cfg.retrieval.max_seed_papers == 15);
    CHECK(cfg.retrieval.per_seed_cap == 20);
    CHECK(cfg.retrieval.coarse_similarity_threshold == doctest::Approx(0.35));
    CHECK(cfg.code_analysis.max_rounds == 10);
    CHECK(cfg.code_analysis.min_reads == 3);
    CHECK(cfg.code_analysis.batch_size == 5);
    CHECK(cfg.refinement.survey.max_rounds == 5);
    CHECK(cfg.writing.subsection_least_citations == 3);
    CHECK(cfg.backend.profile.max_attempts == 10);
    CHECK_FALSE(cfg.code_analysis_enabled);
}

TEST_CASE("config validation") {
    PipelineConfig cfg;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_NOTHROW(cfg.validate(false));
    cfg.topic = "  ";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.topic = "topic";
    cfg.backend.paper_source = "fixture";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.backend.paper_source = "academic-graph";
    cfg.evaluation.premise_source = "fulltext";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.evaluation.premise_source = "keynote";
    cfg.retrieval.per_seed_cap = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config hash ignores paths but not parameters") {
    PipelineConfig a;
    a.topic = "t";
    auto b = a;
    b.paths.output_dir = "elsewhere";
    CHECK(config_hash(a) == config_hash(b));
    b.writing.subsection_least_words = 300;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("load_config reads a file and reports bad JSON") {
    testutil::TempDir dir;
    {
        std::ofstream(dir / "ok.json") << R"({"topic": "x", "refinement": {"survey": {"max_rounds": 2}}})";
        std::ofstream(dir / "bad.json") << "{topic";
    }
    const auto cfg = load_config(dir / "ok.json");
    CHECK(cfg.topic == "x");
    CHECK(cfg.refinement.survey.max_rounds == 2);
    CHECK(cfg.refinement.section.max_rounds == 3);
    CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
    CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
}

TEST_CASE("checkpoint stages must follow the plan order") {
    PipelineConfig cfg;
    const auto plan = stage_plan(cfg);
    REQUIRE(plan.size() == 5);
    Checkpoint cp{{Stage::Retrieval, Stage::Understanding}, "s", "h"};
    CHECK_NOTHROW(cp.validate(plan));
    cp.completed_stages = {Stage::Understanding};
    CHECK_THROWS_AS(cp.validate(plan), ConfigError);
    cfg.code_analysis_enabled = true;
    CHECK(stage_plan(cfg)[3] == Stage::CodeAnalysis);

    testutil::TempDir dir;
    const Checkpoint saved{{Stage::Retrieval}, dir / "sub", "abc"};
    save_checkpoint(saved, dir / "cp.json");
    const auto loaded = load_checkpoint(dir / "cp.json");
    REQUIRE(loaded);
    CHECK(loaded->completed_stages == saved.completed_stages);
    CHECK(loaded->config_hash == "abc");
    CHECK_FALSE(load_checkpoint(dir / "none.json"));
}

TEST_CASE("offline end-to-end run on the 12-paper fixture") {
    testutil::TempDir dir;
    auto cfg = testutil::e2e_config(dir.path());
    auto text = std::make_shared<OfflineBackend>();
    auto backends = testutil::e2e_backends(cfg, text);
    const auto summary = run_pipeline(cfg, backends, {false, std::nullopt, "2026-01-01T00:00:00Z"});

    CHECK(summary.finished);
    CHECK(summary.executed.size() == 5);
    REQUIRE(summary.survey_path);
    const auto s = substrate_load(cfg.paths.substrate_dir);
    CHECK(s.papers.size() == 12);
    CHECK(s.keynotes.size() == 12);
    CHECK(s.clusters.size() == 3);
    CHECK(s.analyses.size() == s.clusters.size());
    REQUIRE(s.outline);
    CHECK_FALSE(s.drafts.empty());
    CHECK(writing::locality_violations(s, cfg.writing.citation_style).empty());

    const auto survey = read_file(*summary.survey_path);
    const auto map = json::parse(read_file(cfg.paths.output_dir / "citation_map.json"));
    std::set<std::string> universe;
    for (const auto& [id, _] : s.papers) universe.insert(id.canonical());
    const auto ratio = evaluation::valid_citation_ratio(survey, evaluation::reference_numbers(map), universe);
    CHECK(ratio.denominator > 0);
    CHECK(ratio.value == doctest::Approx(1.0));

    const auto manifest = json::parse(read_file(cfg.paths.output_dir / "manifest.json"));
    CHECK(manifest["config_hash"] == config_hash(cfg));
    CHECK(manifest["backends"]["text"] == "offline");
    CHECK(manifest["gateway"].contains("cache_hits"));
    CHECK(fs::exists(cfg.paths.output_dir / "events.jsonl"));
    CHECK(fs::exists(cfg.paths.output_dir / "transcripts"));
    CHECK(text->calls_with_prefix("refinement.") > 0);
}

TEST_CASE("resume after an interruption skips completed stages") {
    testutil::TempDir dir;
    auto cfg = testutil::e2e_config(dir.path());
    auto first = std::make_shared<OfflineBackend>();
    auto b1 = testutil::e2e_backends(cfg, first);
    const auto partial = run_pipeline(cfg, b1, {false, Stage::Analysis, "t"});
    CHECK_FALSE(partial.finished);
    CHECK(partial.executed.size() == 3);
    CHECK(load_checkpoint(cfg.paths.checkpoint_path)->completed_stages.size() == 3);

    auto second = std::make_shared<OfflineBackend>();
    auto b2 = testutil::e2e_backends(cfg, second);
    const auto resumed = run_pipeline(cfg, b2, {true, std::nullopt, "t"});
    CHECK(resumed.finished);
    CHECK(resumed.resumed.size() == 3);
    CHECK(resumed.executed == std::vector<Stage>{Stage::Writing, Stage::Refinement});
    CHECK(second->calls_with_prefix("retrieval.") == 0);
    CHECK(second->calls_with_prefix("understanding.") == 0);
    CHECK(second->calls_with_prefix("analysis.") == 0);
    CHECK(second->calls_with_prefix("writing.") > 0);

    auto third = std::make_shared<OfflineBackend>();
    auto b3 = testutil::e2e_backends(cfg, third);
    const auto idle = run_pipeline(cfg, b3, {true, std::nullopt, "t"});
    CHECK(idle.finished);
    CHECK(idle.executed.empty());
    CHECK(third->calls() == 0);
    CHECK(idle.gateway_stats.transport_calls == 0);
}

TEST_CASE("resume refuses a changed configuration") {
    testutil::TempDir dir;
    auto cfg = testutil::e2e_config(dir.path());
    auto b = testutil::e2e_backends(cfg);
    run_pipeline(cfg, b, {false, Stage::Retrieval, "t"});
    cfg.writing.subsection_least_words = 300;
    auto b2 = testutil::e2e_backends(cfg);
    try {
        run_pipeline(cfg, b2, {true, std::nullopt, "t"});
        FAIL("resume should have been refused");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("refusing to resume") != std::string::npos);
    }
}

TEST_CASE("stage failure keeps the checkpoint at the last completed stage") {
    testutil::TempDir dir;
    auto cfg = testutil::e2e_config(dir.path());
    auto b = testutil::e2e_backends(cfg, std::make_shared<FailingOn>("writing."));
    try {
        run_pipeline(cfg, b, {false, std::nullopt, "t"});
        FAIL("writing should have failed");
    } catch (const StageFailure& e) {
        CHECK(e.stage() == Stage::Writing);
    }
    const auto cp = load_checkpoint(cfg.paths.checkpoint_path);
    REQUIRE(cp);
    CHECK(cp->completed_stages == std::vector<Stage>{Stage::Retrieval, Stage::Understanding, Stage::Analysis});
    CHECK(fs::exists(cfg.paths.output_dir / "events.jsonl"));

    auto ok = std::make_shared<OfflineBackend>();
    auto b2 = testutil::e2e_backends(cfg, ok);
    CHECK(run_pipeline(cfg, b2, {true, std::nullopt, "t"}).finished);
    CHECK(ok->calls_with_prefix("analysis.") == 0);
}

TEST_CASE("code analysis runs between analysis and writing when enabled") {
    testutil::TempDir dir;
    auto cfg = testutil::e2e_config(dir.path());
    cfg.code_analysis_enabled = true;
    cfg.code_analysis.enabled = true;
    auto text = std::make_shared<OfflineBackend>();
    auto b = testutil::e2e_backends(cfg, text);
    const auto summary = run_pipeline(cfg, b, {false, std::nullopt, "t"});
    CHECK(summary.finished);
    CHECK(summary.executed.size() == 6);
    CHECK(text->calls_with_prefix("code.") > 0);
    const auto s = substrate_load(cfg.paths.substrate_dir);
    CHECK_FALSE(s.code_reports.empty());
}

TEST_CASE("inspect selectors") {
    testutil::TempDir dir;
    auto cfg = testutil::e2e_config(dir.path());
    auto b = testutil::e2e_backends(cfg);
    run_pipeline(cfg, b, {false, Stage::Analysis, "t"});
    const auto& sub = cfg.paths.substrate_dir;

    const auto clusters = inspect(sub, {"clusters"});
    CHECK(clusters.rfind("cluster_id\tname\tsize\n", 0) == 0);
    const auto keynote = inspect(sub, {"keynote", "e2e-01"});
    CHECK(keynote.find("Dense Passage Encoders") != std::string::npos);
    CHECK(keynote.find("## methodology") != std::string::npos);
    CHECK(inspect(sub, {"papers"}).find("e2e-12") != std::string::npos);
    const auto first_line = clusters.substr(clusters.find('\n') + 1);
    const auto first_id = first_line.substr(0, first_line.find('\t'));
    CHECK(inspect(sub, {"analysis", first_id}).find("comparison_table") != std::string::npos);
    CHECK(inspect(sub, {"cluster", first_id}).find("e2e-") != std::string::npos);
    CHECK_THROWS_AS(inspect(sub, {"keynote", "nope"}), NotFoundError);
    CHECK_THROWS_AS(inspect(sub, {"cluster", "99"}), NotFoundError);
    CHECK_THROWS_AS(inspect(sub, {"outline"}), NotFoundError);
    CHECK_THROWS_AS(inspect(sub, {"drafts"}), InvalidInputError);
    CHECK_THROWS_AS(inspect(sub, {}), InvalidInputError);
    CHECK_THROWS_AS(inspect(sub, {"keynote"}), InvalidInputError);
}

TEST_CASE("evaluate_files scores a generated survey") {
    testutil::TempDir dir;
    auto cfg = testutil::e2e_config(dir.path());
    auto b = testutil::e2e_backends(cfg);
    const auto summary = run_pipeline(cfg, b, {false, std::nullopt, "t"});
    REQUIRE(summary.survey_path);

    const auto report = evaluate_files(*summary.survey_path, cfg, b);
    CHECK(report.complete());
    REQUIRE(report.valid_ratio.value);
    CHECK(*report.valid_ratio.value == doctest::Approx(1.0));
    REQUIRE(report.total.value);
    CHECK(*report.total.value == doctest::Approx(7.0));
    CHECK(fs::exists(cfg.paths.output_dir / "evaluation" / "report.tsv"));

    fs::copy_file(*summary.survey_path, dir / "lonely.md");
    CHECK_THROWS_AS(evaluate_files(dir / "lonely.md", cfg, b), NotFoundError);
    CHECK_THROWS_AS(evaluate_files(dir / "absent.md", cfg, b), NotFoundError);
}

TEST_CASE("clear_cache removes cached entries") {
    testutil::TempDir dir;
    auto cfg = testutil::e2e_config(dir.path());
    auto b = testutil::e2e_backends(cfg);
    run_pipeline(cfg, b, {false, Stage::Retrieval, "t"});
    CHECK(clear_cache(cfg.paths.cache_dir) > 0);
    CHECK_FALSE(fs::exists(cfg.paths.cache_dir));
    CHECK(clear_cache(cfg.paths.cache_dir) == 0);
}

TEST_CASE("offline backend answers unknown tags with 400") {
    OfflineBackend b;
    CHECK(b.generate({"prompt", 0.0, 10, "nope"}).status == 400);
    CHECK(content_words("The Dense retrievers, with 2024 data") == std::vector<std::string>{"dense", "retrievers", "data"});
}
