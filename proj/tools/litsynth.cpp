// Command-line driver: generate, evaluate, inspect and cache maintenance.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "litsynth/pipeline/config.hpp"
#include "litsynth/pipeline/pipeline.hpp"

namespace {

using namespace litsynth;
using namespace litsynth::pipeline;

constexpr int kOk = 0;
constexpr int kGeneric = 1;
constexpr int kConfig = 2;
constexpr int kStage = 3;
constexpr int kEvaluation = 4;

struct CommonOptions {
    std::string config_path;
    bool offline = false;
    std::string fixture;
};

PipelineConfig base_config(const CommonOptions& o) {
    PipelineConfig cfg = o.config_path.empty() ? PipelineConfig{} : load_config(o.config_path);
    if (o.offline) {
        cfg.backend.text = "offline";
        cfg.backend.embedding = "hashing";
        cfg.backend.fallback_source = "none";
    }
    if (!o.fixture.empty()) {
        cfg.backend.paper_source = "fixture";
        cfg.backend.fixture_path = o.fixture;
    }
    return cfg;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("-c,--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_flag("--offline", o.offline, "deterministic offline text backend, no network");
    cmd->add_option("--fixture", o.fixture, "paper fixture JSON used instead of the academic graph");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"litsynth: literature survey generation pipeline"};
    app.require_subcommand(1);

    CommonOptions gen_common;
    std::string topic, stop_after, generated_at;
    bool code_analysis = false, resume = false, verbose = false;
    auto* gen = app.add_subcommand("generate", "run the survey pipeline");
    add_common(gen, gen_common);
    gen->add_option("-t,--topic", topic, "survey topic");
    gen->add_flag("--enable-code-analysis", code_analysis, "analyze linked code repositories");
    gen->add_flag("--resume", resume, "continue from the checkpoint");
    gen->add_option("--stop-after", stop_after, "stop after the named stage");
    gen->add_option("--generated-at", generated_at, "timestamp written to the survey front matter");
    gen->add_flag("-v,--verbose", verbose, "echo pipeline events to stderr");

    CommonOptions eval_common;
    std::string survey, sidecar, eval_out, system = "litsynth";
    auto* eval = app.add_subcommand("evaluate", "score a generated survey");
    add_common(eval, eval_common);
    eval->add_option("-s,--survey", survey, "survey markdown file")->required();
    eval->add_option("--sidecar", sidecar, "citation map (default: citation_map.json next to the survey)");
    eval->add_option("-o,--out", eval_out, "report directory (default: <survey dir>/evaluation)");
    eval->add_option("--system", system, "system name in the report");

    CommonOptions insp_common;
    std::string substrate_dir;
    std::vector<std::string> selector;
    auto* insp = app.add_subcommand("inspect", "print a substrate artifact");
    add_common(insp, insp_common);
    insp->add_option("--substrate", substrate_dir, "substrate directory (default: from config)");
    insp->add_option("selector", selector, "papers | clusters | outline | keynote <id> | cluster <id> | analysis <id>")
        ->required();

    CommonOptions cache_common;
    std::string cache_dir;
    auto* cache = app.add_subcommand("cache", "cache maintenance");
    cache->require_subcommand(1);
    auto* clear = cache->add_subcommand("clear", "delete the response cache");
    add_common(clear, cache_common);
    clear->add_option("--cache-dir", cache_dir, "cache directory (default: from config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    try {
        if (gen->parsed()) {
            auto cfg = base_config(gen_common);
            if (!topic.empty()) cfg.topic = topic;
            if (code_analysis) cfg.code_analysis_enabled = cfg.code_analysis.enabled = true;
            cfg.validate();
            RunOptions opts;
            opts.resume = resume;
            opts.generated_at = generated_at;
            opts.echo_events = verbose;
            if (!stop_after.empty()) opts.stop_after = stage_from_string(stop_after);
            auto backends = make_backends(cfg);
            const auto summary = run_pipeline(cfg, backends, opts);
            for (auto s : summary.resumed) std::cout << "resumed  " << to_string(s) << "\n";
            for (auto s : summary.executed) std::cout << "executed " << to_string(s) << "\n";
            if (summary.survey_path) std::cout << "survey   " << summary.survey_path->string() << "\n";
            std::cout << "manifest " << (cfg.paths.output_dir / "manifest.json").string() << "\n";
            return kOk;
        }
        if (eval->parsed()) {
            auto cfg = base_config(eval_common);
            cfg.validate(false);
            auto backends = make_backends(cfg);
            EvaluateOptions opts;
            if (!sidecar.empty()) opts.sidecar = sidecar;
            if (!eval_out.empty()) opts.output_dir = eval_out;
            opts.system = system;
            try {
                const auto report = evaluate_files(survey, cfg, backends, opts);
                std::cout << evaluation::report_tsv({report});
                for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
                return report.complete() ? kOk : kEvaluation;
            } catch (const ConfigError&) {
                throw;
            } catch (const Error& e) {
                std::cerr << "evaluation failed: " << e.what() << "\n";
                return kEvaluation;
            }
        }
        if (insp->parsed()) {
            auto cfg = base_config(insp_common);
            try {
                const auto dir = substrate_dir.empty() ? cfg.paths.substrate_dir : std::filesystem::path(substrate_dir);
                std::cout << inspect(dir, selector);
            } catch (const InvalidInputError& e) {
                std::cerr << "usage error: " << e.what() << "\n";
                return kConfig;
            }
            return kOk;
        }
        if (clear->parsed()) {
            auto cfg = base_config(cache_common);
            const auto dir = cache_dir.empty() ? cfg.paths.cache_dir : std::filesystem::path(cache_dir);
            std::cout << "removed " << clear_cache(dir) << " cached files from " << dir.string() << "\n";
            return kOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const StageFailure& e) {
        std::cerr << e.what() << "\n";
        return kStage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kGeneric;
    }
    return kGeneric;
}
