#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "litsynth/llm/scripted.hpp"
#include "litsynth/pipeline/config.hpp"
#include "litsynth/pipeline/offline.hpp"
#include "litsynth/pipeline/pipeline.hpp"
#include "litsynth/retrieval/source.hpp"

namespace testutil {

/// Offline config over the 12-paper fixture, with every output under `root`.
inline litsynth::pipeline::PipelineConfig e2e_config(const std::filesystem::path& root) {
    const std::filesystem::path fixtures = LITSYNTH_FIXTURES;
    litsynth::pipeline::PipelineConfig cfg;
    cfg.topic = "retrieval augmented generation";
    cfg.retrieval.max_seed_papers = 8;
    cfg.retrieval.coarse_similarity_threshold = 0.2;
    cfg.backend.text = "offline";
    cfg.backend.paper_source = "fixture";
    cfg.backend.fallback_source = "none";
    cfg.backend.fixture_path = (fixtures / "e2e" / "papers.json").string();
    cfg.paths.cache_dir = root / "cache";
    cfg.paths.substrate_dir = root / "substrate";
    cfg.paths.checkpoint_path = root / "checkpoint.json";
    cfg.paths.output_dir = root / "output";
    cfg.paths.documents_dir = fixtures / "e2e";
    cfg.paths.repos_dir = fixtures / "repos";
    return cfg;
}

/// Offline backends with a caller-visible responder and no sleeping.
inline litsynth::pipeline::Backends e2e_backends(const litsynth::pipeline::PipelineConfig& cfg,
                                                 std::shared_ptr<litsynth::llm::TextBackend> text = nullptr) {
    auto b = litsynth::pipeline::make_backends(cfg);
    if (text) b.text = std::move(text);
    b.sleeper = [](double) {};
    return b;
}

}  // namespace testutil
