#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "litsynth/core/types.hpp"
#include "litsynth/llm/context.hpp"

namespace litsynth::understanding {

inline constexpr const char* kStage = "understanding";

/// Markdown produced by the external PDF parser for one paper.
struct ParsedDocument {
    PaperId paper_id;
    std::string title;
    std::string markdown;
    std::filesystem::path source_path;
};

struct UnderstandingConfig {
    double temperature = 0.0;
    int max_retries = 3;
    int max_output_tokens = 4096;
    /// Token budget of the document part of one prompt; 0 derives it from the
    /// gateway's context window minus output and instruction overhead.
    std::size_t chunk_budget_tokens = 0;
    std::size_t workers = 4;
};

/// Reads `path` as a ParsedDocument. Throws IoError when missing or empty.
ParsedDocument load_document(const PaperId& id, const std::string& title, const std::filesystem::path& path);

/// Turns the model's keynote object into sections. Non-string values are kept
/// as compact JSON; "key_contributions" is stored as "contributions". Throws
/// OutputError naming the first missing or empty mandatory field.
std::map<std::string, std::string> parse_keynote_sections(const nlohmann::json& j);

/// Top-level "# " heading sections packed into chunks of at most
/// `budget_tokens`, with fixed windows for any section that is larger alone.
std::vector<std::string> chunk_document(const std::string& markdown, std::size_t budget_tokens);

/// One call when the document fits, otherwise per-chunk notes followed by a
/// consolidation call. Results are cached in the task tier by paper id and
/// document hash. Throws KeynoteError when the model never produces a valid keynote.
Keynote extract_keynote(const ParsedDocument& doc, const UnderstandingConfig& cfg, StageContext& ctx);

/// Abstract-based keynote, or TLDR-based when the abstract is empty.
/// std::nullopt is the skip signal: neither is available.
std::optional<Keynote> fallback_keynote(const PaperRecord& rec);

/// Structural PDF check: header, trailing %%EOF and a startxref offset that
/// points at a cross-reference section. Invalid files are deleted.
/// Throws IoError when the file does not exist.
bool validate_pdf(const std::filesystem::path& path);

struct UnderstandingResult {
    std::map<PaperId, Keynote> keynotes;
    std::vector<PaperId> skipped;
    std::vector<PaperId> lost_full_text;  // had a reference that could not be read
};

/// Relative full_text_ref values resolve against `documents_dir`. Records
/// whose document cannot be read lose their reference (logged) and take the
/// fallback path, so full-text provenance always implies a readable document.
UnderstandingResult run_understanding(std::map<PaperId, PaperRecord>& papers,
                                      const std::filesystem::path& documents_dir, const UnderstandingConfig& cfg,
                                      StageContext& ctx);

}  // namespace litsynth::understanding
