#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

#include "litsynth/core/types.hpp"

namespace litsynth {

inline constexpr const char* kSubstrateExt = ".json";

/// Throws IntegrityError naming the first dangling PaperId found in keynotes,
/// clusters, analyses, outline assignments, code reports or drafts.
void check_integrity(const KnowledgeSubstrate& s);

/// Writes one file per level plus hash-named per-paper keynote and code-report
/// files. Integrity is checked first; nothing is written when it fails.
void substrate_save(const KnowledgeSubstrate& s, const std::filesystem::path& dir);

/// Inverse of substrate_save; verifies integrity while resolving references.
KnowledgeSubstrate substrate_load(const std::filesystem::path& dir);

/// File name (without directory) of a per-paper artifact.
std::string paper_artifact_name(const PaperId& id);

// JSON forms shared with caches, the CLI inspector and reports.
using PaperResolver = std::function<PaperId(const std::string& canonical)>;

nlohmann::json to_json(const PaperRecord& r);
PaperRecord paper_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Keynote& k);
Keynote keynote_from_json(const nlohmann::json& j, const PaperResolver& resolve);
nlohmann::json to_json(const Cluster& c);
Cluster cluster_from_json(const nlohmann::json& j, const PaperResolver& resolve);
nlohmann::json to_json(const ClusterAnalysis& a);
ClusterAnalysis analysis_from_json(const nlohmann::json& j, const PaperResolver& resolve);
nlohmann::json to_json(const OutlineNode& n);
OutlineNode outline_from_json(const nlohmann::json& j, const PaperResolver& resolve);
nlohmann::json to_json(const DraftUnit& d);
DraftUnit draft_from_json(const nlohmann::json& j);

/// Resolver that accepts any id and tags it with the source a bare string implies.
PaperId resolve_unchecked(const std::string& canonical);

/// Writes text through a temporary file and rename, creating parent directories.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace litsynth
