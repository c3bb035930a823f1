#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "litsynth/core/types.hpp"
#include "litsynth/llm/http.hpp"

namespace litsynth::retrieval {

/// Scholarly metadata provider. Implementations throw RetrievalError when the
/// provider cannot be reached or answers with an error.
class PaperSource {
public:
    virtual ~PaperSource() = default;
    virtual std::string name() const = 0;
    virtual std::vector<PaperRecord> search(const std::string& query, int limit) = 0;
    /// Papers citing `id`.
    virtual std::vector<PaperRecord> citations(const PaperId& id, int limit) = 0;
    /// Papers cited by `id`.
    virtual std::vector<PaperRecord> references(const PaperId& id, int limit) = 0;
    virtual std::optional<PaperRecord> lookup(const PaperId& id) = 0;
};

/// In-memory source read from a JSON fixture:
/// {"papers": [{"id", "source"?, "title", "abstract"?, "tldr"?, "full_text_ref"?,
///              "references"?: [ids], "repo_urls"?, "metadata"?}]}
/// Incoming citations are derived by inverting "references". Search ranks by
/// shared word count with the query.
class FixturePaperSource : public PaperSource {
public:
    explicit FixturePaperSource(const nlohmann::json& fixture, std::string name = "fixture");
    static std::shared_ptr<FixturePaperSource> from_file(const std::filesystem::path& path, std::string name = "fixture");

    std::string name() const override { return name_; }
    std::vector<PaperRecord> search(const std::string& query, int limit) override;
    std::vector<PaperRecord> citations(const PaperId& id, int limit) override;
    std::vector<PaperRecord> references(const PaperId& id, int limit) override;
    std::optional<PaperRecord> lookup(const PaperId& id) override;

    /// While set, every call throws RetrievalError.
    void set_failing(bool failing);
    std::size_t call_count() const;
    const std::map<PaperId, PaperRecord>& records() const noexcept { return records_; }

private:
    void touch() const;
    std::vector<PaperRecord> resolve(const std::vector<PaperId>& ids, int limit) const;

    std::string name_;
    std::map<PaperId, PaperRecord> records_;
    mutable std::mutex mutex_;
    bool failing_ = false;
    mutable std::size_t calls_ = 0;
};

/// Academic-graph HTTP API client.
class AcademicGraphSource : public PaperSource {
public:
    AcademicGraphSource(std::shared_ptr<llm::HttpTransport> transport,
                        std::string base_url = "https://api.semanticscholar.org/graph/v1",
                        std::string api_key_env = "S2_API_KEY");

    std::string name() const override { return "academic-graph"; }
    std::vector<PaperRecord> search(const std::string& query, int limit) override;
    std::vector<PaperRecord> citations(const PaperId& id, int limit) override;
    std::vector<PaperRecord> references(const PaperId& id, int limit) override;
    std::optional<PaperRecord> lookup(const PaperId& id) override;

private:
    nlohmann::json get_json(const std::string& path_and_query, bool allow_404 = false);
    std::vector<PaperRecord> edges(const PaperId& id, const char* kind, const char* field, int limit);

    std::shared_ptr<llm::HttpTransport> transport_;
    std::string base_url_;
    std::string api_key_env_;
};

/// Record from one academic-graph paper object (the `fields` projection used above).
PaperRecord record_from_graph_json(const nlohmann::json& j);

/// Preprint-archive Atom API client. It has no citation data, so citations and
/// references are always empty.
class PreprintArchiveSource : public PaperSource {
public:
    PreprintArchiveSource(std::shared_ptr<llm::HttpTransport> transport,
                          std::string base_url = "http://export.arxiv.org/api/query");

    std::string name() const override { return "preprint-archive"; }
    std::vector<PaperRecord> search(const std::string& query, int limit) override;
    std::vector<PaperRecord> citations(const PaperId&, int) override { return {}; }
    std::vector<PaperRecord> references(const PaperId&, int) override { return {}; }
    std::optional<PaperRecord> lookup(const PaperId& id) override;

private:
    std::vector<PaperRecord> fetch(const std::string& query_string);

    std::shared_ptr<llm::HttpTransport> transport_;
    std::string base_url_;
};

std::vector<PaperRecord> parse_atom_feed(const std::string& xml);

}  // namespace litsynth::retrieval
