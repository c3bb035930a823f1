#include "litsynth/retrieval/source.hpp"

#include <algorithm>
#include <regex>
#include <set>

#include "litsynth/core/error.hpp"
#include "litsynth/core/substrate.hpp"
#include "litsynth/core/text.hpp"

namespace litsynth::retrieval {

using nlohmann::json;

namespace {

PaperId fixture_id(const json& j, const char* key = "id", const char* source_key = "source") {
    const auto canonical = j.at(key).get<std::string>();
    if (j.contains(source_key)) return PaperId(canonical, id_source_from_string(j[source_key].get<std::string>()));
    return resolve_unchecked(canonical);
}

std::set<std::string> content_words(std::string_view s) {
    std::set<std::string> out;
    for (auto& w : text::tokenize_words(s))
        if (w.size() >= 3) out.insert(std::move(w));
    return out;
}

}  // namespace

FixturePaperSource::FixturePaperSource(const json& fixture, std::string name) : name_(std::move(name)) {
    std::map<PaperId, std::set<PaperId>> cited_by;
    for (const auto& p : fixture.at("papers")) {
        PaperRecord r{fixture_id(p), p.value("title", ""), p.value("abstract", ""), p.value("tldr", ""),
                      std::nullopt, {}, {}, {}, {}};
        if (p.contains("full_text_ref") && p["full_text_ref"].is_string()) r.full_text_ref = p["full_text_ref"].get<std::string>();
        for (const auto& ref : p.value("references", json::array())) {
            auto id = resolve_unchecked(ref.get<std::string>());
            if (id == r.id) continue;
            if (std::find(r.out_citations.begin(), r.out_citations.end(), id) == r.out_citations.end())
                r.out_citations.push_back(id);
            cited_by[id].insert(r.id);
        }
        for (const auto& c : p.value("citations", json::array())) cited_by[r.id].insert(resolve_unchecked(c.get<std::string>()));
        r.repo_urls = p.value("repo_urls", std::vector<std::string>{});
        const json metadata = p.value("metadata", json::object());
        for (const auto& [k, v] : metadata.items())
            r.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
        auto id = r.id;
        if (!records_.emplace(id, std::move(r)).second)
            throw InvalidInputError("fixture lists paper " + id.canonical() + " twice");
    }
    for (auto& [id, r] : records_) {
        auto it = cited_by.find(id);
        if (it == cited_by.end()) continue;
        for (const auto& c : it->second)
            if (!(c == id)) r.in_citations.push_back(c);
    }
    for (const auto& [id, r] : records_) validate(r);
}

std::shared_ptr<FixturePaperSource> FixturePaperSource::from_file(const std::filesystem::path& path, std::string name) {
    try {
        return std::make_shared<FixturePaperSource>(json::parse(read_file(path)), std::move(name));
    } catch (const json::exception& e) {
        throw LoadError(path.string(), e.what());
    }
}

void FixturePaperSource::touch() const {
    std::lock_guard lock(mutex_);
    ++calls_;
    if (failing_) throw RetrievalError(name_ + ": source unavailable");
}

void FixturePaperSource::set_failing(bool failing) {
    std::lock_guard lock(mutex_);
    failing_ = failing;
}

std::size_t FixturePaperSource::call_count() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::vector<PaperRecord> FixturePaperSource::search(const std::string& query, int limit) {
    touch();
    const auto q = content_words(query);
    std::vector<std::pair<std::size_t, const PaperRecord*>> scored;
    for (const auto& [id, r] : records_) {
        std::size_t score = 0;
        const auto words = content_words(r.title + " " + r.abstract);
        for (const auto& w : q) score += words.count(w);
        if (score > 0) scored.emplace_back(score, &r);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<PaperRecord> out;
    for (const auto& [score, r] : scored) {
        if (static_cast<int>(out.size()) >= limit) break;
        out.push_back(*r);
    }
    return out;
}

std::vector<PaperRecord> FixturePaperSource::resolve(const std::vector<PaperId>& ids, int limit) const {
    std::vector<PaperRecord> out;
    for (const auto& id : ids) {
        if (static_cast<int>(out.size()) >= limit) break;
        if (auto it = records_.find(id); it != records_.end()) out.push_back(it->second);
    }
    return out;
}

std::vector<PaperRecord> FixturePaperSource::citations(const PaperId& id, int limit) {
    touch();
    auto it = records_.find(id);
    return it == records_.end() ? std::vector<PaperRecord>{} : resolve(it->second.in_citations, limit);
}

std::vector<PaperRecord> FixturePaperSource::references(const PaperId& id, int limit) {
    touch();
    auto it = records_.find(id);
    return it == records_.end() ? std::vector<PaperRecord>{} : resolve(it->second.out_citations, limit);
}

std::optional<PaperRecord> FixturePaperSource::lookup(const PaperId& id) {
    touch();
    auto it = records_.find(id);
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

// ---- academic graph -------------------------------------------------------

namespace {

constexpr const char* kGraphFields = "paperId,externalIds,title,abstract,tldr,citationCount,year,venue,authors";

std::string graph_ref(const PaperId& id) {
    return id.source() == IdSource::PreprintArchive ? "arXiv:" + id.canonical() : id.canonical();
}

}  // namespace

PaperRecord record_from_graph_json(const json& j) {
    std::optional<std::string> preprint, graph;
    if (j.contains("externalIds") && j["externalIds"].is_object()) {
        const auto& ext = j["externalIds"];
        if (ext.contains("ArXiv") && ext["ArXiv"].is_string()) preprint = ext["ArXiv"].get<std::string>();
    }
    if (j.contains("paperId") && j["paperId"].is_string()) graph = j["paperId"].get<std::string>();
    PaperRecord r{unify_paper_id(preprint, graph), "", "", "", std::nullopt, {}, {}, {}, {}};
    auto str = [&](const char* k) { return j.contains(k) && j[k].is_string() ? j[k].get<std::string>() : std::string(); };
    r.title = str("title");
    r.abstract = str("abstract");
    if (j.contains("tldr") && j["tldr"].is_object() && j["tldr"].contains("text") && j["tldr"]["text"].is_string())
        r.tldr = j["tldr"]["text"].get<std::string>();
    if (j.contains("citationCount") && j["citationCount"].is_number_integer())
        r.metadata["citation_count"] = std::to_string(j["citationCount"].get<long long>());
    if (j.contains("year") && j["year"].is_number_integer()) r.metadata["year"] = std::to_string(j["year"].get<int>());
    if (!str("venue").empty()) r.metadata["venue"] = str("venue");
    if (graph && preprint) r.metadata["graph_id"] = *graph;
    if (j.contains("authors") && j["authors"].is_array()) {
        std::vector<std::string> names;
        for (const auto& a : j["authors"])
            if (a.contains("name") && a["name"].is_string()) names.push_back(a["name"].get<std::string>());
        if (!names.empty()) r.metadata["authors"] = text::join(names, ", ");
    }
    return r;
}

AcademicGraphSource::AcademicGraphSource(std::shared_ptr<llm::HttpTransport> transport, std::string base_url,
                                         std::string api_key_env)
    : transport_(std::move(transport)), base_url_(std::move(base_url)), api_key_env_(std::move(api_key_env)) {}

json AcademicGraphSource::get_json(const std::string& path_and_query, bool allow_404) {
    llm::HttpHeaders headers;
    const auto key = llm::token_from_env(api_key_env_);
    if (!key.empty()) headers.emplace("x-api-key", key);
    auto res = transport_->get(base_url_ + path_and_query, headers);
    if (allow_404 && res.status == 404) return nullptr;
    if (res.status != 200)
        throw RetrievalError("academic-graph request " + path_and_query + " failed with status " + std::to_string(res.status));
    try {
        return json::parse(res.body);
    } catch (const json::exception& e) {
        throw RetrievalError(std::string("academic-graph returned malformed JSON: ") + e.what());
    }
}

std::vector<PaperRecord> AcademicGraphSource::search(const std::string& query, int limit) {
    auto j = get_json("/paper/search?query=" + llm::url_encode(query) + "&limit=" + std::to_string(limit) +
                      "&fields=" + kGraphFields);
    std::vector<PaperRecord> out;
    for (const auto& p : j.value("data", json::array()))
        if (p.contains("paperId") && p["paperId"].is_string()) out.push_back(record_from_graph_json(p));
    return out;
}

std::vector<PaperRecord> AcademicGraphSource::edges(const PaperId& id, const char* kind, const char* field, int limit) {
    auto j = get_json("/paper/" + llm::url_encode(graph_ref(id)) + "/" + kind + "?limit=" + std::to_string(limit) +
                      "&fields=" + kGraphFields, true);
    std::vector<PaperRecord> out;
    if (j.is_null()) return out;
    for (const auto& e : j.value("data", json::array())) {
        if (!e.contains(field) || !e[field].is_object()) continue;
        const auto& p = e[field];
        if (p.contains("paperId") && p["paperId"].is_string()) out.push_back(record_from_graph_json(p));
    }
    return out;
}

std::vector<PaperRecord> AcademicGraphSource::citations(const PaperId& id, int limit) {
    return edges(id, "citations", "citingPaper", limit);
}

std::vector<PaperRecord> AcademicGraphSource::references(const PaperId& id, int limit) {
    return edges(id, "references", "citedPaper", limit);
}

std::optional<PaperRecord> AcademicGraphSource::lookup(const PaperId& id) {
    auto j = get_json("/paper/" + llm::url_encode(graph_ref(id)) + "?fields=" + kGraphFields, true);
    if (j.is_null()) return std::nullopt;
    return record_from_graph_json(j);
}

// ---- preprint archive -----------------------------------------------------

namespace {

std::string xml_unescape(std::string s) {
    static const std::pair<const char*, const char*> kEntities[] = {
        {"&lt;", "<"}, {"&gt;", ">"}, {"&quot;", "\""}, {"&apos;", "'"}, {"&amp;", "&"}};
    for (const auto& [from, to] : kEntities) {
        std::size_t pos = 0;
        const std::string f(from);
        while ((pos = s.find(f, pos)) != std::string::npos) {
            s.replace(pos, f.size(), to);
            pos += std::string(to).size();
        }
    }
    return s;
}

std::string collapse_ws(const std::string& s) {
    std::string out;
    bool space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = !out.empty();
            continue;
        }
        if (space) out.push_back(' ');
        space = false;
        out.push_back(c);
    }
    return out;
}

std::string first_tag(const std::string& xml, const std::string& tag) {
    const std::regex re("<" + tag + R"((?:\s[^>]*)?>([\s\S]*?)</)" + tag + ">");
    std::smatch m;
    return std::regex_search(xml, m, re) ? collapse_ws(xml_unescape(m[1].str())) : std::string();
}

}  // namespace

std::vector<PaperRecord> parse_atom_feed(const std::string& xml) {
    static const std::regex kEntry(R"(<entry>([\s\S]*?)</entry>)");
    static const std::regex kAbsId(R"(abs/([^\s<]+?)(v\d+)?$)");
    static const std::regex kAuthor(R"(<author>\s*<name>([\s\S]*?)</name>)");
    std::vector<PaperRecord> out;
    for (auto it = std::sregex_iterator(xml.begin(), xml.end(), kEntry); it != std::sregex_iterator(); ++it) {
        const std::string entry = (*it)[1].str();
        const auto raw_id = first_tag(entry, "id");
        std::smatch m;
        if (!std::regex_search(raw_id, m, kAbsId)) continue;
        PaperRecord r{PaperId(m[1].str(), IdSource::PreprintArchive), first_tag(entry, "title"),
                      first_tag(entry, "summary"), "", std::nullopt, {}, {}, {}, {}};
        std::vector<std::string> authors;
        for (auto a = std::sregex_iterator(entry.begin(), entry.end(), kAuthor); a != std::sregex_iterator(); ++a)
            authors.push_back(collapse_ws(xml_unescape((*a)[1].str())));
        if (!authors.empty()) r.metadata["authors"] = text::join(authors, ", ");
        const auto published = first_tag(entry, "published");
        if (published.size() >= 4) r.metadata["year"] = published.substr(0, 4);
        out.push_back(std::move(r));
    }
    return out;
}

PreprintArchiveSource::PreprintArchiveSource(std::shared_ptr<llm::HttpTransport> transport, std::string base_url)
    : transport_(std::move(transport)), base_url_(std::move(base_url)) {}

std::vector<PaperRecord> PreprintArchiveSource::fetch(const std::string& query_string) {
    auto res = transport_->get(base_url_ + "?" + query_string, {});
    if (res.status != 200)
        throw RetrievalError("preprint-archive request failed with status " + std::to_string(res.status));
    return parse_atom_feed(res.body);
}

std::vector<PaperRecord> PreprintArchiveSource::search(const std::string& query, int limit) {
    return fetch("search_query=all:" + llm::url_encode(query) + "&start=0&max_results=" + std::to_string(limit));
}

std::optional<PaperRecord> PreprintArchiveSource::lookup(const PaperId& id) {
    if (id.source() != IdSource::PreprintArchive) return std::nullopt;
    auto found = fetch("id_list=" + llm::url_encode(id.canonical()));
    if (found.empty()) return std::nullopt;
    return found.front();
}

}  // namespace litsynth::retrieval
