#include "litsynth/core/substrate.hpp"

#include <fstream>
#include <regex>
#include <sstream>

#include "litsynth/core/error.hpp"
#include "litsynth/core/hashing.hpp"
#include "litsynth/core/text.hpp"

namespace litsynth {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json ids_to_json(const auto& ids) {
    json arr = json::array();
    for (const PaperId& id : ids) arr.push_back(id.canonical());
    return arr;
}

json links_to_json(const std::vector<PaperId>& ids) {
    json arr = json::array();
    for (const auto& id : ids) arr.push_back({{"id", id.canonical()}, {"source", to_string(id.source())}});
    return arr;
}

std::vector<PaperId> links_from_json(const json& j) {
    std::vector<PaperId> out;
    for (const auto& e : j) out.emplace_back(e.at("id").get<std::string>(), id_source_from_string(e.at("source").get<std::string>()));
    return out;
}

std::vector<PaperId> ids_from_json(const json& j, const PaperResolver& resolve) {
    std::vector<PaperId> out;
    for (const auto& e : j) out.push_back(resolve(e.get<std::string>()));
    return out;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// Collects every PaperId referenced outside `papers`, tagged with where it was seen.
template <class Visit>
void visit_references(const KnowledgeSubstrate& s, Visit visit) {
    for (const auto& [key, k] : s.keynotes) {
        visit(key, "keynote key");
        visit(k.paper_id, "keynote");
    }
    for (const auto& c : s.clusters)
        for (const auto& m : c.members) visit(m, "cluster " + std::to_string(c.cluster_id));
    for (const auto& a : s.analyses) {
        const auto where = "analysis of cluster " + std::to_string(a.cluster_id);
        for (const auto& e : a.relation_graph) {
            visit(e.from, where);
            visit(e.to, where);
        }
        for (const auto& r : a.comparison_table.rows) visit(r.paper_id, where);
        for (const auto& q : a.qa_items)
            for (const auto& id : q.related) visit(id, where);
        for (const auto& sa : a.source_attributions)
            for (const auto& id : sa.sources) visit(id, where);
    }
    for (const auto& [id, _] : s.code_reports) visit(id, "code report");
    if (s.outline) {
        auto walk = [&](const OutlineNode& n, auto& self) -> void {
            for (const auto& id : n.assigned_papers) visit(id, "outline node '" + n.title + "'");
            for (const auto& c : n.children) self(c, self);
        };
        walk(*s.outline, walk);
    }
}

void check_draft_citations(const KnowledgeSubstrate& s) {
    std::map<std::string, bool> titles;
    for (const auto& [id, p] : s.papers) titles[text::normalize_title(p.title)] = true;
    for (const auto& d : s.drafts) {
        for (const auto& mark : d.citations) {
            const bool ok = mark.style == CitationStyle::IdMark ? s.find_paper(mark.key) != nullptr
                                                                 : titles.count(text::normalize_title(mark.key)) > 0;
            if (!ok)
                throw IntegrityError("draft '" + join_path(d.node_path) + "' cites unknown paper <" + mark.key + ">");
        }
    }
}

json node_to_json(const OutlineNode& n) {
    json children = json::array();
    for (const auto& c : n.children) children.push_back(node_to_json(c));
    return {{"title", n.title},
            {"description", n.description},
            {"assigned_papers", ids_to_json(n.assigned_papers)},
            {"children", children}};
}

json parse_file(const fs::path& path) {
    if (!fs::exists(path)) throw LoadError(path.string(), "file is missing");
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw LoadError(path.string(), e.what());
    }
}

template <class Fn>
auto guarded(const fs::path& path, Fn fn) {
    try {
        return fn();
    } catch (const IntegrityError&) {
        throw;
    } catch (const json::exception& e) {
        throw LoadError(path.string(), std::string("malformed content: ") + e.what());
    } catch (const InvalidInputError& e) {
        throw LoadError(path.string(), e.what());
    }
}

void clear_artifacts(const fs::path& dir) {
    if (!fs::exists(dir)) return;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == kSubstrateExt) fs::remove(entry.path());
}

}  // namespace

PaperId resolve_unchecked(const std::string& canonical) {
    static const std::regex kPreprint(R"(^(\d{4}\.\d{4,5}(v\d+)?|[a-z\-]+(\.[A-Z]{2})?/\d{7}(v\d+)?)$)");
    return PaperId(canonical, std::regex_match(canonical, kPreprint) ? IdSource::PreprintArchive
                                                                      : IdSource::AcademicGraph);
}

void write_file_atomic(const fs::path& path, const std::string& content) {
    std::error_code ec;
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw PersistenceError(path.parent_path().string(), ec.message());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw PersistenceError(tmp.string(), "cannot open for writing");
        out << content;
        if (!out) throw PersistenceError(tmp.string(), "write failed");
    }
    fs::rename(tmp, path, ec);
    if (ec) throw PersistenceError(path.string(), ec.message());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError(path.string(), "cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string paper_artifact_name(const PaperId& id) { return stable_hash(id.canonical()) + kSubstrateExt; }

json to_json(const PaperRecord& r) {
    return {{"id", r.id.canonical()},
            {"source", to_string(r.id.source())},
            {"title", r.title},
            {"abstract", r.abstract},
            {"tldr", r.tldr},
            {"full_text_ref", r.full_text_ref ? json(*r.full_text_ref) : json(nullptr)},
            {"in_citations", links_to_json(r.in_citations)},
            {"out_citations", links_to_json(r.out_citations)},
            {"repo_urls", r.repo_urls},
            {"metadata", r.metadata}};
}

PaperRecord paper_from_json(const json& j) {
    PaperRecord r{PaperId(j.at("id").get<std::string>(), id_source_from_string(j.at("source").get<std::string>())),
                  j.value("title", ""),
                  j.value("abstract", ""),
                  j.value("tldr", ""),
                  std::nullopt,
                  {},
                  {},
                  {},
                  {}};
    if (j.contains("full_text_ref") && !j["full_text_ref"].is_null())
        r.full_text_ref = j["full_text_ref"].get<std::string>();
    if (j.contains("in_citations")) r.in_citations = links_from_json(j["in_citations"]);
    if (j.contains("out_citations")) r.out_citations = links_from_json(j["out_citations"]);
    if (j.contains("repo_urls")) r.repo_urls = j["repo_urls"].get<std::vector<std::string>>();
    if (j.contains("metadata")) r.metadata = j["metadata"].get<std::map<std::string, std::string>>();
    validate(r);
    return r;
}

json to_json(const Keynote& k) {
    return {{"paper_id", k.paper_id.canonical()}, {"provenance", to_string(k.provenance)}, {"sections", k.sections}};
}

Keynote keynote_from_json(const json& j, const PaperResolver& resolve) {
    return Keynote{resolve(j.at("paper_id").get<std::string>()),
                   j.at("sections").get<std::map<std::string, std::string>>(),
                   provenance_from_string(j.at("provenance").get<std::string>())};
}

json to_json(const Cluster& c) {
    return {{"cluster_id", c.cluster_id}, {"name", c.name}, {"summary", c.summary}, {"members", ids_to_json(c.members)}};
}

Cluster cluster_from_json(const json& j, const PaperResolver& resolve) {
    Cluster c{j.at("cluster_id").get<int>(), j.at("name").get<std::string>(), j.value("summary", ""), {}};
    for (const auto& id : ids_from_json(j.at("members"), resolve)) c.members.insert(id);
    return c;
}

json to_json(const ClusterAnalysis& a) {
    json edges = json::array();
    for (const auto& e : a.relation_graph)
        edges.push_back({{"from", e.from.canonical()},
                         {"to", e.to.canonical()},
                         {"relation", relation_name(e)},
                         {"description", e.description}});
    json rows = json::array();
    for (const auto& r : a.comparison_table.rows) rows.push_back({{"paper_id", r.paper_id.canonical()}, {"cells", r.cells}});
    json qa = json::array();
    for (const auto& q : a.qa_items)
        qa.push_back({{"question", q.question}, {"related", ids_to_json(q.related)}, {"answer", q.answer}});
    json attributions = json::array();
    for (const auto& s : a.source_attributions)
        attributions.push_back({{"claim", s.claim}, {"sources", ids_to_json(s.sources)}});
    return {{"cluster_id", a.cluster_id},
            {"relation_graph", edges},
            {"comparison_table", {{"columns", a.comparison_table.columns}, {"rows", rows}}},
            {"qa_items", qa},
            {"source_attributions", attributions}};
}

ClusterAnalysis analysis_from_json(const json& j, const PaperResolver& resolve) {
    ClusterAnalysis a;
    a.cluster_id = j.at("cluster_id").get<int>();
    for (const auto& e : j.at("relation_graph"))
        a.relation_graph.push_back(make_relation(resolve(e.at("from").get<std::string>()),
                                                 resolve(e.at("to").get<std::string>()),
                                                 e.at("relation").get<std::string>(), e.value("description", "")));
    const auto& table = j.at("comparison_table");
    a.comparison_table.columns = table.at("columns").get<std::vector<std::string>>();
    for (const auto& r : table.at("rows"))
        a.comparison_table.rows.push_back(
            {resolve(r.at("paper_id").get<std::string>()), r.at("cells").get<std::vector<std::string>>()});
    for (const auto& q : j.at("qa_items"))
        a.qa_items.push_back({q.at("question").get<std::string>(), ids_from_json(q.at("related"), resolve),
                              q.at("answer").get<std::string>()});
    for (const auto& s : j.at("source_attributions"))
        a.source_attributions.push_back({s.at("claim").get<std::string>(), ids_from_json(s.at("sources"), resolve)});
    return a;
}

json to_json(const OutlineNode& n) { return node_to_json(n); }

OutlineNode outline_from_json(const json& j, const PaperResolver& resolve) {
    OutlineNode n{j.at("title").get<std::string>(), j.value("description", ""), {}, {}};
    for (const auto& id : ids_from_json(j.value("assigned_papers", json::array()), resolve)) n.assigned_papers.insert(id);
    for (const auto& c : j.value("children", json::array())) n.children.push_back(outline_from_json(c, resolve));
    return n;
}

json to_json(const DraftUnit& d) {
    json marks = json::array();
    for (const auto& m : d.citations) marks.push_back({{"style", to_string(m.style)}, {"key", m.key}});
    return {{"node_path", d.node_path}, {"text", d.text}, {"citations", marks}, {"granularity", to_string(d.granularity)}};
}

DraftUnit draft_from_json(const json& j) {
    DraftUnit d;
    d.node_path = j.at("node_path").get<std::vector<std::string>>();
    d.text = j.at("text").get<std::string>();
    for (const auto& m : j.at("citations"))
        d.citations.push_back({citation_style_from_string(m.at("style").get<std::string>()), m.at("key").get<std::string>()});
    d.granularity = granularity_from_string(j.at("granularity").get<std::string>());
    return d;
}

void check_integrity(const KnowledgeSubstrate& s) {
    visit_references(s, [&](const PaperId& id, const std::string& where) {
        if (!s.papers.count(id))
            throw IntegrityError(where + " references unknown paper " + id.canonical());
    });
    for (const auto& [key, k] : s.keynotes)
        if (!(key == k.paper_id)) throw IntegrityError("keynote stored under " + key.canonical() + " belongs to " + k.paper_id.canonical());
    if (s.outline) validate_outline(*s.outline);
    check_draft_citations(s);
}

void substrate_save(const KnowledgeSubstrate& s, const fs::path& dir) {
    check_integrity(s);

    json papers = json::array();
    for (const auto& [_, p] : s.papers) papers.push_back(to_json(p));
    json clusters = json::array();
    for (const auto& c : s.clusters) clusters.push_back(to_json(c));
    json analyses = json::array();
    for (const auto& a : s.analyses) analyses.push_back(to_json(a));
    json drafts = json::array();
    for (const auto& d : s.drafts) drafts.push_back(to_json(d));
    json log = json::array();
    for (const auto& e : s.revision_log) log.push_back({{"stage", e.stage}, {"kind", e.kind}, {"detail", e.detail}});

    try {
        fs::create_directories(dir / "keynotes");
        fs::create_directories(dir / "code_reports");
        clear_artifacts(dir / "keynotes");
        clear_artifacts(dir / "code_reports");
    } catch (const fs::filesystem_error& e) {
        throw PersistenceError(dir.string(), e.what());
    }

    write_file_atomic(dir / "papers.json", dump({{"topic", s.topic}, {"papers", papers}}));
    write_file_atomic(dir / "clusters.json", dump({{"clusters", clusters}}));
    write_file_atomic(dir / "analyses.json", dump({{"analyses", analyses}, {"inter_cluster", s.inter_cluster}}));
    write_file_atomic(dir / "outline.json", dump({{"outline", s.outline ? to_json(*s.outline) : json(nullptr)}}));
    write_file_atomic(dir / "drafts.json", dump({{"drafts", drafts}}));
    write_file_atomic(dir / "revision_log.json", dump({{"events", log}}));
    for (const auto& [id, k] : s.keynotes) write_file_atomic(dir / "keynotes" / paper_artifact_name(id), dump(to_json(k)));
    for (const auto& [id, r] : s.code_reports)
        write_file_atomic(dir / "code_reports" / paper_artifact_name(id),
                          dump({{"paper_id", id.canonical()},
                                {"code_report", r.code_report},
                                {"environment_report", r.environment_report}}));
}

KnowledgeSubstrate substrate_load(const fs::path& dir) {
    KnowledgeSubstrate s;

    const auto papers_path = dir / "papers.json";
    auto papers = parse_file(papers_path);
    guarded(papers_path, [&] {
        s.topic = papers.value("topic", "");
        for (const auto& p : papers.at("papers")) {
            auto rec = paper_from_json(p);
            auto id = rec.id;
            if (!s.papers.emplace(id, std::move(rec)).second)
                throw LoadError(papers_path.string(), "duplicate paper " + id.canonical());
        }
        return 0;
    });

    const PaperResolver resolve = [&](const std::string& canonical) -> PaperId {
        const auto* p = s.find_paper(canonical);
        if (!p) throw IntegrityError("reference to unknown paper " + canonical);
        return p->id;
    };

    const auto clusters_path = dir / "clusters.json";
    auto clusters = parse_file(clusters_path);
    guarded(clusters_path, [&] {
        for (const auto& c : clusters.at("clusters")) s.clusters.push_back(cluster_from_json(c, resolve));
        return 0;
    });

    const auto analyses_path = dir / "analyses.json";
    auto analyses = parse_file(analyses_path);
    guarded(analyses_path, [&] {
        for (const auto& a : analyses.at("analyses")) s.analyses.push_back(analysis_from_json(a, resolve));
        s.inter_cluster = analyses.value("inter_cluster", "");
        return 0;
    });

    const auto outline_path = dir / "outline.json";
    auto outline = parse_file(outline_path);
    guarded(outline_path, [&] {
        if (!outline.at("outline").is_null()) s.outline = outline_from_json(outline["outline"], resolve);
        return 0;
    });

    const auto drafts_path = dir / "drafts.json";
    auto drafts = parse_file(drafts_path);
    guarded(drafts_path, [&] {
        for (const auto& d : drafts.at("drafts")) s.drafts.push_back(draft_from_json(d));
        return 0;
    });

    const auto log_path = dir / "revision_log.json";
    auto log = parse_file(log_path);
    guarded(log_path, [&] {
        for (const auto& e : log.at("events"))
            s.revision_log.push_back({e.at("stage").get<std::string>(), e.at("kind").get<std::string>(),
                                      e.at("detail").get<std::string>()});
        return 0;
    });

    auto load_dir = [&](const fs::path& sub, auto on_file) {
        if (!fs::exists(sub)) throw LoadError(sub.string(), "directory is missing");
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(sub))
            if (entry.is_regular_file() && entry.path().extension() == kSubstrateExt) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            auto j = parse_file(f);
            guarded(f, [&] {
                on_file(f, j);
                return 0;
            });
        }
    };

    load_dir(dir / "keynotes", [&](const fs::path& f, const json& j) {
        auto k = keynote_from_json(j, resolve);
        if (f.filename() != paper_artifact_name(k.paper_id))
            throw LoadError(f.string(), "file name does not match hash of " + k.paper_id.canonical());
        auto id = k.paper_id;
        s.keynotes.emplace(id, std::move(k));
    });
    load_dir(dir / "code_reports", [&](const fs::path& f, const json& j) {
        auto id = resolve(j.at("paper_id").get<std::string>());
        if (f.filename() != paper_artifact_name(id))
            throw LoadError(f.string(), "file name does not match hash of " + id.canonical());
        s.code_reports.emplace(id, CodeReports{j.value("code_report", ""), j.value("environment_report", "")});
    });

    check_integrity(s);
    return s;
}

}  // namespace litsynth
