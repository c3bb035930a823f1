#include "litsynth/pipeline/offline.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include <json.hpp>

#include "litsynth/core/hashing.hpp"
#include "litsynth/core/text.hpp"
#include "litsynth/llm/structured.hpp"

namespace litsynth::pipeline {

using nlohmann::json;

namespace {

const std::set<std::string>& stopwords() {
    static const std::set<std::string> words{
        "about",   "across",  "after",    "also",     "among",   "approach", "approaches", "based",  "being",
        "between", "both",    "could",    "does",     "each",    "from",     "have",       "into",   "method",
        "methods", "more",    "most",     "other",    "over",    "paper",    "papers",     "same",   "show",
        "shows",   "such",    "than",     "that",     "their",   "them",     "then",       "there",  "these",
        "they",    "this",    "those",    "through",  "under",   "using",    "very",       "were",   "what",
        "when",    "where",   "which",    "while",    "with",    "within",   "work",       "works",  "would",
        "your",    "study",   "studies",  "results",  "propose", "proposes", "proposed",   "present", "presents",
        "introduce", "introduces", "new", "novel",    "survey",  "topic"};
    return words;
}

std::string str(const json& j, const char* key) {
    if (j.is_object() && j.contains(key) && j.at(key).is_string()) return j.at(key).get<std::string>();
    return "";
}

std::string first_sentence(const std::string& s) {
    const auto parts = text::split_sentences(s);
    return parts.empty() ? text::trim(s) : parts.front();
}

std::string no_hash(std::string s) {
    std::replace(s.begin(), s.end(), '#', ' ');
    return s;
}

std::string without_period(std::string s) {
    s = text::trim(s);
    while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?')) s.pop_back();
    return s;
}

std::string capitalized(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

std::string paper_text(const json& p) {
    std::string out;
    for (const char* k : {"title", "tldr", "contributions", "abstract", "methodology"}) out += str(p, k) + " ";
    return out;
}

// Body text of a parsed paper: no headings, no blank runs.
std::vector<std::string> body_sentences(const std::string& markdown) {
    std::string body;
    for (const auto& line : text::split_lines(markdown)) {
        const auto t = text::trim(line);
        if (t.empty() || t.starts_with("#")) continue;
        body += t + " ";
    }
    return text::split_sentences(body);
}

json keynote_from_sentences(const std::vector<std::string>& s) {
    auto pick = [&](std::size_t i) { return s.empty() ? std::string("Not stated.") : s[std::min(i, s.size() - 1)]; };
    std::string limitation = "The evaluation covers only the settings the authors report.";
    for (const auto& x : s)
        if (text::contains_icase(x, "limit")) limitation = x;
    return {{"key_contributions", json::array({pick(0)})},
            {"methodology", pick(1)},
            {"experiments", pick(2)},
            {"limitations", json::array({limitation})},
            {"critical_reflections", json::array({"The claims rest on the reported experiments; independent replication "
                                                  "would strengthen them."})},
            {"tldr", s.size() > 1 ? s[0] + " " + s[1] : pick(0)}};
}

json merge_notes(const json& notes) {
    json out = json::object();
    const std::vector<std::string> fields{"key_contributions", "methodology", "experiments", "limitations",
                                          "critical_reflections", "tldr"};
    for (const auto& f : fields) {
        for (const auto& n : notes)
            if (n.is_object() && n.contains(f) && !out.contains(f)) out[f] = n.at(f);
        if (!out.contains(f)) out[f] = f == "critical_reflections" ? "Independent replication would strengthen the claims."
                                                                   : "Not stated in the notes.";
    }
    return out;
}

// Theme words: frequent in the batch but not in nearly every paper.
std::vector<std::string> themes(const json& keynotes) {
    const std::size_t n = keynotes.size();
    std::map<std::string, std::size_t> df;
    for (const auto& k : keynotes) {
        const auto words = content_words(paper_text(k));
        for (const auto& w : std::set<std::string>(words.begin(), words.end())) ++df[w];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked;
    for (const auto& [w, c] : df)
        if (c >= 2 && c * 4 <= n * 3) ranked.push_back({w, c});
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    const std::size_t k = n < 4 ? 1 : std::clamp<std::size_t>(n / 4, 2, 4);
    std::vector<std::string> out;
    for (const auto& [w, c] : ranked) {
        if (out.size() == k) break;
        out.push_back(w);
    }
    if (out.empty()) out.push_back("general");
    return out;
}

std::string theme_of(const std::string& name) {
    const auto words = text::tokenize_words(name);
    return words.empty() ? "" : words.front();
}

bool mentions(const json& paper, const std::string& word) {
    const auto words = content_words(paper_text(paper));
    return std::find(words.begin(), words.end(), word) != words.end();
}

std::size_t bucket(const std::string& id, std::size_t n) { return n ? static_cast<std::size_t>(fnv1a64(id) % n) : 0; }

json cluster_design(const json& in) {
    if (in.contains("current_clusters")) return {{"clusters", in.at("current_clusters")}};
    json clusters = json::array();
    for (const auto& w : themes(in.value("keynotes", json::array())))
        clusters.push_back({{"name", capitalized(w) + " methods"},
                            {"summary", "Papers whose contributions center on " + w + "."}});
    return {{"clusters", clusters}};
}

json cluster_assign(const json& in) {
    const json clusters = in.value("clusters", json::array());
    json out = json::array();
    for (const auto& p : in.value("papers", json::array())) {
        json ids = json::array();
        for (const auto& c : clusters)
            if (mentions(p, theme_of(str(c, "name")))) ids.push_back(c.at("cluster_id"));
        if (ids.empty() && !clusters.empty()) ids.push_back(clusters[bucket(str(p, "paper_id"), clusters.size())].at("cluster_id"));
        out.push_back({{"paper_id", str(p, "paper_id")}, {"cluster_ids", ids}});
    }
    return {{"assignments", out}};
}

json relation_graph(const json& in) {
    json edges = json::array();
    std::map<std::string, std::string> titles;
    for (const auto& p : in.value("papers", json::array())) titles[str(p, "paper_id")] = str(p, "title");
    for (const auto& l : in.value("citation_links", json::array())) {
        const auto from = str(l, "from"), to = str(l, "to");
        edges.push_back({{"from", from},
                         {"to", to},
                         {"relation", "extension"},
                         {"description", (titles[to].empty() ? to : titles[to]) + " builds on " +
                                             (titles[from].empty() ? from : titles[from]) + "."}});
    }
    return edges;
}

json comparison_table(const json& in) {
    const std::size_t min_cols = in.value("min_columns", 3);
    json columns = json::array({"Focus", "Method", "Evidence"});
    for (std::size_t i = columns.size(); i < min_cols; ++i) columns.push_back("Aspect " + std::to_string(i + 1));
    json rows = json::array();
    for (const auto& p : in.value("papers", json::array())) {
        json cells = json::array();
        const std::vector<std::string> src{str(p, "tldr"), str(p, "methodology"), str(p, "experiments")};
        for (std::size_t i = 0; i < columns.size(); ++i) {
            std::string cell = i < src.size() ? first_sentence(src[i]) : "";
            if (cell.empty()) cell = "Not reported.";
            cells.push_back(std::string(text::utf8_prefix(cell, 160)));
        }
        rows.push_back({{"paper_id", str(p, "paper_id")}, {"cells", cells}});
    }
    return {{"columns", columns}, {"rows", rows}};
}

json guided_qa(const json& in) {
    const json papers = in.value("papers", json::array());
    const int n = in.value("n_questions", 1);
    json out = json::array();
    for (int q = 0; q < n; ++q) {
        const auto& a = papers[static_cast<std::size_t>(q) % papers.size()];
        const auto& b = papers[(static_cast<std::size_t>(q) + 1) % papers.size()];
        const auto ia = str(a, "paper_id"), ib = str(b, "paper_id");
        out.push_back({{"question", "How do the approaches of " + ia + " and " + ib + " differ, and where do they agree?"},
                       {"related", {ia, ib}},
                       {"answer", without_period(first_sentence(str(a, "tldr"))) + " <" + ia + ">, whereas " +
                                      without_period(first_sentence(str(b, "tldr"))) + " <" + ib + ">."}});
    }
    return out;
}

std::string inter_cluster(const json& in) {
    std::string out;
    for (const auto& c : in.value("clusters", json::array())) {
        const auto papers = c.value("papers", json::array());
        out += "The " + str(c, "name") + " cluster";
        if (!papers.empty()) out += ", represented by <" + str(papers[0], "paper_id") + ">,";
        out += " addresses " + without_period(str(c, "summary")) +
               " and shares open evaluation challenges with the other clusters.\n\n";
    }
    return out;
}

json outline(const json& in) {
    const std::string topic = str(in, "topic");
    json sections = json::array();
    sections.push_back({{"title", "Introduction"},
                        {"description", "Scope, motivation and organization of the survey on " + topic + "."},
                        {"subsections", json::array()}});
    for (const auto& c : in.value("clusters", json::array())) {
        const auto name = no_hash(str(c, "name"));
        sections.push_back(
            {{"title", name},
             {"description", no_hash(str(c, "summary"))},
             {"subsections", json::array({{{"title", "Representative Approaches"},
                                           {"description", "Main techniques of " + name + "."}},
                                          {{"title", "Comparative Analysis"},
                                           {"description", "Trade-offs among the " + name + "."}}})}});
    }
    sections.push_back({{"title", "Future Directions"},
                        {"description", "Open problems and promising research directions."},
                        {"subsections", json::array()}});
    sections.push_back({{"title", "Conclusion"}, {"description", "Summary of the main findings."}, {"subsections", json::array()}});
    return {{"title", "A Survey of " + capitalized(topic)}, {"sections", sections}};
}

json assign(const json& in) {
    const json sections = in.contains("outline") ? in.at("outline").value("sections", json::array()) : json::array();
    json out = json::array();
    std::size_t i = 0;
    for (const auto& p : in.value("key_papers", json::array())) {
        json a = json::object();
        for (const auto& s : sections) {
            const auto subs = s.value("subsections", json::array());
            if (subs.empty() || !mentions(p, theme_of(str(s, "title")))) continue;
            json titles = json::array();
            for (const auto& sub : subs) titles.push_back(str(sub, "title"));
            a[str(s, "title")] = titles;
        }
        if (a.empty() || i < 4) a["Introduction"] = json::array();
        out.push_back({{"paper_id", str(p, "paper_id")}, {"paper_title", str(p, "title")}, {"assignment", a}});
        ++i;
    }
    return out;
}

std::string draft(const json& in) {
    const bool by_title = str(in, "citation_format").starts_with("<paper title>");
    const std::size_t least_words = in.value("least_words", 150);
    const std::string title = no_hash(str(in, "title"));
    std::vector<std::string> marks, sentences;
    for (const auto& p : in.value("papers", json::array())) {
        const auto mark = "<" + (by_title ? str(p, "title") : str(p, "paper_id")) + ">";
        marks.push_back(mark);
        auto claim = without_period(no_hash(first_sentence(str(p, "tldr"))));
        if (claim.empty()) claim = "This work informs " + title;
        sentences.push_back(claim + " " + mark + ".");
    }
    std::string out = text::join(sentences, " ");
    if (marks.size() >= 2)
        out += " Together, " + marks[0] + " and " + marks[1] + " frame the design space discussed in this part.";
    out += "\n\n";
    static const std::vector<std::string> filler{
        "A recurring theme under " + title + " is how design choices trade accuracy against computational cost.",
        "Comparing these studies exposes differences in assumptions, training data and evaluation protocol.",
        "The contrasts suggest that no single technique dominates across every setting considered here.",
        "Several results depend on benchmark choices, which limits how far the conclusions generalize.",
        "The evidence also shows where controlled comparisons would clarify the remaining disagreements.",
    };
    std::size_t k = 0;
    while (text::word_count(out) < least_words + marks.size() * 6 + 10) {
        out += filler[k % filler.size()] + (k % filler.size() == filler.size() - 1 ? "\n\n" : " ");
        ++k;
    }
    return text::trim(out);
}

json refinement_plan(const json& in) {
    if (in.value("round", 1) > 1) return {{"plan", json::array({{{"skill", "finish"}}})}};
    json plan = json::array({{{"skill", "review"}}});
    const auto papers = in.value("papers", json::array());
    if (!papers.empty()) plan.push_back({{"skill", "read_keynotes"}, {"paper_ids", {str(papers[0], "paper_id")}}});
    plan.push_back({{"skill", "revise"}, {"instructions", "Tighten the synthesis and keep every citation."}});
    return {{"plan", plan}};
}

json refinement_review(const json& in) {
    return {{"scores", {{"critical_analysis", 7.5}, {"logical_coherence", 8}, {"academic_rigor", 7.5}, {"readability", 8}}},
            {"suggestions", {"Strengthen the comparison between the cited works."}},
            {"satisfactory", in.value("round", 1) > 1}};
}

json code_plan(const json& in) {
    const json state = in.value("state", json::object());
    const auto read = state.value("files_read", json::array());
    const int min_reads = state.value("min_reads", 3);
    json plan = json::array();
    if (!state.value("has_pseudocode", false)) {
        std::set<std::string> done;
        for (const auto& f : read) done.insert(f.get<std::string>());
        int have = static_cast<int>(done.size());
        for (const auto& f : in.value("files", json::array())) {
            if (have >= min_reads) break;
            const auto path = f.get<std::string>();
            if (done.count(path)) continue;
            plan.push_back({{"op", "get_source_code"}, {"path", path}, {"rationale", "key source file"}});
            ++have;
        }
        plan.push_back({{"op", "create"}});
        plan.push_back({{"op", "review"}});
        plan.push_back({{"op", "revise"}});
    }
    plan.push_back({{"op", "finish"}});
    return {{"plan", plan}};
}

std::string code_report(const json& in, const char* key) {
    std::string out = "## Implementation report\n\n";
    for (const auto& e : in.value(key, json::array()))
        out += "- <" + str(e, "paper_id") + "> structures its implementation around a main entry point and a core "
               "algorithm module.\n";
    return out;
}

std::string joined_reports(const json& in) {
    if (in.contains("reports_text")) return str(in, "reports_text");
    if (in.contains("batch_reports_text")) return str(in, "batch_reports_text");
    std::vector<std::string> parts;
    for (const char* key : {"reports", "batch_reports"})
        for (const auto& r : in.value(key, json::array()))
            if (r.is_string()) parts.push_back(r.get<std::string>());
    return text::join(parts, "\n\n");
}

bool entailed(const json& in) {
    const auto claim = content_words(str(in, "claim"));
    if (claim.empty()) return true;
    std::string premise;
    for (const auto& s : in.value("sources", json::array())) premise += str(s, "title") + " " + str(s, "text") + " ";
    const auto words = content_words(premise);
    const std::set<std::string> have(words.begin(), words.end());
    const std::set<std::string> need(claim.begin(), claim.end());
    std::size_t hit = 0;
    for (const auto& w : need) hit += have.count(w);
    return hit * 2 >= need.size();
}

}  // namespace

std::vector<std::string> content_words(std::string_view s) {
    std::vector<std::string> out;
    for (auto& w : text::tokenize_words(s))
        if (w.size() >= 4 && !stopwords().count(w) && !std::all_of(w.begin(), w.end(), ::isdigit)) out.push_back(std::move(w));
    return out;
}

llm::BackendReply OfflineBackend::generate(const llm::CompletionRequest& req) {
    {
        std::lock_guard lock(mutex_);
        ++calls_[req.tag];
    }
    const json in = llm::extract_input(req.prompt);
    const std::string& tag = req.tag;
    auto ok = [](const json& j) { return llm::BackendReply{200, j.dump()}; };
    auto ok_text = [](std::string t) { return llm::BackendReply{200, std::move(t)}; };

    if (tag == "retrieval.keywords") {
        const std::string topic = str(in, "topic");
        json out = json::array();
        for (const char* suffix : {" methods", " evaluation", " benchmarks"})
            if (static_cast<int>(out.size()) < in.value("count", 2)) out.push_back(topic + suffix);
        return ok(out);
    }
    if (tag == "retrieval.judge" || tag == "retrieval.rerank") {
        const auto topic = content_words(str(in, "topic"));
        json out = json::array();
        for (const auto& c : in.value("candidates", json::array())) {
            const auto words = content_words(str(c, "title") + " " + str(c, "abstract"));
            std::string shared;
            for (const auto& w : topic)
                if (std::find(words.begin(), words.end(), w) != words.end()) {
                    shared = w;
                    break;
                }
            out.push_back({{"paper_id", str(c, "paper_id")},
                           {"relevant", !shared.empty()},
                           {"note", shared.empty() ? "no overlap with the topic" : "discusses " + shared}});
        }
        return ok(out);
    }
    if (tag == "understanding.keynote") return ok(keynote_from_sentences(body_sentences(str(in, "full_text"))));
    if (tag == "understanding.chunk") {
        const auto s = body_sentences(str(in, "text"));
        json out = json::object();
        if (!s.empty()) out["tldr"] = s[0];
        if (s.size() > 1) out["methodology"] = s[1];
        return ok(out);
    }
    if (tag == "understanding.merge") {
        if (in.contains("notes")) return ok(merge_notes(in.at("notes")));
        return ok(keynote_from_sentences(body_sentences(in.dump())));
    }
    if (tag == "analysis.cluster_design") return ok(cluster_design(in));
    if (tag == "analysis.assign") return ok(cluster_assign(in));
    if (tag == "analysis.relation_graph") return ok(relation_graph(in));
    if (tag == "analysis.comparison_table") return ok(comparison_table(in));
    if (tag == "analysis.guided_qa") return ok(guided_qa(in));
    if (tag == "analysis.inter_cluster") return ok_text(inter_cluster(in));
    if (tag == "writing.outline") return ok(outline(in));
    if (tag == "writing.outline_refine") return ok(in.value("current_outline", outline(in)));
    if (tag == "writing.assign") return ok(assign(in));
    if (tag == "writing.subsection" || tag == "writing.section") return ok_text(draft(in));
    if (tag.starts_with("refinement.") && tag.ends_with(".planner")) return ok(refinement_plan(in));
    if (tag.starts_with("refinement.") && tag.ends_with(".review")) return ok(refinement_review(in));
    if (tag.starts_with("refinement.") && tag.ends_with(".revise")) return ok_text(str(in, "draft"));
    if (tag == "code.planner") return ok(code_plan(in));
    if (tag == "code.create")
        return ok_text("main():\n  load configuration and data\n  build the core model\n  run the main algorithm loop\n"
                       "  report metrics");
    if (tag == "code.review")
        return ok(json{{"conciseness", 8}, {"logical_structure", 8}, {"implementation_specificity", 7},
                       {"suggestions", {"Name the core data structures."}}});
    if (tag == "code.revise") return ok_text(str(in, "pseudocode") + "\n  // core data structures named explicitly");
    if (tag == "code.batch_report") return ok_text(code_report(in, "pseudocodes"));
    if (tag == "code.merge" || tag == "code.integrate") return ok_text(joined_reports(in));
    if (tag == "code.environment") return ok_text(code_report(in, "repositories"));
    if (tag == "evaluation.nli") return ok(json{{"entailed", entailed(in)}});
    if (tag == "evaluation.judge") {
        json scores;
        for (const char* k : {"synthesis", "organization", "comprehensiveness", "relevance", "readability",
                              "academic_rigor", "clarity_coherence", "critical_analysis", "novelty_insights",
                              "specificity", "future_directions"})
            scores[k] = 7;
        return ok(json{{"scores", scores}});
    }
    return {400, "offline backend has no reply for tag '" + tag + "'"};
}

std::size_t OfflineBackend::calls() const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& [t, c] : calls_) n += c;
    return n;
}

std::size_t OfflineBackend::calls_with_prefix(std::string_view prefix) const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& [t, c] : calls_)
        if (std::string_view(t).starts_with(prefix)) n += c;
    return n;
}

}  // namespace litsynth::pipeline
