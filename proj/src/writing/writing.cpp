#include "litsynth/writing/writing.hpp"

#include <algorithm>
#include <optional>

#include "litsynth/core/error.hpp"
#include "litsynth/core/parallel.hpp"
#include "litsynth/core/substrate.hpp"
#include "litsynth/core/text.hpp"
#include "litsynth/llm/structured.hpp"
#include "litsynth/llm/tokens.hpp"

namespace litsynth::writing {

using nlohmann::json;

void WritingConfig::validate() const {
    if (subsection_least_citations < 1 || subsection_least_words < 1 || section_least_citations < 1 ||
        section_least_words < 1)
        throw ConfigError("writing floors must be positive");
    if (max_citation_retries < 0 || max_retries < 0) throw ConfigError("retry counts must be non-negative");
    if (outline_batch_size == 0 || assign_batch_size == 0) throw ConfigError("writing batch sizes must be positive");
    if (max_output_tokens == 0) throw ConfigError("max_output_tokens must be positive");
}

namespace {

const char* kOutlineCreatePrompt =
    "You are an expert research survey generator. Create a survey outline for the topic in the input from the\n"
    "cluster structure and the analysis results of the papers (`papers_analysis`). The analysis results are\n"
    "the main source of guidance.\n"
    "Requirements:\n"
    "1. Several sections with subsections, each with a description of the content to include.\n"
    "2. The content of each subsection must fall within the scope of its section.\n"
    "3. Cover a wide range of content under the topic while staying within its scope.\n"
    "4. The outline must contain a Conclusion section and a Future Work section or subsection.\n"
    "5. Keep a balanced number of subsections in the main sections and a coherent flow between sections.\n"
    "   Do not add a conclusion subsection to every section.\n"
    "6. Do not include paper ids in the outline.\n"
    "Output strictly JSON:\n"
    "{\"title\": \"Survey title\", \"sections\": [{\"title\": \"...\", \"description\": \"...\",\n"
    "  \"subsections\": [{\"title\": \"...\", \"description\": \"...\"}]}]}";

const char* kOutlineRefinePrompt =
    "You are an expert research survey generator. Update the existing survey outline (`current_outline`) with\n"
    "a batch of new paper keynotes (`key_papers`) and the analysis results (`papers_analysis`). The analysis\n"
    "results are the main source of guidance; keynotes supplement, validate or add detail.\n"
    "Requirements:\n"
    "1. Use the current outline as the base structure. Keep existing sections and subsections unless they\n"
    "   are updated or merged.\n"
    "2. Make sure most of the new papers fit into at least one section or subsection.\n"
    "3. The content of each subsection must fall within the scope of its section.\n"
    "4. The outline must contain a Conclusion section and a Future Work section or subsection.\n"
    "5. Keep a balanced number of subsections in the main sections and a coherent flow between sections.\n"
    "6. Do not include paper ids in the outline.\n"
    "Output the complete updated outline strictly as JSON:\n"
    "{\"title\": \"Survey title\", \"sections\": [{\"title\": \"...\", \"description\": \"...\",\n"
    "  \"subsections\": [{\"title\": \"...\", \"description\": \"...\"}]}]}";

const char* kAssignPrompt =
    "You are an expert research survey writer. Assign the papers to be cited to the sections and subsections\n"
    "of the outline, by relevance to their topics.\n"
    "Requirements:\n"
    "1. Assign EVERY paper in `key_papers` to one or more sections or subsections.\n"
    "2. Section and subsection titles in your assignment must EXACTLY match the titles in the outline.\n"
    "3. You may also assign suitable papers from `other_relevant_papers`.\n"
    "4. ONLY assign papers that appear in the input.\n"
    "An empty subsection list assigns the paper to the section itself. Output strictly a JSON list:\n"
    "[{\"paper_id\": \"...\", \"paper_title\": \"...\", \"assignment\": {\"Section title\": [\"Subsection title\"]}}]";

const char* kSubsectionPrompt =
    "You are an expert in writing surveys to top academic conference standards. Write the subsection named in\n"
    "`title` of the survey. Explain, analyze and discuss the topic given by the title and description,\n"
    "synthesizing the papers and the analysis insights. Emphasize insights, trends and comparisons; do not\n"
    "simply list papers. Keep the content coherent with the survey outline.\n"
    "Output rules:\n"
    "- Several coherent paragraphs in academic style.\n"
    "- Only cite papers listed in `papers`, using the format given in `citation_format`.\n"
    "- Cite at least `least_citations` different papers.\n"
    "- At least `least_words` words.\n"
    "- No bibliography, no title and no section header.\n"
    "- CRITICAL: '#' is used for section anchors. Avoid any '#' in the output content.";

const char* kSectionPrompt =
    "You are writing the introductory paragraphs of a section of a survey paper: the text right after the\n"
    "section title and before its first subsection. Synthesize rather than summarize: explain why the section\n"
    "is structured this way, define its core concepts and scope, and identify the trends that link the\n"
    "subsections. Use a formal, objective voice.\n"
    "Output rules:\n"
    "- Only cite papers listed in `papers`, using the format given in `citation_format`.\n"
    "- Cite at least `least_citations` papers to ground the section scope.\n"
    "- At least `least_words` words, but keep the preamble short enough to preserve structure.\n"
    "- Do not repeat the subsection content.\n"
    "- CRITICAL: '#' is used for section anchors. Avoid any '#' in the output content.";

std::string citation_format(CitationStyle style) {
    return style == CitationStyle::TitleMark ? "<paper title>, for example <Attention is All You Need>"
                                             : "<paper id>, for example <2401.00001>";
}

std::string clean_title(std::string_view t) {
    std::string s = text::trim(t);
    std::size_t i = 0;
    while (i < s.size() && s[i] == '#') ++i;
    return text::trim(std::string_view(s).substr(i));
}

const std::string& string_field(const json& item, const char* key) {
    if (!item.is_object() || !item.contains(key) || !item[key].is_string())
        throw OutputError(std::string("every outline entry needs a string '") + key + "'");
    return item[key].get_ref<const std::string&>();
}

OutlineNode parse_node(const json& item) {
    OutlineNode n;
    n.title = clean_title(string_field(item, "title"));
    n.description = text::trim(string_field(item, "description"));
    return n;
}

void shrink_strings(json& j) {
    if (j.is_string()) {
        const auto& s = j.get_ref<const std::string&>();
        const auto len = text::utf8_length(s);
        if (len > 32) j = std::string(text::utf8_prefix(s, len / 2));
    } else if (j.is_array() || j.is_object()) {
        for (auto& v : j) shrink_strings(v);
    }
}

std::size_t prompt_budget(const WritingConfig& cfg, StageContext& ctx) {
    const auto window = ctx.gateway.profile().context_window;
    const auto reserve = cfg.max_output_tokens + 512;
    return window > reserve ? window - reserve : 0;
}

/// Renders the prompt, halving long strings under `shrinkable` keys until it fits.
std::string fit_prompt(const char* instructions, json input, const std::vector<std::string>& shrinkable,
                       std::size_t budget, const std::string& what, StageContext& ctx) {
    std::string prompt = llm::render_prompt(instructions, input);
    int halvings = 0;
    while (llm::estimate_tokens(prompt) > budget && halvings < 24) {
        for (const auto& key : shrinkable)
            if (input.contains(key)) shrink_strings(input[key]);
        ++halvings;
        prompt = llm::render_prompt(instructions, input);
    }
    if (halvings > 0)
        ctx.log.record(events::kCompression, kStage, what + " context halved " + std::to_string(halvings) + " times");
    return prompt;
}

json keynote_digest(const PaperId& id, const KnowledgeSubstrate& s, bool full) {
    json d{{"paper_id", id.canonical()}};
    if (const auto* p = s.find_paper(id)) d["title"] = p->title;
    auto k = s.keynotes.find(id);
    if (k == s.keynotes.end()) {
        if (const auto* p = s.find_paper(id)) d["tldr"] = p->tldr.empty() ? p->abstract : p->tldr;
        return d;
    }
    d["tldr"] = k->second.field("tldr");
    const std::vector<const char*> brief{"contributions"};
    const std::vector<const char*> all{"contributions", "methodology", "experiments", "limitations",
                                       "critical_reflections"};
    for (const char* f : full ? all : brief)
        if (!k->second.field(f).empty()) d[f] = k->second.field(f);
    return d;
}

json analysis_digest(const KnowledgeSubstrate& s, const std::set<PaperId>* focus) {
    json out = json::array();
    for (const auto& c : s.clusters) {
        if (focus && std::none_of(c.members.begin(), c.members.end(), [&](const PaperId& m) { return focus->count(m); }))
            continue;
        json cj{{"cluster", c.name}, {"summary", c.summary}};
        auto a = std::find_if(s.analyses.begin(), s.analyses.end(),
                              [&](const ClusterAnalysis& x) { return x.cluster_id == c.cluster_id; });
        if (a != s.analyses.end()) {
            json qa = json::array();
            for (const auto& q : a->qa_items) qa.push_back({{"question", q.question}, {"answer", q.answer}});
            json rel = json::array();
            for (const auto& e : a->relation_graph) {
                if (focus && !focus->count(e.from) && !focus->count(e.to)) continue;
                rel.push_back({{"from", e.from.canonical()}, {"to", e.to.canonical()}, {"relation", relation_name(e)},
                               {"description", e.description}});
            }
            cj["insights"] = qa;
            cj["relations"] = rel;
            cj["comparison_dimensions"] = a->comparison_table.columns;
        }
        out.push_back(cj);
    }
    if (!focus && !s.inter_cluster.empty()) out.push_back({{"cross_cluster", s.inter_cluster}});
    return out;
}

template <class T>
T ask_json(const std::string& prompt, const char* tag, double temperature, int retries, const WritingConfig& cfg,
           StageContext& ctx, const std::function<T(const json&)>& accept) {
    llm::StructuredCall call{{prompt, temperature, cfg.max_output_tokens, tag}, retries, kStage, nullptr, &ctx.log};
    return llm::ask_structured<T>(ctx.gateway, call,
                                  [&](const std::string& reply) { return accept(llm::parse_json_reply(reply)); });
}

std::optional<PaperId> resolve_mark(const std::string& key, CitationStyle style, const CitationIndex& index) {
    if (style == CitationStyle::TitleMark) return index.resolve_title(key);
    auto r = index.resolve(key);
    if (r && r->canonical() == text::trim(key)) return r;
    return std::nullopt;
}

std::vector<std::string> leaf_texts(const OutlineNode& root, std::vector<NodePath>& leaves) {
    std::vector<std::string> texts;
    for (const auto& path : node_paths(root)) {
        const auto* n = find_node(root, path);
        if (!n->is_leaf()) continue;
        leaves.push_back(path);
        texts.push_back(n->title + ": " + n->description);
    }
    return texts;
}

std::string paper_text(const PaperId& id, const KnowledgeSubstrate& s) {
    if (auto k = s.keynotes.find(id); k != s.keynotes.end() && !k->second.field("tldr").empty())
        return k->second.field("tldr");
    if (const auto* p = s.find_paper(id)) return p->title;
    return id.canonical();
}

/// Similarity of every paper to every leaf, or nothing when embedding fails.
std::optional<std::vector<std::vector<double>>> similarities(const std::vector<PaperId>& papers,
                                                             const std::vector<std::string>& leaf_descriptions,
                                                             const KnowledgeSubstrate& s, StageContext& ctx) {
    std::vector<std::string> texts;
    for (const auto& id : papers) texts.push_back(paper_text(id, s));
    texts.insert(texts.end(), leaf_descriptions.begin(), leaf_descriptions.end());
    std::vector<std::vector<double>> vecs;
    try {
        vecs = ctx.gateway.embed(texts);
    } catch (const std::exception& e) {
        ctx.log.record(events::kFallback, kStage, std::string("embedding for citation assignment failed: ") + e.what());
        return std::nullopt;
    }
    std::vector<std::vector<double>> sim(papers.size(), std::vector<double>(leaf_descriptions.size()));
    for (std::size_t p = 0; p < papers.size(); ++p)
        for (std::size_t l = 0; l < leaf_descriptions.size(); ++l)
            sim[p][l] = llm::cosine(vecs[p], vecs[papers.size() + l]);
    return sim;
}

std::string clean_draft(const std::string& reply) { return text::strip_code_fence(reply); }

struct Floors {
    std::size_t citations;
    std::size_t words;
};

void check_draft(const std::string& body, const std::set<PaperId>& scope, const Floors& floors, CitationStyle style,
                 const CitationIndex& index) {
    if (body.empty()) throw OutputError("the draft is empty");
    if (body.find('#') != std::string::npos)
        throw OutputError("the text contains '#', which is reserved for heading anchors; avoid any '#'");
    const auto verdict = verify_citations(body, scope, style, index);
    if (!verdict.ok()) {
        std::string keys;
        for (const auto& k : verdict.violations) keys += (keys.empty() ? "<" : ", <") + k + ">";
        throw OutputError("cites " + keys + ", which is not among the papers provided; cite only listed papers");
    }
    if (verdict.cited.size() < floors.citations)
        throw OutputError("cites " + std::to_string(verdict.cited.size()) + " distinct papers, at least " +
                          std::to_string(floors.citations) + " are required");
    const auto words = prose_words(body);
    if (words < floors.words)
        throw OutputError("has " + std::to_string(words) + " words, at least " + std::to_string(floors.words) +
                          " are required");
}

DraftUnit generate_unit(const NodePath& path, const char* instructions, json input, const char* tag,
                        double temperature, const std::set<PaperId>& scope, const Floors& floors, Granularity g,
                        const KnowledgeSubstrate& s, const WritingConfig& cfg, StageContext& ctx) {
    const CitationIndex index(s.papers);
    input["citation_format"] = citation_format(cfg.citation_style);
    input["least_citations"] = floors.citations;
    input["least_words"] = floors.words;
    const auto prompt = fit_prompt(instructions, input, {"papers", "relevant_analysis", "code_reports", "subsections"},
                                   prompt_budget(cfg, ctx), join_path(path), ctx);
    llm::StructuredCall call{{prompt, temperature, cfg.max_output_tokens, tag}, cfg.max_citation_retries, kStage,
                             nullptr, &ctx.log};
    std::string reply;
    try {
        reply = llm::ask_text(ctx.gateway, call, [&](const std::string& r) {
            check_draft(clean_draft(r), scope, floors, cfg.citation_style, index);
        });
    } catch (const OutputError& e) {
        throw DraftingError(join_path(path), e.what());
    }
    DraftUnit unit{path, clean_draft(reply), {}, g};
    unit.citations = verify_citations(unit.text, scope, cfg.citation_style, index).marks;
    return unit;
}

json outline_with_position(const OutlineNode& root, const NodePath& path) {
    json o = outline_prompt_json(root);
    o["current_node"] = join_path(path);
    return o;
}

json code_reports_for(const std::set<PaperId>& scope, const KnowledgeSubstrate& s) {
    json out = json::array();
    for (const auto& id : scope) {
        auto it = s.code_reports.find(id);
        if (it == s.code_reports.end() || it->second.code_report.empty()) continue;
        out.push_back({{"paper_id", id.canonical()}, {"code_report", it->second.code_report}});
    }
    return out;
}

}  // namespace

std::vector<NodePath> node_paths(const OutlineNode& root) {
    std::vector<NodePath> out;
    for (const auto& sec : root.children) {
        out.push_back({sec.title});
        for (const auto& sub : sec.children) out.push_back({sec.title, sub.title});
    }
    return out;
}

const OutlineNode* find_node(const OutlineNode& root, const NodePath& path) {
    const OutlineNode* n = &root;
    for (const auto& title : path) {
        auto it = std::find_if(n->children.begin(), n->children.end(),
                               [&](const OutlineNode& c) { return c.title == title; });
        if (it == n->children.end()) return nullptr;
        n = &*it;
    }
    return n;
}

OutlineNode* find_node(OutlineNode& root, const NodePath& path) {
    return const_cast<OutlineNode*>(find_node(static_cast<const OutlineNode&>(root), path));
}

void check_outline_requirements(const OutlineNode& root) {
    if (root.children.empty()) throw InvalidInputError("outline has no sections");
    const bool conclusion = std::any_of(root.children.begin(), root.children.end(),
                                        [](const OutlineNode& n) { return text::contains_icase(n.title, "conclusion"); });
    if (!conclusion) throw InvalidInputError("outline lacks a Conclusion section");
    bool future = false;
    for (const auto& sec : root.children) {
        future = future || text::contains_icase(sec.title, "future");
        for (const auto& sub : sec.children) future = future || text::contains_icase(sub.title, "future");
    }
    if (!future) throw InvalidInputError("outline lacks a Future Work section or subsection");
}

OutlineNode parse_outline(const json& j, const std::string& topic) {
    if (!j.is_object()) throw OutputError("outline must be a JSON object");
    OutlineNode root;
    root.title = j.contains("title") && j["title"].is_string() ? clean_title(j["title"].get<std::string>()) : "";
    if (root.title.empty()) root.title = topic;
    root.description = j.contains("description") && j["description"].is_string()
                           ? text::trim(j["description"].get<std::string>())
                           : "";
    if (root.description.empty()) root.description = "A survey of " + topic;
    if (!j.contains("sections") || !j["sections"].is_array() || j["sections"].empty())
        throw OutputError("outline needs a non-empty 'sections' list");
    for (const auto& sj : j["sections"]) {
        auto sec = parse_node(sj);
        if (sj.contains("subsections")) {
            if (!sj["subsections"].is_array()) throw OutputError("'subsections' must be a list");
            for (const auto& cj : sj["subsections"]) sec.children.push_back(parse_node(cj));
        }
        root.children.push_back(std::move(sec));
    }
    try {
        validate_outline(root);
        check_outline_requirements(root);
    } catch (const InvalidInputError& e) {
        throw OutputError(e.what());
    }
    return root;
}

json outline_prompt_json(const OutlineNode& root) {
    json sections = json::array();
    for (const auto& sec : root.children) {
        json subs = json::array();
        for (const auto& sub : sec.children) subs.push_back({{"title", sub.title}, {"description", sub.description}});
        sections.push_back({{"title", sec.title}, {"description", sec.description}, {"subsections", subs}});
    }
    return {{"title", root.title}, {"sections", sections}};
}

OutlineNode draft_outline(const KnowledgeSubstrate& s, const WritingConfig& cfg, StageContext& ctx) {
    if (s.clusters.empty() || s.analyses.empty())
        throw PreconditionError("outline drafting needs clusters and cluster analyses");
    const auto budget = prompt_budget(cfg, ctx);
    const json analysis = analysis_digest(s, nullptr);
    json clusters = json::array();
    for (const auto& c : s.clusters) clusters.push_back({{"name", c.name}, {"summary", c.summary}, {"size", c.members.size()}});

    auto accept = [&](const json& j) { return parse_outline(j, s.topic); };
    const auto create = fit_prompt(kOutlineCreatePrompt,
                                   {{"topic", s.topic}, {"clusters", clusters}, {"papers_analysis", analysis}},
                                   {"papers_analysis"}, budget, "outline", ctx);
    OutlineNode outline = ask_json<OutlineNode>(create, "writing.outline", cfg.outline_temperature, cfg.max_retries,
                                                cfg, ctx, accept);

    std::vector<PaperId> ids;
    for (const auto& [id, k] : s.keynotes) ids.push_back(id);
    for (std::size_t b = 0; b < ids.size(); b += cfg.outline_batch_size) {
        json batch = json::array();
        for (std::size_t i = b; i < std::min(ids.size(), b + cfg.outline_batch_size); ++i)
            batch.push_back(keynote_digest(ids[i], s, true));
        const json input{{"topic", s.topic},
                         {"batch", b / cfg.outline_batch_size + 1},
                         {"current_outline", outline_prompt_json(outline)},
                         {"key_papers", batch},
                         {"papers_analysis", analysis}};
        const auto prompt = fit_prompt(kOutlineRefinePrompt, input, {"key_papers", "papers_analysis"}, budget,
                                       "outline batch " + std::to_string(b / cfg.outline_batch_size + 1), ctx);
        outline = ask_json<OutlineNode>(prompt, "writing.outline_refine", cfg.outline_temperature, cfg.max_retries,
                                        cfg, ctx, accept);
    }
    ctx.log.record(events::kInfo, kStage,
                   "outline with " + std::to_string(outline.children.size()) + " sections after " +
                       std::to_string((ids.size() + cfg.outline_batch_size - 1) / cfg.outline_batch_size) +
                       " refinement batches");
    return outline;
}

AssignmentMap assign_citations(const OutlineNode& outline, const KnowledgeSubstrate& s, const WritingConfig& cfg,
                               StageContext& ctx) {
    validate_outline(outline);
    AssignmentMap map;
    const auto paths = node_paths(outline);
    for (const auto& p : paths) map[p];

    std::vector<PaperId> key, other;
    for (const auto& [id, k] : s.keynotes) key.push_back(id);
    for (const auto& [id, p] : s.papers)
        if (!s.keynotes.count(id)) other.push_back(id);

    std::set<std::string> reported;
    const std::size_t n_batches = key.empty() ? 0 : (key.size() + cfg.assign_batch_size - 1) / cfg.assign_batch_size;
    const auto budget = prompt_budget(cfg, ctx);
    for (std::size_t b = 0; b < n_batches; ++b) {
        json key_json = json::array(), other_json = json::array();
        for (std::size_t i = b * cfg.assign_batch_size; i < std::min(key.size(), (b + 1) * cfg.assign_batch_size); ++i)
            key_json.push_back(keynote_digest(key[i], s, false));
        for (std::size_t i = b; i < other.size(); i += n_batches) other_json.push_back(keynote_digest(other[i], s, false));
        const json input{{"outline", outline_prompt_json(outline)},
                         {"batch", b + 1},
                         {"key_papers", key_json},
                         {"other_relevant_papers", other_json},
                         {"papers_analysis", analysis_digest(s, nullptr)}};
        const auto prompt = fit_prompt(kAssignPrompt, input, {"papers_analysis", "other_relevant_papers", "key_papers"},
                                       budget, "assignment batch " + std::to_string(b + 1), ctx);

        // The last reply, with unmatched titles dropped, is used when every attempt is rejected.
        AssignmentMap lenient;
        auto accept = [&](const json& j) {
            const json& list = j.is_object() && j.contains("assignments") ? j["assignments"] : j;
            if (!list.is_array()) throw OutputError("assignment must be a JSON list");
            AssignmentMap got;
            std::vector<std::string> unmatched;
            for (const auto& item : list) {
                if (!item.is_object() || !item.contains("paper_id") || !item["paper_id"].is_string())
                    throw OutputError("every assignment needs a string 'paper_id'");
                const auto id = text::trim(item["paper_id"].get<std::string>());
                const auto* paper = s.find_paper(id);
                if (!paper) {
                    if (reported.insert(id).second)
                        ctx.log.record(events::kMonitor, kStage, "citation assignment: unknown paper '" + id + "' removed");
                    continue;
                }
                if (!item.contains("assignment") || !item["assignment"].is_object())
                    throw OutputError("assignment for " + id + " needs an 'assignment' object");
                for (const auto& [sec_title, subs] : item["assignment"].items()) {
                    const auto* sec = find_node(outline, {sec_title});
                    if (!sec) {
                        unmatched.push_back(sec_title);
                        continue;
                    }
                    const bool list_ok = subs.is_array();
                    if (!list_ok || subs.empty()) {
                        got[{sec_title}].insert(paper->id);
                        continue;
                    }
                    for (const auto& sub : subs) {
                        const auto sub_title = sub.is_string() ? sub.get<std::string>() : sub.dump();
                        if (!find_node(*sec, {sub_title})) {
                            unmatched.push_back(sec_title + " / " + sub_title);
                            continue;
                        }
                        got[{sec_title, sub_title}].insert(paper->id);
                    }
                }
            }
            lenient = got;
            if (!unmatched.empty()) {
                std::string names;
                for (const auto& u : unmatched) names += (names.empty() ? "'" : ", '") + u + "'";
                throw OutputError("titles " + names + " do not EXACTLY match any outline title");
            }
            return got;
        };
        AssignmentMap got;
        try {
            got = ask_json<AssignmentMap>(prompt, "writing.assign", 0.0, cfg.max_retries, cfg, ctx, accept);
        } catch (const OutputError& e) {
            ctx.log.record(events::kFallback, kStage,
                           "assignment batch " + std::to_string(b + 1) + " kept its matching titles only: " + e.what());
            got = lenient;
        }
        for (auto& [p, ids] : got) map[p].insert(ids.begin(), ids.end());
    }

    std::set<PaperId> placed;
    for (const auto& [p, ids] : map) placed.insert(ids.begin(), ids.end());
    std::vector<PaperId> missing;
    for (const auto& id : key)
        if (!placed.count(id)) missing.push_back(id);

    std::vector<NodePath> leaves;
    const auto leaf_desc = leaf_texts(outline, leaves);
    const auto floor = static_cast<std::size_t>(cfg.subsection_least_citations);
    const bool under_floor = std::any_of(leaves.begin(), leaves.end(), [&](const NodePath& l) {
        return map[l].size() < std::min(floor, key.size());
    });
    if ((missing.empty() && !under_floor) || leaves.empty() || key.empty()) return map;

    const auto sim = similarities(key, leaf_desc, s, ctx);
    auto score = [&](std::size_t paper, std::size_t leaf) { return sim ? (*sim)[paper][leaf] : 0.0; };
    std::map<PaperId, std::size_t> key_index;
    for (std::size_t i = 0; i < key.size(); ++i) key_index[key[i]] = i;

    for (const auto& id : missing) {
        const auto pi = key_index.at(id);
        std::size_t best = 0;
        for (std::size_t l = 1; l < leaves.size(); ++l)
            if (score(pi, l) > score(pi, best)) best = l;
        map[leaves[best]].insert(id);
        ctx.log.record(events::kFallback, kStage, id.canonical() + " attached to '" + join_path(leaves[best]) +
                                                      "' by similarity");
    }
    for (std::size_t l = 0; l < leaves.size(); ++l) {
        auto& set = map[leaves[l]];
        const auto want = std::min(floor, key.size());
        if (set.size() >= want) continue;
        std::vector<std::size_t> order(key.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score(a, l) > score(b, l); });
        std::size_t added = 0;
        for (auto i : order) {
            if (set.size() >= want) break;
            if (set.insert(key[i]).second) ++added;
        }
        ctx.log.record(events::kFallback, kStage,
                       "'" + join_path(leaves[l]) + "' topped up with " + std::to_string(added) + " similar papers");
    }
    return map;
}

void apply_assignments(OutlineNode& outline, const AssignmentMap& map) {
    for (const auto& [path, ids] : map) {
        auto* node = find_node(outline, path);
        if (!node) throw InvalidInputError("assignment for unknown node '" + join_path(path) + "'");
        node->assigned_papers = ids;
    }
}

CitationVerdict verify_citations(const std::string& body, const std::set<PaperId>& assigned, CitationStyle style,
                                 const CitationIndex& index) {
    CitationVerdict v;
    for (const auto& mark : text::find_angle_marks(body)) {
        const auto id = resolve_mark(mark.key, style, index);
        if (!id || !assigned.count(*id)) {
            if (std::find(v.violations.begin(), v.violations.end(), mark.key) == v.violations.end())
                v.violations.push_back(mark.key);
            continue;
        }
        if (std::find(v.cited.begin(), v.cited.end(), *id) != v.cited.end()) continue;
        v.cited.push_back(*id);
        v.marks.push_back({style, mark.key});
    }
    return v;
}

std::set<PaperId> section_scope(const OutlineNode& node) {
    std::set<PaperId> out = node.assigned_papers;
    for (const auto& c : node.children) out.insert(c.assigned_papers.begin(), c.assigned_papers.end());
    return out;
}

std::size_t prose_words(const std::string& body) {
    std::string stripped;
    std::size_t pos = 0;
    for (const auto& m : text::find_angle_marks(body)) {
        stripped += body.substr(pos, m.offset - pos);
        stripped += ' ';
        pos = m.offset + m.length;
    }
    stripped += body.substr(std::min(pos, body.size()));
    return text::word_count(stripped);
}

DraftUnit draft_subsection(const NodePath& path, const KnowledgeSubstrate& s, const WritingConfig& cfg,
                           StageContext& ctx) {
    if (!s.outline) throw PreconditionError("drafting needs an outline");
    const auto* node = find_node(*s.outline, path);
    if (!node) throw PreconditionError("no outline node '" + join_path(path) + "'");
    if (!node->is_leaf()) throw PreconditionError("'" + join_path(path) + "' is not a leaf");
    const auto& scope = node->assigned_papers;
    if (scope.empty()) throw PreconditionError("'" + join_path(path) + "' has no assigned papers");

    json papers = json::array();
    for (const auto& id : scope) papers.push_back(keynote_digest(id, s, true));
    json input{{"title", node->title},
               {"description", node->description},
               {"papers", papers},
               {"survey_outline", outline_with_position(*s.outline, path)},
               {"relevant_analysis", analysis_digest(s, &scope)}};
    if (auto reports = code_reports_for(scope, s); !reports.empty()) {
        input["code_reports"] = reports;
        input["code_report_guidance"] =
            "Code reports of some papers are provided. Use them to describe implementation details where relevant.";
    }
    const Floors floors{std::min<std::size_t>(cfg.subsection_least_citations, scope.size()),
                        static_cast<std::size_t>(cfg.subsection_least_words)};
    const auto g = path.size() == 1 ? Granularity::Section : Granularity::Subsection;
    return generate_unit(path, kSubsectionPrompt, input, "writing.subsection", cfg.subsection_temperature, scope,
                         floors, g, s, cfg, ctx);
}

DraftUnit draft_section(const NodePath& path, const std::vector<DraftUnit>& child_drafts, const KnowledgeSubstrate& s,
                        const WritingConfig& cfg, StageContext& ctx) {
    if (!s.outline) throw PreconditionError("drafting needs an outline");
    const auto* node = find_node(*s.outline, path);
    if (!node) throw PreconditionError("no outline node '" + join_path(path) + "'");
    json subsections = json::array();
    for (const auto& child : node->children) {
        auto child_path = path;
        child_path.push_back(child.title);
        auto it = std::find_if(child_drafts.begin(), child_drafts.end(),
                               [&](const DraftUnit& d) { return d.node_path == child_path; });
        if (it == child_drafts.end())
            throw PreconditionError("section '" + join_path(path) + "' drafted before its child '" + child.title + "'");
        subsections.push_back({{"title", child.title},
                               {"description", child.description},
                               {"draft_opening", std::string(text::utf8_prefix(it->text, 600))}});
    }
    const auto scope = section_scope(*node);
    if (scope.empty()) throw PreconditionError("'" + join_path(path) + "' has no assigned papers");
    json papers = json::array();
    for (const auto& id : scope) papers.push_back(keynote_digest(id, s, false));
    const json input{{"title", node->title},
                     {"description", node->description},
                     {"subsections", subsections},
                     {"papers", papers},
                     {"survey_outline", outline_with_position(*s.outline, path)}};
    const Floors floors{std::min<std::size_t>(cfg.section_least_citations, scope.size()),
                        static_cast<std::size_t>(cfg.section_least_words)};
    return generate_unit(path, kSectionPrompt, input, "writing.section", cfg.section_temperature, scope, floors,
                         Granularity::Section, s, cfg, ctx);
}

void run_writing(KnowledgeSubstrate& s, const WritingConfig& cfg, StageContext& ctx) {
    cfg.validate();
    auto outline = draft_outline(s, cfg, ctx);
    apply_assignments(outline, assign_citations(outline, s, cfg, ctx));
    s.outline = std::move(outline);
    s.drafts.clear();

    const auto paths = node_paths(*s.outline);
    std::vector<NodePath> leaves, sections;
    for (const auto& p : paths) (find_node(*s.outline, p)->is_leaf() ? leaves : sections).push_back(p);

    const auto leaf_drafts =
        parallel_map(leaves, cfg.workers, [&](const NodePath& p) { return draft_subsection(p, s, cfg, ctx); });
    const auto section_drafts = parallel_map(sections, cfg.workers, [&](const NodePath& p) {
        return draft_section(p, leaf_drafts, s, cfg, ctx);
    });

    for (const auto& p : paths) {
        auto pick = [&](const std::vector<DraftUnit>& from) {
            return std::find_if(from.begin(), from.end(), [&](const DraftUnit& d) { return d.node_path == p; });
        };
        if (auto it = pick(leaf_drafts); it != leaf_drafts.end())
            s.drafts.push_back(*it);
        else
            s.drafts.push_back(*pick(section_drafts));
    }
    ctx.log.record(events::kInfo, kStage, std::to_string(s.drafts.size()) + " units drafted");
}

std::vector<std::string> locality_violations(const KnowledgeSubstrate& s, CitationStyle style) {
    std::vector<std::string> out;
    if (!s.outline) return out;
    const CitationIndex index(s.papers);
    for (const auto& d : s.drafts) {
        const auto* node = find_node(*s.outline, d.node_path);
        if (!node) {
            out.push_back(join_path(d.node_path) + ": no such outline node");
            continue;
        }
        const auto scope = node->is_leaf() ? node->assigned_papers : section_scope(*node);
        for (const auto& key : verify_citations(d.text, scope, style, index).violations)
            out.push_back(join_path(d.node_path) + ": <" + key + ">");
    }
    return out;
}

SurveyDocument assemble_survey(const KnowledgeSubstrate& s, const AssemblyOptions& opts) {
    if (!s.outline) throw AssemblyError("no outline to assemble");
    const CitationIndex index(s.papers);
    std::map<NodePath, const DraftUnit*> drafts;
    for (const auto& d : s.drafts) drafts[d.node_path] = &d;

    SurveyDocument doc;
    std::map<PaperId, std::size_t> numbers;
    json units = json::array();

    auto rewrite = [&](const DraftUnit& d) {
        std::string out;
        std::vector<std::size_t> refs;
        std::size_t pos = 0;
        for (const auto& m : text::find_angle_marks(d.text)) {
            out += d.text.substr(pos, m.offset - pos);
            pos = m.offset + m.length;
            const auto id = resolve_mark(m.key, opts.style, index);
            if (!id) {
                ++doc.dropped_marks;
                continue;
            }
            auto [it, fresh] = numbers.emplace(*id, numbers.size() + 1);
            if (fresh) doc.bibliography.push_back(*id);
            out += "[" + std::to_string(it->second) + "]";
            if (std::find(refs.begin(), refs.end(), it->second) == refs.end()) refs.push_back(it->second);
        }
        out += d.text.substr(std::min(pos, d.text.size()));
        units.push_back({{"path", d.node_path}, {"references", refs}});
        return text::trim(out);
    };

    std::string body = "# " + s.outline->title + "\n\n";
    for (const auto& path : node_paths(*s.outline)) {
        auto it = drafts.find(path);
        if (it == drafts.end()) throw AssemblyError("no draft for outline node '" + join_path(path) + "'");
        body += std::string(path.size() + 1, '#') + " " + path.back() + "\n\n" + rewrite(*it->second) + "\n\n";
    }

    body += "## References\n\n";
    json refs = json::array();
    for (std::size_t i = 0; i < doc.bibliography.size(); ++i) {
        const auto& id = doc.bibliography[i];
        const auto* p = s.find_paper(id);
        std::string entry = "[" + std::to_string(i + 1) + "] " + (p ? p->title : id.canonical()) + ".";
        if (p) {
            if (auto a = p->metadata.find("authors"); a != p->metadata.end() && !a->second.empty()) entry += " " + a->second + ".";
            if (auto y = p->metadata.find("year"); y != p->metadata.end() && !y->second.empty()) entry += " " + y->second + ".";
        }
        entry += " " + id.canonical();
        body += entry + "\n";
        refs.push_back({{"n", i + 1}, {"paper_id", id.canonical()}, {"title", p ? p->title : ""}});
    }

    doc.text = "---\ntopic: " + json(s.topic).dump() + "\ngenerated_at: " + json(opts.generated_at).dump() +
               "\nconfig_hash: " + json(opts.config_hash).dump() + "\n---\n\n" + body;
    doc.citation_map = {{"style", std::string(to_string(opts.style))},
                        {"references", refs},
                        {"units", units},
                        {"dropped_marks", doc.dropped_marks}};
    return doc;
}

void write_survey(const SurveyDocument& doc, const std::filesystem::path& dir) {
    write_file_atomic(dir / "survey.md", doc.text);
    write_file_atomic(dir / "citation_map.json", doc.citation_map.dump(2) + "\n");
}

}  // namespace litsynth::writing
