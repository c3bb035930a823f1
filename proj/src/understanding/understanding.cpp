#include "litsynth/understanding/understanding.hpp"

#include <fstream>
#include <variant>

#include "litsynth/core/error.hpp"
#include "litsynth/core/hashing.hpp"
#include "litsynth/core/parallel.hpp"
#include "litsynth/core/substrate.hpp"
#include "litsynth/core/text.hpp"
#include "litsynth/llm/structured.hpp"
#include "litsynth/llm/tokens.hpp"

namespace litsynth::understanding {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kInstructionOverhead = 1024;

const char* kKeynotePrompt =
    "Read the full text of the paper in the input and write its keynote.\n"
    "Return strictly one JSON object with these fields:\n"
    "  \"key_contributions\": list of the paper's main contributions,\n"
    "  \"methodology\": how the approach works,\n"
    "  \"experiments\": setup, baselines and main results,\n"
    "  \"limitations\": list of limitations and unstated assumptions,\n"
    "  \"critical_reflections\": list of your own critical observations,\n"
    "  \"tldr\": a short paragraph summary.\n"
    "You may add further fields (for example results, significance, future_directions) when the paper\n"
    "warrants them. Every listed field must be present and non-empty.";

const char* kChunkPrompt =
    "The input holds one part of a longer paper. Take notes on this part only.\n"
    "Return strictly one JSON object whose keys are any of key_contributions, methodology, experiments,\n"
    "limitations, critical_reflections, tldr and further fields you find useful. Omit keys this part says\n"
    "nothing about.";

const char* kMergePrompt =
    "The input holds notes taken part by part from one paper. Consolidate them into the paper's keynote.\n"
    "Return strictly one JSON object with the fields key_contributions, methodology, experiments,\n"
    "limitations, critical_reflections and tldr (all non-empty), plus any further fields the notes support.";

bool non_empty(const json& v) {
    if (v.is_string()) return !text::trim(v.get<std::string>()).empty();
    if (v.is_array() || v.is_object()) return !v.empty();
    return !v.is_null();
}

std::size_t doc_budget(const UnderstandingConfig& cfg, const StageContext& ctx) {
    if (cfg.chunk_budget_tokens) return cfg.chunk_budget_tokens;
    const auto window = ctx.gateway.profile().context_window;
    const auto reserve = static_cast<std::size_t>(cfg.max_output_tokens) + kInstructionOverhead;
    if (window <= reserve + 16) throw ConfigError("context window too small for keynote extraction");
    return window - reserve;
}

json ask_object(const std::string& prompt, const char* tag, const UnderstandingConfig& cfg, StageContext& ctx,
                bool full) {
    llm::StructuredCall call{{prompt, cfg.temperature, cfg.max_output_tokens, tag}, cfg.max_retries, kStage, nullptr,
                             &ctx.log};
    return llm::ask_structured<json>(ctx.gateway, call, [&](const std::string& reply) {
        auto j = llm::parse_json_reply(reply);
        if (!j.is_object()) throw OutputError("keynote reply must be a JSON object");
        if (full) parse_keynote_sections(j);
        return j;
    });
}

}  // namespace

ParsedDocument load_document(const PaperId& id, const std::string& title, const fs::path& path) {
    if (!fs::exists(path)) throw IoError("document " + path.string() + " does not exist");
    std::string md;
    try {
        md = read_file(path);
    } catch (const LoadError& e) {
        throw IoError(e.what());
    }
    if (text::trim(md).empty()) throw IoError("document " + path.string() + " is empty");
    return {id, title, std::move(md), path};
}

std::map<std::string, std::string> parse_keynote_sections(const json& j) {
    if (!j.is_object()) throw OutputError("keynote must be a JSON object");
    std::map<std::string, std::string> out;
    for (const auto& [key, value] : j.items()) {
        const std::string name = key == "key_contributions" ? "contributions" : key;
        if (!non_empty(value)) continue;
        out[name] = value.is_string() ? value.get<std::string>() : value.dump();
    }
    for (auto field : kMandatoryKeynoteFields) {
        auto it = out.find(std::string(field));
        if (it == out.end() || text::trim(it->second).empty())
            throw OutputError("keynote lacks field '" + std::string(field == "contributions" ? "key_contributions" : field) + "'");
    }
    return out;
}

std::vector<std::string> chunk_document(const std::string& markdown, std::size_t budget_tokens) {
    if (budget_tokens == 0) throw InvalidInputError("chunk budget must be positive");
    std::vector<std::string> sections;
    std::string current;
    for (const auto& line : text::split_lines(markdown)) {
        if (line.rfind("# ", 0) == 0 && !current.empty()) {
            sections.push_back(std::move(current));
            current.clear();
        }
        current += line;
        current += '\n';
    }
    if (!current.empty()) sections.push_back(std::move(current));

    const std::size_t window = budget_tokens * llm::kCharsPerToken;
    std::vector<std::string> chunks;
    std::string pack;
    auto flush = [&] {
        if (!pack.empty()) chunks.push_back(std::move(pack));
        pack.clear();
    };
    for (const auto& s : sections) {
        if (llm::estimate_tokens(s) > budget_tokens) {
            flush();
            std::string_view rest = s;
            while (!rest.empty()) {
                auto head = text::utf8_prefix(rest, window);
                chunks.emplace_back(head);
                rest.remove_prefix(head.size());
            }
        } else if (llm::estimate_tokens(pack + s) > budget_tokens) {
            flush();
            pack = s;
        } else {
            pack += s;
        }
    }
    flush();
    return chunks;
}

Keynote extract_keynote(const ParsedDocument& doc, const UnderstandingConfig& cfg, StageContext& ctx) {
    if (text::trim(doc.markdown).empty()) throw InvalidInputError("document for " + doc.paper_id.canonical() + " is empty");
    const std::string identity = doc.paper_id.canonical() + "|" + stable_hash(doc.markdown);
    if (auto cached = ctx.gateway.task_cache().get("understanding.keynote", identity)) {
        try {
            return keynote_from_json(*cached, [&](const std::string&) { return doc.paper_id; });
        } catch (const std::exception&) {
            // unreadable cache entry: recompute
        }
    }

    const auto budget = doc_budget(cfg, ctx);
    json sections_json;
    try {
        if (llm::estimate_tokens(doc.markdown) <= budget) {
            sections_json = ask_object(llm::render_prompt(kKeynotePrompt, {{"paper_id", doc.paper_id.canonical()},
                                                                           {"title", doc.title},
                                                                           {"full_text", doc.markdown}}),
                                       "understanding.keynote", cfg, ctx, true);
        } else {
            const auto chunks = chunk_document(doc.markdown, budget);
            ctx.log.record(events::kCompression, kStage,
                           doc.paper_id.canonical() + " read in " + std::to_string(chunks.size()) + " chunks");
            json notes = json::array();
            for (std::size_t i = 0; i < chunks.size(); ++i)
                notes.push_back(ask_object(llm::render_prompt(kChunkPrompt, {{"paper_id", doc.paper_id.canonical()},
                                                                             {"title", doc.title},
                                                                             {"part", i + 1},
                                                                             {"parts", chunks.size()},
                                                                             {"text", chunks[i]}}),
                                           "understanding.chunk", cfg, ctx, false));
            std::string notes_text = notes.dump();
            auto fitted = llm::compress_context_parts("", notes_text, budget);
            if (fitted.halvings > 0) {
                ctx.log.record(events::kCompression, kStage,
                               doc.paper_id.canonical() + " chunk notes halved " + std::to_string(fitted.halvings) + " times");
                notes_text = fitted.text;
            }
            json input = {{"paper_id", doc.paper_id.canonical()}, {"title", doc.title}};
            if (fitted.halvings > 0)
                input["notes_text"] = notes_text;
            else
                input["notes"] = notes;
            sections_json = ask_object(llm::render_prompt(kMergePrompt, input), "understanding.merge", cfg, ctx, true);
        }
    } catch (const OutputError& e) {
        throw KeynoteError("keynote for " + doc.paper_id.canonical() + ": " + e.what());
    } catch (const ExhaustionError& e) {
        throw KeynoteError("keynote for " + doc.paper_id.canonical() + ": " + e.what());
    } catch (const BackendError& e) {
        throw KeynoteError("keynote for " + doc.paper_id.canonical() + ": " + e.what());
    }

    Keynote k{doc.paper_id, parse_keynote_sections(sections_json), Provenance::FullText};
    validate(k);
    ctx.gateway.task_cache().put("understanding.keynote", identity, to_json(k));
    return k;
}

std::optional<Keynote> fallback_keynote(const PaperRecord& rec) {
    const auto abstract = text::trim(rec.abstract);
    const auto tldr = text::trim(rec.tldr);
    if (!abstract.empty()) {
        Keynote k{rec.id, {{"abstract", abstract}, {"tldr", tldr.empty() ? abstract : tldr}}, Provenance::AbstractFallback};
        return k;
    }
    if (!tldr.empty()) return Keynote{rec.id, {{"tldr", tldr}}, Provenance::TldrFallback};
    return std::nullopt;
}

bool validate_pdf(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("PDF " + path.string() + " does not exist");
    std::string data;
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot read " + path.string());
        data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    auto valid = [&] {
        if (data.rfind("%PDF-", 0) != 0) return false;
        const auto tail_start = data.size() > 1024 ? data.size() - 1024 : 0;
        const auto eof = data.rfind("%%EOF");
        if (eof == std::string::npos || eof < tail_start) return false;
        const auto sx = data.rfind("startxref", eof);
        if (sx == std::string::npos) return false;
        std::size_t i = sx + 9;
        while (i < eof && std::isspace(static_cast<unsigned char>(data[i]))) ++i;
        std::size_t offset = 0;
        bool digits = false;
        while (i < eof && std::isdigit(static_cast<unsigned char>(data[i]))) {
            offset = offset * 10 + static_cast<std::size_t>(data[i] - '0');
            digits = true;
            ++i;
        }
        if (!digits || offset >= sx) return false;
        if (data.compare(offset, 4, "xref") == 0) return true;
        // cross-reference stream: "<num> <gen> obj"
        std::size_t j = offset;
        auto number = [&] {
            std::size_t start = j;
            while (j < data.size() && std::isdigit(static_cast<unsigned char>(data[j]))) ++j;
            return j > start;
        };
        if (!number() || j >= data.size() || data[j] != ' ') return false;
        ++j;
        if (!number()) return false;
        return data.compare(j, 4, " obj") == 0;
    }();
    if (!valid) fs::remove(path);
    return valid;
}

UnderstandingResult run_understanding(std::map<PaperId, PaperRecord>& papers, const fs::path& documents_dir,
                                      const UnderstandingConfig& cfg, StageContext& ctx) {
    struct Outcome {
        PaperId id;
        std::optional<Keynote> keynote;
        bool lost = false;
    };
    std::vector<PaperRecord*> records;
    for (auto& [id, r] : papers) records.push_back(&r);

    auto outcomes = parallel_map(records, cfg.workers, [&](PaperRecord* const& rec) -> Outcome {
        if (rec->full_text_ref) {
            fs::path p(*rec->full_text_ref);
            if (p.is_relative()) p = documents_dir / p;
            std::optional<ParsedDocument> doc;
            try {
                doc = load_document(rec->id, rec->title, p);
            } catch (const IoError& e) {
                ctx.log.record(events::kFallback, kStage, rec->id.canonical() + ": full text unreadable (" + e.what() + ")");
            }
            if (doc) return {rec->id, extract_keynote(*doc, cfg, ctx), false};
            return {rec->id, fallback_keynote(*rec), true};
        }
        return {rec->id, fallback_keynote(*rec), false};
    });

    UnderstandingResult result;
    for (auto& o : outcomes) {
        if (o.lost) {
            papers.at(o.id).full_text_ref.reset();
            result.lost_full_text.push_back(o.id);
        }
        if (o.keynote) {
            if (o.keynote->provenance != Provenance::FullText)
                ctx.log.record(events::kFallback, kStage,
                               o.id.canonical() + ": keynote from " + std::string(to_string(o.keynote->provenance)));
            result.keynotes.emplace(o.id, std::move(*o.keynote));
        } else {
            ctx.log.record(events::kSkip, kStage, o.id.canonical() + ": no full text, abstract or TLDR; paper skipped");
            result.skipped.push_back(o.id);
        }
    }
    return result;
}

}  // namespace litsynth::understanding
