#include "litsynth/code_analysis/code_analysis.hpp"

#include <algorithm>
#include <deque>

#include "litsynth/core/error.hpp"
#include "litsynth/core/parallel.hpp"
#include "litsynth/core/substrate.hpp"
#include "litsynth/core/text.hpp"
#include "litsynth/llm/structured.hpp"
#include "litsynth/llm/tokens.hpp"

namespace litsynth::code_analysis {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(OpKind op) {
    switch (op) {
        case OpKind::GetSourceCode: return "get_source_code";
        case OpKind::Create: return "create";
        case OpKind::Revise: return "revise";
        case OpKind::Review: return "review";
        case OpKind::Finish: return "finish";
    }
    return "finish";
}

OpKind op_kind_from_string(std::string_view text) {
    const auto t = text::to_lower(text::trim(text));
    for (auto op : {OpKind::GetSourceCode, OpKind::Create, OpKind::Revise, OpKind::Review, OpKind::Finish})
        if (t == to_string(op)) return op;
    throw InvalidInputError("unknown planner operation '" + std::string(text) + "'");
}

void validate(const PseudocodeReview& review) {
    for (int s : {review.conciseness, review.logical_structure, review.implementation_specificity})
        if (s < 0 || s > 10) throw InvalidInputError("review score " + std::to_string(s) + " outside [0, 10]");
}

bool is_safe_relative_path(std::string_view path) {
    if (path.empty() || path.front() == '/' || path.find('\\') != std::string_view::npos) return false;
    if (path.size() > 1 && path[1] == ':') return false;
    std::size_t start = 0;
    while (start <= path.size()) {
        auto end = path.find('/', start);
        if (end == std::string_view::npos) end = path.size();
        const auto seg = path.substr(start, end - start);
        if (seg.empty() || seg == "." || seg == "..") return false;
        start = end + 1;
        if (end == path.size()) break;
    }
    return true;
}

bool is_config_file(std::string_view path) {
    const auto slash = path.rfind('/');
    const auto name = text::to_lower(slash == std::string_view::npos ? path : path.substr(slash + 1));
    static const std::set<std::string> exact = {
        "requirements.txt", "requirements-dev.txt", "setup.py", "setup.cfg", "pyproject.toml", "environment.yml",
        "environment.yaml", "package.json", "cargo.toml", "go.mod", "pom.xml", "build.gradle", "cmakelists.txt",
        "dockerfile", "docker-compose.yml", "pipfile", "gemfile"};
    return exact.count(name) > 0 || name.rfind("readme", 0) == 0 || name.rfind("requirements", 0) == 0;
}

void validate(const RepoSnapshot& repo) {
    for (const auto& [path, content] : repo.files)
        if (!is_safe_relative_path(path)) throw InvalidInputError("unsafe repository path '" + path + "'");
    for (const auto& c : repo.config_files)
        if (!repo.files.count(c)) throw InvalidInputError("config file '" + c + "' is not part of the snapshot");
}

RepoSnapshot load_repo_dir(const fs::path& dir, const PaperId& id, std::size_t max_file_bytes) {
    if (!fs::is_directory(dir)) throw IoError("repository directory " + dir.string() + " does not exist");
    RepoSnapshot repo{id, {}, {}};
    for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator(); ++it) {
        const auto name = it->path().filename().string();
        if (!name.empty() && name.front() == '.') {
            if (it->is_directory()) it.disable_recursion_pending();
            continue;
        }
        if (!it->is_regular_file() || it->file_size() > max_file_bytes) continue;
        auto content = read_file(it->path());
        if (content.find('\0') != std::string::npos) continue;
        const auto rel = fs::relative(it->path(), dir).generic_string();
        if (is_config_file(rel)) repo.config_files.insert(rel);
        repo.files.emplace(rel, std::move(content));
    }
    return repo;
}

std::optional<RepoSnapshot> DirectoryRepoFetcher::fetch(const std::string& url, const PaperId& id) {
    std::string u = url;
    while (!u.empty() && u.back() == '/') u.pop_back();
    auto name = u.substr(u.rfind('/') == std::string::npos ? 0 : u.rfind('/') + 1);
    if (name.size() > 4 && name.compare(name.size() - 4, 4, ".git") == 0) name.resize(name.size() - 4);
    if (name.empty() || !is_safe_relative_path(name)) return std::nullopt;
    const auto dir = root_ / name;
    if (!fs::is_directory(dir)) return std::nullopt;
    return load_repo_dir(dir, id);
}

void CodeAnalysisConfig::validate() const {
    if (max_rounds < 1) throw ConfigError("code analysis max_rounds must be at least 1");
    if (min_reads < 0 || revise_every < 1) throw ConfigError("code analysis read floor and revise cadence are invalid");
    if (batch_size == 0) throw ConfigError("code report batch size must be positive");
    if (memory_threshold_tokens < 64) throw ConfigError("planner memory threshold must be at least 64 tokens");
    if (max_retries < 0) throw ConfigError("max_retries must be non-negative");
}

PlannerMemory::PlannerMemory(std::size_t threshold_tokens) : threshold_(threshold_tokens) {
    if (threshold_ < 64) throw ConfigError("planner memory threshold must be at least 64 tokens");
}

void PlannerMemory::add(std::string entry) {
    entries_.push_back(std::move(entry));
    if (tokens() > threshold_) compress();
}

std::string PlannerMemory::render() const { return text::join(entries_, "\n"); }

std::size_t PlannerMemory::tokens() const { return llm::estimate_tokens(render()); }

void PlannerMemory::compress() {
    ++compressions_;
    const std::size_t half = threshold_ / 2;
    const std::size_t quarter_chars = threshold_ / 4 * llm::kCharsPerToken;
    std::deque<std::string> kept;
    std::size_t used = 0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        std::string e = *it;
        if (kept.empty() && llm::estimate_tokens(e) + 1 > half)
            e = std::string(text::utf8_prefix(e, (half - 2) * llm::kCharsPerToken - 3)) + "...";
        const auto t = llm::estimate_tokens(e) + 1;
        if (used + t > half) break;
        used += t;
        kept.push_front(std::move(e));
    }
    const auto dropped = entries_.size() - kept.size();
    if (dropped > 0) {
        std::string digest = "[" + std::to_string(dropped) + " earlier steps compressed]";
        for (std::size_t i = 0; i < dropped; ++i) digest += " " + text::trim(entries_[i]).substr(0, 60) + ";";
        kept.push_front(std::string(text::utf8_prefix(digest, quarter_chars)));
    }
    entries_.assign(kept.begin(), kept.end());
}

std::optional<std::string> trace_violation(const std::vector<PlannerOp>& trace, int min_reads, int revise_every) {
    std::set<std::string> reads;
    bool created = false;
    int since = 0;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const auto& op = trace[i];
        const auto at = " at round " + std::to_string(i + 1);
        switch (op.op) {
            case OpKind::GetSourceCode:
                reads.insert(op.path);
                if (created) ++since;
                break;
            case OpKind::Create:
                if (created) return "second create" + at;
                if (static_cast<int>(reads.size()) < min_reads) return "create before " + std::to_string(min_reads) + " reads" + at;
                created = true;
                since = 0;
                break;
            case OpKind::Review:
                if (!created) return "review before create" + at;
                ++since;
                break;
            case OpKind::Revise:
                if (!created) return "revise before create" + at;
                since = 0;
                break;
            case OpKind::Finish:
                if (!created) return "finish before create" + at;
                if (i + 1 != trace.size()) return "finish is not last" + at;
                break;
        }
        if (since > revise_every) return "no revise within " + std::to_string(revise_every) + " rounds" + at;
    }
    return std::nullopt;
}

namespace {

constexpr std::size_t kInstructionOverhead = 1024;
constexpr int kOutputTokens = 4096;

const char* kPlannerPrompt =
    "You are the planning agent that turns a code repository into repository-level pseudocode.\n"
    "Operations: get_source_code (read one file; give its repository-relative `path`), create (write the\n"
    "first pseudocode from the files read), review (have a reviewer score the pseudocode), revise (improve\n"
    "the pseudocode from the latest review) and finish (stop).\n"
    "Rules: read at least `min_reads` key source files (entry points, core algorithm modules, key utilities)\n"
    "before create; call revise at least once every `revise_every` rounds after create; finish only when\n"
    "the pseudocode is good. Give a sub-plan of several steps. Return strictly JSON:\n"
    "{\"plan\": [{\"op\": \"get_source_code\", \"path\": \"...\", \"rationale\": \"...\"}]}";

const char* kCreatePrompt =
    "Write concise repository-level pseudocode for the source files in the input. Cover the entry points,\n"
    "core algorithms and key data structures, naming the files they come from. Return only the pseudocode.";

const char* kReviewPrompt =
    "Review the pseudocode in the input against the source files. Score conciseness, logical structure and\n"
    "implementation specificity, each an integer from 0 to 10, and give concrete improvement suggestions.\n"
    "Return strictly JSON: {\"conciseness\": 0, \"logical_structure\": 0, \"implementation_specificity\": 0,\n"
    "\"suggestions\": [\"...\"]}";

const char* kRevisePrompt =
    "Revise the pseudocode in the input. Address the review suggestions when a review is present and stay\n"
    "faithful to the source files. Return only the revised pseudocode.";

const char* kBatchPrompt =
    "Analyze the repository pseudocode in the input for a survey on `topic`. Cover problem modeling and data\n"
    "structures, core algorithm classification, engineering and optimization strategies, and dimensions\n"
    "specific to this topic. Every claim must reference the pseudocode it comes from with a <paper_id>\n"
    "mark using the ids in the input. Return a markdown report.";

const char* kMergePrompt =
    "Merge the two partial code reports in the input into one report for a survey on `topic`. Keep every\n"
    "<paper_id> reference attached to its claim. Return a markdown report.";

const char* kIntegratePrompt =
    "Integrate the batch code reports in the input into one comprehensive report for a survey on `topic`:\n"
    "an executive summary, problem modeling and data structure classification, algorithm classification,\n"
    "engineering optimizations and topic-specific insights. Keep every <paper_id> reference attached to its\n"
    "claim. Return a markdown report.";

const char* kEnvironmentPrompt =
    "From the configuration files of the repositories in the input, write an environment report for a survey\n"
    "on `topic`: framework selection, dependency versions, hardware needs and deployment patterns. Refer to\n"
    "repositories with <paper_id> marks. Return a markdown report with sections.";

std::size_t prompt_budget(const StageContext& ctx) {
    const auto window = ctx.gateway.profile().context_window;
    const auto reserve = static_cast<std::size_t>(kOutputTokens) + kInstructionOverhead;
    if (window <= reserve + 64) throw ConfigError("context window too small for code analysis");
    return window - reserve;
}

std::string ask_plain(const std::string& prompt, const char* tag, double temperature, int retries, StageContext& ctx,
                      const std::function<void(const std::string&)>& check = {}) {
    llm::StructuredCall call{{prompt, temperature, kOutputTokens, tag}, retries, kStage, nullptr, &ctx.log};
    auto out = llm::ask_text(ctx.gateway, call, [&](const std::string& t) {
        if (text::trim(t).empty()) throw OutputError("empty reply");
        if (check) check(t);
    });
    return text::trim(out);
}

json files_payload(const std::map<std::string, std::string>& files, std::size_t max_chars, std::size_t budget) {
    json out = json::object();
    for (const auto& [path, content] : files) out[path] = std::string(text::utf8_prefix(content, max_chars));
    while (llm::estimate_tokens(out.dump()) > budget && max_chars > 64) {
        max_chars /= 2;
        for (const auto& [path, content] : files) out[path] = std::string(text::utf8_prefix(content, max_chars));
    }
    return out;
}

std::vector<PlannerOp> parse_plan(const json& j) {
    const auto& list = j.is_object() && j.contains("plan") ? j["plan"] : j;
    if (!list.is_array() || list.empty()) throw OutputError("plan must be a non-empty list of operations");
    std::vector<PlannerOp> ops;
    for (const auto& item : list) {
        if (!item.is_object() || !item.contains("op") || !item["op"].is_string())
            throw OutputError("every step needs a string 'op'");
        PlannerOp op;
        try {
            op.op = op_kind_from_string(item["op"].get<std::string>());
        } catch (const InvalidInputError& e) {
            throw OutputError(e.what());
        }
        if (op.op == OpKind::GetSourceCode) {
            if (!item.contains("path") || !item["path"].is_string())
                throw OutputError("get_source_code needs a string 'path'");
            op.path = text::trim(item["path"].get<std::string>());
        }
        if (item.contains("rationale") && item["rationale"].is_string()) op.rationale = item["rationale"];
        ops.push_back(std::move(op));
    }
    return ops;
}

PseudocodeReview parse_review(const json& j) {
    if (!j.is_object()) throw OutputError("review must be a JSON object");
    PseudocodeReview r;
    auto score = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_number_integer()) throw OutputError(std::string("review needs integer '") + key + "'");
        return j[key].get<int>();
    };
    r.conciseness = score("conciseness");
    r.logical_structure = score("logical_structure");
    r.implementation_specificity = score("implementation_specificity");
    if (!j.contains("suggestions") || !j["suggestions"].is_array()) throw OutputError("review needs a 'suggestions' list");
    for (const auto& s : j["suggestions"]) r.suggestions.push_back(s.is_string() ? s.get<std::string>() : s.dump());
    try {
        validate(r);
    } catch (const InvalidInputError& e) {
        throw OutputError(e.what());
    }
    return r;
}

json review_json(const PseudocodeReview& r) {
    return {{"conciseness", r.conciseness},
            {"logical_structure", r.logical_structure},
            {"implementation_specificity", r.implementation_specificity},
            {"suggestions", r.suggestions}};
}

// Drops marks naming ids outside `allowed`, logging each once. Returns the number of valid marks.
std::size_t attribute(std::string& report, const std::set<std::string>& allowed, const std::string& artifact,
                      std::set<std::string>& reported, EventLog& log) {
    std::size_t valid = 0;
    std::string out;
    std::size_t pos = 0;
    for (const auto& m : text::find_angle_marks(report)) {
        if (allowed.count(m.key)) {
            ++valid;
            continue;
        }
        if (reported.insert(m.key).second)
            log.record(events::kMonitor, kStage, artifact + ": reference to unknown pseudocode '" + m.key + "' removed");
        out.append(report, pos, m.offset - pos);
        while (!out.empty() && out.back() == ' ') out.pop_back();
        pos = m.offset + m.length;
    }
    out.append(report, pos, std::string::npos);
    report = std::move(out);
    return valid;
}

}  // namespace

LoopResult run_pseudocode_loop(const RepoSnapshot& repo, const CodeAnalysisConfig& cfg, StageContext& ctx) {
    cfg.validate();
    validate(repo);
    if (repo.files.empty()) throw PreconditionError("repository of " + repo.paper_id.canonical() + " is empty");
    const auto budget = prompt_budget(ctx);
    const auto who = repo.paper_id.canonical();

    LoopResult r;
    PlannerMemory memory(cfg.memory_threshold_tokens);
    ErrorMemory errors;
    std::map<std::string, std::string> read;
    std::optional<PseudocodeReview> latest;
    bool created = false;
    int since_revise = 0;
    int rejected_in_row = 0;
    std::deque<PlannerOp> plan;

    json paths = json::array();
    for (const auto& [path, content] : repo.files) paths.push_back(path);

    auto illegal = [&](const PlannerOp& op) -> std::optional<std::string> {
        switch (op.op) {
            case OpKind::GetSourceCode:
                if (!is_safe_relative_path(op.path)) return "path '" + op.path + "' is not a safe relative path";
                if (!repo.files.count(op.path)) return "no file '" + op.path + "' in the repository";
                return std::nullopt;
            case OpKind::Create:
                if (created) return std::string("pseudocode already exists; use revise");
                if (static_cast<int>(read.size()) < cfg.min_reads)
                    return "create requires at least " + std::to_string(cfg.min_reads) + " source files read first (" +
                           std::to_string(read.size()) + " so far)";
                return std::nullopt;
            case OpKind::Review:
            case OpKind::Revise:
            case OpKind::Finish:
                if (!created) return std::string(to_string(op.op)) + " requires pseudocode; create it first";
                return std::nullopt;
        }
        return std::nullopt;
    };

    while (r.rounds < cfg.max_rounds && !r.finished) {
        if (plan.empty()) {
            r.max_memory_tokens = std::max(r.max_memory_tokens, memory.tokens());
            json state{{"round", r.rounds + 1},
                       {"max_rounds", cfg.max_rounds},
                       {"files_read", json::array()},
                       {"has_pseudocode", created},
                       {"rounds_since_revise", since_revise},
                       {"min_reads", cfg.min_reads},
                       {"revise_every", cfg.revise_every}};
            for (const auto& [path, c] : read) state["files_read"].push_back(path);
            json input{{"paper_id", who}, {"files", paths}, {"memory", memory.render()}, {"state", state}};
            if (latest) input["latest_review"] = review_json(*latest);
            llm::StructuredCall call{{llm::render_prompt(kPlannerPrompt, input), cfg.planner_temperature, kOutputTokens,
                                      "code.planner"},
                                     cfg.max_retries, kStage, &errors, &ctx.log};
            auto ops = llm::ask_structured<std::vector<PlannerOp>>(
                ctx.gateway, call, [](const std::string& reply) { return parse_plan(llm::parse_json_reply(reply)); });
            ++r.planner_calls;
            plan.assign(ops.begin(), ops.end());
        }

        PlannerOp op = plan.front();
        plan.pop_front();
        if (created && since_revise >= cfg.revise_every && op.op != OpKind::Revise && op.op != OpKind::Finish) {
            plan.push_front(op);
            op = PlannerOp{OpKind::Revise, "", "revise cadence", true};
            ctx.log.record(events::kInfo, kStage, who + ": revise forced at round " + std::to_string(r.rounds + 1));
        }
        if (auto why = illegal(op)) {
            ++r.rejections;
            plan.clear();
            memory.add("rejected " + std::string(to_string(op.op)) + ": " + *why);
            errors.record(*why);
            ctx.log.record(events::kRejection, kStage, who + ": " + *why);
            if (++rejected_in_row > cfg.max_retries)
                throw OutputError("planner for " + who + " kept proposing illegal operations: " + *why);
            continue;
        }
        rejected_in_row = 0;
        ++r.rounds;
        const auto round = "round " + std::to_string(r.rounds) + ": ";

        switch (op.op) {
            case OpKind::GetSourceCode:
                read[op.path] = repo.files.at(op.path);
                if (created) ++since_revise;
                memory.add(round + "read " + op.path + " (" + std::to_string(read[op.path].size()) + " chars)");
                break;
            case OpKind::Create: {
                json input{{"paper_id", who}, {"files", files_payload(read, cfg.max_file_chars, budget / 2)}};
                r.pseudocode = ask_plain(llm::render_prompt(kCreatePrompt, input), "code.create", cfg.creator_temperature,
                                         cfg.max_retries, ctx);
                created = true;
                since_revise = 0;
                memory.add(round + "created pseudocode (" + std::to_string(r.pseudocode.size()) + " chars)");
                break;
            }
            case OpKind::Review: {
                json input{{"paper_id", who}, {"pseudocode", r.pseudocode},
                           {"files", files_payload(read, cfg.max_file_chars, budget / 2)}};
                llm::StructuredCall call{{llm::render_prompt(kReviewPrompt, input), cfg.reviewer_temperature,
                                          kOutputTokens, "code.review"},
                                         cfg.max_retries, kStage, nullptr, &ctx.log};
                latest = llm::ask_structured<PseudocodeReview>(
                    ctx.gateway, call, [](const std::string& reply) { return parse_review(llm::parse_json_reply(reply)); });
                r.reviews.push_back(*latest);
                ++since_revise;
                memory.add(round + "review scored conciseness " + std::to_string(latest->conciseness) + ", structure " +
                           std::to_string(latest->logical_structure) + ", specificity " +
                           std::to_string(latest->implementation_specificity) + "; suggestions: " +
                           text::join(latest->suggestions, "; "));
                break;
            }
            case OpKind::Revise: {
                json input{{"paper_id", who}, {"pseudocode", r.pseudocode},
                           {"files", files_payload(read, cfg.max_file_chars, budget / 2)}, {"round", r.rounds}};
                if (latest) input["review"] = review_json(*latest);
                r.pseudocode = ask_plain(llm::render_prompt(kRevisePrompt, input), "code.revise", cfg.reviser_temperature,
                                         cfg.max_retries, ctx);
                since_revise = 0;
                memory.add(round + (op.forced ? "forced revise" : "revised pseudocode"));
                break;
            }
            case OpKind::Finish:
                r.finished = true;
                memory.add(round + "finish");
                break;
        }
        r.trace.push_back(op);
    }
    if (!r.finished)
        ctx.log.record(events::kExhaustion, kStage,
                       who + ": planner used all " + std::to_string(cfg.max_rounds) + " rounds without finishing");
    return r;
}

std::string batch_code_report(const std::vector<PseudocodeEntry>& entries, const std::string& topic,
                              const CodeAnalysisConfig& cfg, StageContext& ctx) {
    if (entries.empty()) throw PreconditionError("no pseudocode to report on");
    cfg.validate();
    const auto budget = prompt_budget(ctx);
    std::set<std::string> all_ids;
    for (const auto& e : entries) all_ids.insert(e.paper_id.canonical());
    std::set<std::string> reported;

    std::vector<std::string> reports;
    for (std::size_t i = 0; i < entries.size(); i += cfg.batch_size) {
        const auto end = std::min(entries.size(), i + cfg.batch_size);
        json batch = json::array();
        std::set<std::string> ids;
        for (std::size_t k = i; k < end; ++k) {
            batch.push_back({{"paper_id", entries[k].paper_id.canonical()}, {"pseudocode", entries[k].pseudocode}});
            ids.insert(entries[k].paper_id.canonical());
        }
        auto report = ask_plain(
            llm::render_prompt(kBatchPrompt, {{"topic", topic}, {"batch", i / cfg.batch_size + 1}, {"pseudocodes", batch}}),
            "code.batch_report", cfg.creator_temperature, cfg.max_retries, ctx, [&](const std::string& t) {
                bool any = false;
                for (const auto& m : text::find_angle_marks(t)) any = any || ids.count(m.key);
                if (!any) throw OutputError("the report must reference pseudocode with <paper_id> marks");
            });
        attribute(report, ids, "code report batch " + std::to_string(i / cfg.batch_size + 1), reported, ctx.log);
        reports.push_back(std::move(report));
    }

    auto size_of = [](const std::vector<std::string>& rs) { return llm::estimate_tokens(json(rs).dump()); };
    int merge_round = 0;
    while (reports.size() > 1 && size_of(reports) > budget) {
        ++merge_round;
        ctx.log.record(events::kCompression, kStage,
                       "batch reports exceed the window; pairwise merge round " + std::to_string(merge_round));
        std::vector<std::string> merged;
        for (std::size_t i = 0; i < reports.size(); i += 2) {
            if (i + 1 == reports.size()) {
                merged.push_back(reports[i]);
                continue;
            }
            auto pair_input = json{{"topic", topic}, {"reports", {reports[i], reports[i + 1]}}};
            auto fitted = llm::compress_context_parts("", pair_input.dump(), budget);
            auto m = ask_plain(llm::render_prompt(kMergePrompt, fitted.halvings ? json{{"topic", topic}, {"reports_text", fitted.text}}
                                                                                 : pair_input),
                               "code.merge", cfg.creator_temperature, cfg.max_retries, ctx);
            attribute(m, all_ids, "code report merge", reported, ctx.log);
            merged.push_back(std::move(m));
        }
        reports = std::move(merged);
    }
    json input{{"topic", topic}, {"batch_reports", reports}};
    if (size_of(reports) > budget) {
        auto fitted = llm::compress_context_parts("", json(reports).dump(), budget);
        ctx.log.record(events::kCompression, kStage, "single merged report truncated to fit the window");
        input = json{{"topic", topic}, {"batch_reports_text", fitted.text}};
    }
    auto final_report = ask_plain(llm::render_prompt(kIntegratePrompt, input), "code.integrate", cfg.creator_temperature,
                                  cfg.max_retries, ctx);
    attribute(final_report, all_ids, "integrated code report", reported, ctx.log);
    return final_report;
}

json environment_payload(const std::vector<RepoSnapshot>& repos, std::size_t max_file_chars) {
    json out = json::array();
    for (const auto& r : repos) {
        json entry{{"paper_id", r.paper_id.canonical()}};
        if (r.config_files.empty()) {
            entry["note"] = "no configuration found";
        } else {
            entry["config_files"] = json::object();
            for (const auto& path : r.config_files)
                entry["config_files"][path] = std::string(text::utf8_prefix(r.files.at(path), max_file_chars));
        }
        out.push_back(std::move(entry));
    }
    return out;
}

std::string environment_report(const std::vector<RepoSnapshot>& repos, const std::string& topic,
                               const CodeAnalysisConfig& cfg, StageContext& ctx) {
    cfg.validate();
    const auto budget = prompt_budget(ctx);
    std::set<std::string> ids;
    for (const auto& r : repos) ids.insert(r.paper_id.canonical());
    auto chars = cfg.max_file_chars;
    json payload = environment_payload(repos, chars);
    while (llm::estimate_tokens(payload.dump()) > budget && chars > 64) {
        chars /= 2;
        payload = environment_payload(repos, chars);
    }
    auto report = ask_plain(llm::render_prompt(kEnvironmentPrompt, {{"topic", topic}, {"repositories", payload}}),
                            "code.environment", cfg.creator_temperature, cfg.max_retries, ctx);
    std::set<std::string> reported;
    attribute(report, ids, "environment report", reported, ctx.log);
    return report;
}

std::string report_excerpt(const std::string& report, const PaperId& id) {
    const auto mark = "<" + id.canonical() + ">";
    std::vector<std::string> paragraphs;
    std::string current;
    auto flush = [&] {
        if (current.find(mark) != std::string::npos) paragraphs.push_back(text::trim(current));
        current.clear();
    };
    for (const auto& line : text::split_lines(report)) {
        if (text::trim(line).empty()) {
            flush();
            continue;
        }
        current += line + "\n";
    }
    flush();
    return text::join(paragraphs, "\n\n");
}

void run_code_analysis(KnowledgeSubstrate& s, RepoFetcher& fetcher, const CodeAnalysisConfig& cfg, StageContext& ctx) {
    if (!cfg.enabled) return;
    cfg.validate();
    std::vector<RepoSnapshot> repos;
    for (const auto& [id, p] : s.papers) {
        if (!s.keynotes.count(id)) continue;
        for (const auto& url : p.repo_urls) {
            try {
                if (auto snap = fetcher.fetch(url, id); snap && !snap->files.empty()) {
                    repos.push_back(std::move(*snap));
                    break;
                }
            } catch (const std::exception& e) {
                ctx.log.record(events::kSkip, kStage, id.canonical() + ": repository " + url + " unavailable (" + e.what() + ")");
            }
        }
    }
    if (repos.empty()) {
        ctx.log.record(events::kInfo, kStage, "no repositories available; code reports skipped");
        return;
    }

    auto loops = parallel_map(repos, cfg.workers, [&](const RepoSnapshot& repo) -> std::optional<LoopResult> {
        try {
            return run_pseudocode_loop(repo, cfg, ctx);
        } catch (const OutputError& e) {
            ctx.log.record(events::kSkip, kStage, repo.paper_id.canonical() + ": " + e.what());
            return std::nullopt;
        }
    });
    std::vector<PseudocodeEntry> entries;
    for (std::size_t i = 0; i < repos.size(); ++i)
        if (loops[i] && !loops[i]->pseudocode.empty()) entries.push_back({repos[i].paper_id, loops[i]->pseudocode});
    if (entries.empty()) {
        ctx.log.record(events::kInfo, kStage, "no pseudocode produced; code reports skipped");
        return;
    }
    const auto code = batch_code_report(entries, s.topic, cfg, ctx);
    const auto env = environment_report(repos, s.topic, cfg, ctx);
    for (const auto& e : entries) {
        auto excerpt = report_excerpt(code, e.paper_id);
        std::string code_text = "## Repository pseudocode\n\n" + e.pseudocode;
        if (!excerpt.empty()) code_text += "\n\n## Code analysis\n\n" + excerpt;
        auto env_excerpt = report_excerpt(env, e.paper_id);
        s.code_reports[e.paper_id] = {std::move(code_text), env_excerpt.empty() ? env : env_excerpt};
    }
}

}  // namespace litsynth::code_analysis
