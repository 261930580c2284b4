#pragma once

// Every model interaction goes through here: template rendering, backend
// dispatch (live HTTP or scripted oracle), structured-output parsing and
// the single re-ask on malformed output.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "skillrec/datamodel.hpp"
#include "skillrec/util.hpp"

namespace skillrec {

namespace fs = std::filesystem;

enum class TemplateName { synth, extract, list, point, cot_incremental, cot_full_replacement, global_skill };
inline constexpr TemplateName kAllTemplates[] = {
    TemplateName::synth,           TemplateName::extract,
    TemplateName::list,            TemplateName::point,
    TemplateName::cot_incremental, TemplateName::cot_full_replacement,
    TemplateName::global_skill};

std::string_view to_string(TemplateName t);
TemplateName template_from_string(std::string_view s);

using Bindings = std::map<std::string, std::string>;

struct PromptTemplate {
    TemplateName name = TemplateName::list;
    std::string body;

    // Placeholder names in order of first appearance. A placeholder is
    // `{identifier}`; any other brace is literal text.
    std::vector<std::string> placeholders() const;
};

// Substitutes every placeholder. Throws ConfigError on an unbound
// placeholder or when the result exceeds `max_chars`.
std::string render(const PromptTemplate& tmpl, const Bindings& bindings, std::size_t max_chars = 64 * 1024);

class TemplateLibrary {
public:
    // Loads `<name>.txt` for every template name; all must exist.
    static TemplateLibrary load(const fs::path& dir);

    void add(PromptTemplate tmpl);
    bool has(TemplateName name) const { return templates_.count(name) != 0; }
    const PromptTemplate& get(TemplateName name) const;
    std::string render(TemplateName name, const Bindings& bindings) const;

    std::size_t max_prompt_chars = 64 * 1024;

private:
    std::map<TemplateName, PromptTemplate> templates_;
};

// Default data directory (templates, lexicons, global skills). Honors the
// SKILLREC_DATA_DIR environment variable.
fs::path default_data_dir();

// ---------------------------------------------------------------------------
// Requests and backends
// ---------------------------------------------------------------------------

struct LlmRequest {
    TemplateName template_name = TemplateName::list;
    Bindings bindings;
    std::string prompt;  // rendered text
    double temperature = 0.0;
    int max_output_tokens = 1024;
    // Caller-supplied index (round, event) so the same logical call can
    // replay different scripted responses.
    int sequence = 0;
};

struct TokenUsage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct LlmResponse {
    std::string text;
    std::string backend;
    double latency_ms = 0.0;
    TokenUsage usage;
};

// Stable hash over sorted (name, value) pairs.
std::string fingerprint(const Bindings& bindings);

class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    virtual LlmResponse complete(const LlmRequest& request) = 0;
    virtual std::string id() const = 0;
};

// Replays responses from a JSONL script. Two record forms:
//   {"template": t, "fingerprint": f, ["seq": n,] "response": r}
//   {"template": t, "match": {binding: value, ...}, ["seq": n,] "response": r}
// Lookup order: fingerprint+seq, fingerprint without seq, then the first
// match record (file order) whose bindings agree and whose seq is absent
// or equal. A miss throws ScriptMiss. Read-only after construction.
class OracleBackend : public LlmBackend {
public:
    static std::shared_ptr<OracleBackend> from_file(const fs::path& path);
    static std::shared_ptr<OracleBackend> from_records(const std::vector<json>& records);

    LlmResponse complete(const LlmRequest& request) override;
    std::string id() const override { return "oracle"; }
    std::size_t size() const { return exact_.size() + matchers_.size(); }

private:
    struct Matcher {
        TemplateName name;
        Bindings match;
        std::optional<int> seq;
        std::string response;
    };
    static std::string exact_key(TemplateName t, const std::string& fp, std::optional<int> seq);

    std::map<std::string, std::string> exact_;
    std::vector<Matcher> matchers_;
};

struct LiveConfig {
    std::string base_url = "https://api.openai.com/v1";
    std::string model = "gpt-4o-mini";
    std::string api_key_env = "OPENAI_API_KEY";
    int max_attempts = 4;
    int backoff_base_ms = 500;
    int timeout_s = 120;
    int max_in_flight = 4;
};

// OpenAI-compatible chat-completions client. Retries connection errors,
// 429 and 5xx with exponential backoff up to max_attempts.
class LiveBackend : public LlmBackend {
public:
    explicit LiveBackend(LiveConfig config);
    LlmResponse complete(const LlmRequest& request) override;
    std::string id() const override { return "live:" + config_.model; }
    int attempts_last_call() const { return last_attempts_.load(); }

private:
    LiveConfig config_;
    std::string origin_;       // scheme://host:port
    std::string path_prefix_;  // e.g. /v1
    std::counting_semaphore<1024> in_flight_;
    std::atomic<int> last_attempts_{0};
};

// Wraps a callable; used by tests and the fixture generator.
class FunctionBackend : public LlmBackend {
public:
    using Fn = std::function<std::string(const LlmRequest&)>;
    FunctionBackend(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}
    LlmResponse complete(const LlmRequest& request) override;
    std::string id() const override { return name_; }

private:
    std::string name_;
    Fn fn_;
};

// Forwards to an inner backend and keeps one oracle-script record per call
// (fingerprint form), deduplicated.
class RecordingBackend : public LlmBackend {
public:
    explicit RecordingBackend(std::shared_ptr<LlmBackend> inner) : inner_(std::move(inner)) {}
    LlmResponse complete(const LlmRequest& request) override;
    std::string id() const override { return inner_->id(); }
    // Records sorted by (template, fingerprint, seq) for a stable file.
    std::vector<json> records() const;
    void write(const fs::path& path) const;

private:
    std::shared_ptr<LlmBackend> inner_;
    mutable std::mutex mu_;
    std::map<std::string, json> records_;
};

// ---------------------------------------------------------------------------
// Structured output
// ---------------------------------------------------------------------------

enum class SchemaId { skill_diff, ranked_list, facet_list, slim_skill, policy_skill, point_score };
std::string_view to_string(SchemaId s);

// Locates the first well-formed JSON value in `raw` that satisfies the
// schema (code fences and surrounding prose are skipped; trailing commas
// are tolerated) and returns it. Throws ParseError ("no parsable object")
// or ParseError with a JSON-pointer path on schema violation.
// slim_skill additionally accepts the plain `likes: ... | style: ...` line
// and returns {"likes": [...], "style": "..."}.
json parse_structured(std::string_view raw, SchemaId schema);

struct ParsedDiff {
    SkillDiff diff;
    std::vector<std::string> notes;  // stripped directives, for audit
};
ParsedDiff parse_skill_diff(std::string_view raw);
// Ordered ids plus rationales exactly as the model produced them (no
// repair applied).
std::vector<RankedEntry> parse_ranking(std::string_view raw);
std::vector<Facet> parse_facets(std::string_view raw);
SlimSkill parse_slim(std::string_view raw);
PolicySkill parse_policy_skill(std::string_view raw);
// Integer score in [1,10]; nullopt when unparsable or out of range.
std::optional<int> parse_point_score(std::string_view raw);

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

struct CallStats {
    std::int64_t calls = 0;
    std::int64_t reasks = 0;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;

    CallStats& operator+=(const CallStats& o) {
        calls += o.calls;
        reasks += o.reasks;
        prompt_tokens += o.prompt_tokens;
        completion_tokens += o.completion_tokens;
        return *this;
    }
    bool operator==(const CallStats&) const = default;
};

struct GatewayOptions {
    bool reask_on_parse_failure = false;  // enabled for live backends
    double temperature = 0.0;
    int max_output_tokens = 1024;
    fs::path audit_log;  // empty disables the audit log
};

inline constexpr std::string_view kFormatReminder =
    "Your previous reply could not be parsed. Reply again with ONLY the requested output format, "
    "no commentary and no code fences.";

class Gateway {
public:
    Gateway(std::shared_ptr<LlmBackend> backend, TemplateLibrary templates, GatewayOptions options = {});

    LlmResponse complete(TemplateName name, const Bindings& bindings, int sequence, CallStats* stats = nullptr);

    // Calls the backend and applies `parse`. On ParseError/DataError the
    // call is re-asked once (with a format reminder) when re-ask is
    // enabled; the second failure propagates.
    template <typename Parse>
    auto complete_parsed(TemplateName name, const Bindings& bindings, int sequence, Parse&& parse,
                         CallStats* stats = nullptr, std::string* raw_out = nullptr)
        -> decltype(parse(std::string_view{}));

    const TemplateLibrary& templates() const { return templates_; }
    const GatewayOptions& options() const { return options_; }
    std::string backend_id() const { return backend_->id(); }
    std::int64_t total_calls() const { return total_calls_.load(); }

private:
    LlmResponse dispatch(const LlmRequest& request, CallStats* stats);
    void audit(const LlmRequest& request, const LlmResponse* response, std::string_view error);

    std::shared_ptr<LlmBackend> backend_;
    TemplateLibrary templates_;
    GatewayOptions options_;
    std::mutex audit_mu_;
    std::atomic<std::int64_t> total_calls_{0};
};

template <typename Parse>
auto Gateway::complete_parsed(TemplateName name, const Bindings& bindings, int sequence, Parse&& parse,
                              CallStats* stats, std::string* raw_out) -> decltype(parse(std::string_view{})) {
    auto first = complete(name, bindings, sequence, stats);
    if (raw_out) *raw_out = first.text;
    try {
        return parse(std::string_view(first.text));
    } catch (const std::exception&) {
        if (!options_.reask_on_parse_failure) throw;
    }
    Bindings retry = bindings;
    retry["__reask"] = std::string(kFormatReminder);
    if (stats) ++stats->reasks;
    auto second = complete(name, retry, sequence, stats);
    if (raw_out) *raw_out = second.text;
    return parse(std::string_view(second.text));
}

}  // namespace skillrec
