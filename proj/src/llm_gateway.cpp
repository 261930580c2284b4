#include "skillrec/llm_gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <set>
#include <thread>

#include "skillrec/errors.hpp"

#ifndef SKILLREC_DATA_DIR
#define SKILLREC_DATA_DIR "data"
#endif

namespace skillrec {

namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Calls `on_placeholder(name)` / `on_text(chunk)` while scanning a body.
template <typename OnText, typename OnPlaceholder>
void scan_template(std::string_view body, OnText&& on_text, OnPlaceholder&& on_placeholder) {
    std::size_t i = 0;
    std::size_t text_start = 0;
    while (i < body.size()) {
        if (body[i] == '{' && i + 1 < body.size() && is_ident_start(body[i + 1])) {
            std::size_t j = i + 1;
            while (j < body.size() && is_ident_char(body[j])) ++j;
            if (j < body.size() && body[j] == '}') {
                on_text(body.substr(text_start, i - text_start));
                on_placeholder(std::string(body.substr(i + 1, j - i - 1)));
                i = j + 1;
                text_start = i;
                continue;
            }
        }
        ++i;
    }
    on_text(body.substr(text_start));
}

}  // namespace

std::string_view to_string(TemplateName t) {
    switch (t) {
        case TemplateName::synth: return "synth";
        case TemplateName::extract: return "extract";
        case TemplateName::list: return "list";
        case TemplateName::point: return "point";
        case TemplateName::cot_incremental: return "cot_incremental";
        case TemplateName::cot_full_replacement: return "cot_full_replacement";
        case TemplateName::global_skill: return "global_skill";
    }
    return "list";
}

TemplateName template_from_string(std::string_view s) {
    for (auto t : kAllTemplates) {
        if (to_string(t) == s) return t;
    }
    throw ConfigError("unknown template name '" + std::string(s) + "'");
}

std::vector<std::string> PromptTemplate::placeholders() const {
    std::vector<std::string> out;
    scan_template(
        body, [](std::string_view) {},
        [&](std::string name) {
            if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
        });
    return out;
}

std::string render(const PromptTemplate& tmpl, const Bindings& bindings, std::size_t max_chars) {
    std::string out;
    std::vector<std::string> missing;
    scan_template(
        tmpl.body, [&](std::string_view text) { out.append(text); },
        [&](const std::string& name) {
            auto it = bindings.find(name);
            if (it == bindings.end()) {
                missing.push_back(name);
                return;
            }
            out.append(it->second);
        });
    if (!missing.empty())
        throw ConfigError("template '" + std::string(to_string(tmpl.name)) + "': unbound placeholder {" +
                          missing.front() + "}");
    if (out.size() > max_chars)
        throw ConfigError("template '" + std::string(to_string(tmpl.name)) + "': rendered prompt of " +
                          std::to_string(out.size()) + " chars exceeds cap " + std::to_string(max_chars));
    return out;
}

TemplateLibrary TemplateLibrary::load(const fs::path& dir) {
    TemplateLibrary lib;
    for (auto t : kAllTemplates) {
        const auto path = dir / (std::string(to_string(t)) + ".txt");
        if (!fs::exists(path)) throw ConfigError("missing prompt template " + path.string());
        lib.add(PromptTemplate{t, read_file(path)});
    }
    return lib;
}

void TemplateLibrary::add(PromptTemplate tmpl) { templates_[tmpl.name] = std::move(tmpl); }

const PromptTemplate& TemplateLibrary::get(TemplateName name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw ConfigError("template not loaded: " + std::string(to_string(name)));
    return it->second;
}

std::string TemplateLibrary::render(TemplateName name, const Bindings& bindings) const {
    return skillrec::render(get(name), bindings, max_prompt_chars);
}

fs::path default_data_dir() {
    if (const char* env = std::getenv("SKILLREC_DATA_DIR"); env && *env) return fs::path(env);
    return fs::path(SKILLREC_DATA_DIR);
}

// ---------------------------------------------------------------------------

std::string fingerprint(const Bindings& bindings) {
    Fnv1a h;
    for (const auto& [k, v] : bindings) {
        h.update(k);
        h.update(std::string_view("\0", 1));
        h.update(v);
        h.update(std::string_view("\x1f", 1));
    }
    return h.hex();
}

std::string OracleBackend::exact_key(TemplateName t, const std::string& fp, std::optional<int> seq) {
    return std::string(to_string(t)) + "|" + fp + "|" + (seq ? std::to_string(*seq) : std::string("*"));
}

std::shared_ptr<OracleBackend> OracleBackend::from_file(const fs::path& path) {
    return from_records(read_jsonl(path));
}

std::shared_ptr<OracleBackend> OracleBackend::from_records(const std::vector<json>& records) {
    auto oracle = std::make_shared<OracleBackend>();
    std::size_t index = 0;
    for (const auto& rec : records) {
        ++index;
        if (!rec.is_object() || !rec.contains("template") || !rec.contains("response"))
            throw DataError("oracle record " + std::to_string(index) + ": needs template and response");
        const auto name = template_from_string(rec.at("template").get<std::string>());
        std::optional<int> seq;
        if (rec.contains("seq") && !rec.at("seq").is_null()) seq = rec.at("seq").get<int>();
        const auto response = rec.at("response").get<std::string>();
        if (rec.contains("fingerprint")) {
            oracle->exact_[exact_key(name, rec.at("fingerprint").get<std::string>(), seq)] = response;
        } else if (rec.contains("match")) {
            Matcher m{name, {}, seq, response};
            for (const auto& [k, v] : rec.at("match").items()) m.match[k] = v.get<std::string>();
            oracle->matchers_.push_back(std::move(m));
        } else {
            throw DataError("oracle record " + std::to_string(index) + ": needs fingerprint or match");
        }
    }
    return oracle;
}

LlmResponse OracleBackend::complete(const LlmRequest& request) {
    const auto fp = fingerprint(request.bindings);
    const std::string* hit = nullptr;
    if (auto it = exact_.find(exact_key(request.template_name, fp, request.sequence)); it != exact_.end()) {
        hit = &it->second;
    } else if (auto it2 = exact_.find(exact_key(request.template_name, fp, std::nullopt)); it2 != exact_.end()) {
        hit = &it2->second;
    } else {
        for (const auto& m : matchers_) {
            if (m.name != request.template_name) continue;
            if (m.seq && *m.seq != request.sequence) continue;
            bool ok = true;
            for (const auto& [k, v] : m.match) {
                auto b = request.bindings.find(k);
                if (b == request.bindings.end() || b->second != v) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                hit = &m.response;
                break;
            }
        }
    }
    if (!hit) {
        std::string who;
        if (auto u = request.bindings.find("user_id"); u != request.bindings.end()) who = " user_id=" + u->second;
        throw ScriptMiss("oracle script miss: template=" + std::string(to_string(request.template_name)) +
                         " fingerprint=" + fp + " seq=" + std::to_string(request.sequence) + who);
    }
    LlmResponse r;
    r.text = *hit;
    r.backend = id();
    r.usage.prompt_tokens = static_cast<std::int64_t>(whitespace_token_count(request.prompt));
    r.usage.completion_tokens = static_cast<std::int64_t>(whitespace_token_count(*hit));
    return r;
}

LlmResponse FunctionBackend::complete(const LlmRequest& request) {
    LlmResponse r;
    r.text = fn_(request);
    r.backend = name_;
    r.usage.prompt_tokens = static_cast<std::int64_t>(whitespace_token_count(request.prompt));
    r.usage.completion_tokens = static_cast<std::int64_t>(whitespace_token_count(r.text));
    return r;
}

LlmResponse RecordingBackend::complete(const LlmRequest& request) {
    auto r = inner_->complete(request);
    const auto fp = fingerprint(request.bindings);
    json rec{{"template", to_string(request.template_name)},
             {"fingerprint", fp},
             {"seq", request.sequence},
             {"response", r.text}};
    const auto key = std::string(to_string(request.template_name)) + "|" + fp + "|" +
                     std::to_string(request.sequence);
    std::lock_guard lock(mu_);
    records_.emplace(key, std::move(rec));
    return r;
}

std::vector<json> RecordingBackend::records() const {
    std::lock_guard lock(mu_);
    std::vector<json> out;
    out.reserve(records_.size());
    for (const auto& [k, v] : records_) out.push_back(v);
    return out;
}

void RecordingBackend::write(const fs::path& path) const {
    std::string text;
    for (const auto& rec : records()) text += rec.dump() + "\n";
    write_file_atomic(path, text);
}

// ---------------------------------------------------------------------------
// Structured output
// ---------------------------------------------------------------------------

std::string_view to_string(SchemaId s) {
    switch (s) {
        case SchemaId::skill_diff: return "skill_diff";
        case SchemaId::ranked_list: return "ranked_list";
        case SchemaId::facet_list: return "facet_list";
        case SchemaId::slim_skill: return "slim_skill";
        case SchemaId::policy_skill: return "policy_skill";
        case SchemaId::point_score: return "point_score";
    }
    return "?";
}

namespace {

struct SchemaViolation {
    std::string path;
    std::string message;
};

// Index one past the bracket matching raw[start], honoring JSON strings.
std::optional<std::size_t> match_bracket(std::string_view raw, std::size_t start) {
    std::vector<char> stack;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < raw.size(); ++i) {
        const char c = raw[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{' || c == '[') {
            stack.push_back(c == '{' ? '}' : ']');
        } else if (c == '}' || c == ']') {
            if (stack.empty() || stack.back() != c) return std::nullopt;
            stack.pop_back();
            if (stack.empty()) return i + 1;
        }
    }
    return std::nullopt;
}

std::string strip_trailing_commas(std::string_view text) {
    std::string out;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            out.push_back(c);
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') in_string = true;
        if (c == ',') {
            std::size_t j = i + 1;
            while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
            if (j < text.size() && (text[j] == '}' || text[j] == ']')) continue;
        }
        out.push_back(c);
    }
    return out;
}

std::optional<json> try_parse(std::string_view slice) {
    auto j = json::parse(slice, nullptr, false);
    if (!j.is_discarded()) return j;
    j = json::parse(strip_trailing_commas(slice), nullptr, false);
    if (!j.is_discarded()) return j;
    return std::nullopt;
}

std::optional<SchemaViolation> expect_string(const json& j, const std::string& path) {
    if (!j.is_string()) return SchemaViolation{path, "expected string"};
    return std::nullopt;
}

std::optional<SchemaViolation> check_items(const json& arr, const std::string& path, const char* note_key) {
    if (!arr.is_array()) return SchemaViolation{path, "expected array"};
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto p = path + "/" + std::to_string(i);
        const auto& item = arr[i];
        if (!item.is_object()) return SchemaViolation{p, "expected object"};
        if (!item.contains("attribute")) return SchemaViolation{p + "/attribute", "missing"};
        if (auto v = expect_string(item["attribute"], p + "/attribute")) return v;
        if (trim(item["attribute"].get<std::string>()).empty())
            return SchemaViolation{p + "/attribute", "empty attribute"};
        if (item.contains(note_key) && !item[note_key].is_string() && !item[note_key].is_null())
            return SchemaViolation{p + "/" + note_key, "expected string"};
    }
    return std::nullopt;
}

std::optional<SchemaViolation> validate_diff(const json& j) {
    if (!j.is_object()) return SchemaViolation{"", "expected object"};
    const json* body = &j;
    std::string base;
    if (j.contains("incremental_update")) {
        body = &j.at("incremental_update");
        base = "/incremental_update";
        if (!body->is_object()) return SchemaViolation{base, "expected object"};
    } else if (!j.contains("new_preferences") && !j.contains("reinforced") && !j.contains("weakened")) {
        return SchemaViolation{"/incremental_update", "missing"};
    }
    if (j.contains("analysis") && !j["analysis"].is_string()) return SchemaViolation{"/analysis", "expected string"};
    if (body->contains("new_preferences"))
        if (auto v = check_items(body->at("new_preferences"), base + "/new_preferences", "reason")) return v;
    if (body->contains("reinforced"))
        if (auto v = check_items(body->at("reinforced"), base + "/reinforced", "evidence")) return v;
    if (body->contains("weakened"))
        if (auto v = check_items(body->at("weakened"), base + "/weakened", "reason")) return v;
    return std::nullopt;
}

std::optional<SchemaViolation> validate_ranking(const json& j) {
    const json* arr = &j;
    std::string base;
    if (j.is_object()) {
        if (!j.contains("ranking")) return SchemaViolation{"/ranking", "missing"};
        arr = &j.at("ranking");
        base = "/ranking";
    }
    if (!arr->is_array()) return SchemaViolation{base, "expected array"};
    for (std::size_t i = 0; i < arr->size(); ++i) {
        const auto& e = (*arr)[i];
        const auto p = base + "/" + std::to_string(i);
        if (e.is_string() || e.is_number_integer()) continue;
        if (!e.is_object()) return SchemaViolation{p, "expected object or id"};
        if (!e.contains("item_id")) return SchemaViolation{p + "/item_id", "missing"};
        if (!e["item_id"].is_string() && !e["item_id"].is_number_integer())
            return SchemaViolation{p + "/item_id", "expected string"};
        if (e.contains("rationale") && !e["rationale"].is_string() && !e["rationale"].is_null())
            return SchemaViolation{p + "/rationale", "expected string"};
    }
    return std::nullopt;
}

std::optional<SchemaViolation> validate_facets(const json& j) {
    const json* arr = &j;
    std::string base;
    if (j.is_object()) {
        if (!j.contains("facets")) return SchemaViolation{"/facets", "missing"};
        arr = &j.at("facets");
        base = "/facets";
    }
    if (!arr->is_array()) return SchemaViolation{base, "expected array"};
    for (std::size_t i = 0; i < arr->size(); ++i) {
        const auto& f = (*arr)[i];
        const auto p = base + "/" + std::to_string(i);
        if (!f.is_object()) return SchemaViolation{p, "expected object"};
        if (!f.contains("facet")) return SchemaViolation{p + "/facet", "missing"};
        if (auto v = expect_string(f["facet"], p + "/facet")) return v;
        if (!f.contains("confidence")) return SchemaViolation{p + "/confidence", "missing"};
        if (!f["confidence"].is_number()) return SchemaViolation{p + "/confidence", "expected number"};
        const double c = f["confidence"].get<double>();
        if (!(c >= 0.0 && c <= 1.0)) return SchemaViolation{p + "/confidence", "out of range [0,1]"};
        if (f.contains("supporting_neighbors")) {
            const auto& s = f["supporting_neighbors"];
            if (!s.is_array()) return SchemaViolation{p + "/supporting_neighbors", "expected array"};
            for (std::size_t k = 0; k < s.size(); ++k) {
                if (!s[k].is_string() && !s[k].is_number_integer())
                    return SchemaViolation{p + "/supporting_neighbors/" + std::to_string(k), "expected string"};
            }
        }
    }
    return std::nullopt;
}

std::optional<SchemaViolation> validate_entries(const json& arr, const std::string& path) {
    if (!arr.is_array()) return SchemaViolation{path, "expected array"};
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto p = path + "/" + std::to_string(i);
        const auto& e = arr[i];
        if (!e.is_object()) return SchemaViolation{p, "expected object"};
        if (!e.contains("attribute")) return SchemaViolation{p + "/attribute", "missing"};
        if (auto v = expect_string(e["attribute"], p + "/attribute")) return v;
        const char* tier_key = e.contains("tier") ? "tier" : "confidence";
        if (!e.contains(tier_key)) return SchemaViolation{p + "/confidence", "missing"};
        if (!e[tier_key].is_string()) return SchemaViolation{p + "/" + tier_key, "expected string"};
        const auto t = to_lower(e[tier_key].get<std::string>());
        if (t != "low" && t != "medium" && t != "high")
            return SchemaViolation{p + "/" + tier_key, "expected low|medium|high"};
    }
    return std::nullopt;
}

std::optional<SchemaViolation> validate_policy(const json& j) {
    if (!j.is_object()) return SchemaViolation{"", "expected object"};
    bool any = false;
    for (const char* key : {"core_preferences", "behavioral_patterns", "ranking_criteria"}) {
        if (!j.contains(key)) continue;
        any = true;
        if (auto v = validate_entries(j.at(key), std::string("/") + key)) return v;
    }
    if (!any) return SchemaViolation{"/core_preferences", "missing"};
    if (j.contains("strategy") && !j["strategy"].is_string()) return SchemaViolation{"/strategy", "expected string"};
    return std::nullopt;
}

std::optional<SchemaViolation> validate_point(const json& j) {
    if (j.is_number()) return std::nullopt;
    if (!j.is_object()) return SchemaViolation{"", "expected object"};
    if (!j.contains("score")) return SchemaViolation{"/score", "missing"};
    if (!j["score"].is_number()) return SchemaViolation{"/score", "expected number"};
    return std::nullopt;
}

std::optional<SchemaViolation> validate_slim_json(const json& j) {
    if (!j.is_object()) return SchemaViolation{"", "expected object"};
    if (!j.contains("likes")) return SchemaViolation{"/likes", "missing"};
    if (!j["likes"].is_array()) return SchemaViolation{"/likes", "expected array"};
    for (std::size_t i = 0; i < j["likes"].size(); ++i) {
        if (auto v = expect_string(j["likes"][i], "/likes/" + std::to_string(i))) return v;
    }
    if (j.contains("style") && !j["style"].is_string()) return SchemaViolation{"/style", "expected string"};
    return std::nullopt;
}

std::optional<SchemaViolation> validate_schema(const json& j, SchemaId schema) {
    switch (schema) {
        case SchemaId::skill_diff: return validate_diff(j);
        case SchemaId::ranked_list: return validate_ranking(j);
        case SchemaId::facet_list: return validate_facets(j);
        case SchemaId::policy_skill: return validate_policy(j);
        case SchemaId::point_score: return validate_point(j);
        case SchemaId::slim_skill: return validate_slim_json(j);
    }
    return std::nullopt;
}

// `likes: a, b, c | style: phrase` anywhere in the text (one line).
std::optional<json> parse_slim_line(std::string_view raw) {
    static const std::regex likes_re(R"((?:^|[^A-Za-z])likes\s*:\s*([^\n|]*)(?:\|\s*style\s*:\s*([^\n]*))?)",
                                     std::regex::icase);
    std::string text(raw);
    // Drop markdown emphasis and code ticks so "**likes:**" still matches.
    text.erase(std::remove_if(text.begin(), text.end(), [](char c) { return c == '*' || c == '`'; }), text.end());
    std::smatch m;
    if (!std::regex_search(text, m, likes_re)) return std::nullopt;
    json likes = json::array();
    for (auto& part : split(m[1].str(), ',')) {
        auto t = trim(part);
        if (!t.empty()) likes.push_back(t);
    }
    if (likes.empty()) return std::nullopt;
    std::string style = m[2].matched ? trim(m[2].str()) : std::string{};
    if (!style.empty() && (style.front() == '[' && style.back() == ']')) style = trim(style.substr(1, style.size() - 2));
    return json{{"likes", likes}, {"style", style}};
}

}  // namespace

json parse_structured(std::string_view raw, SchemaId schema) {
    std::optional<SchemaViolation> first_violation;
    bool parsed_any = false;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] != '{' && raw[i] != '[') continue;
        auto end = match_bracket(raw, i);
        if (!end) continue;
        auto doc = try_parse(raw.substr(i, *end - i));
        if (!doc) continue;
        parsed_any = true;
        auto violation = validate_schema(*doc, schema);
        if (!violation) return *doc;
        if (!first_violation) first_violation = violation;
    }
    if (schema == SchemaId::slim_skill) {
        if (auto line = parse_slim_line(raw)) return *line;
    }
    if (schema == SchemaId::point_score) {
        static const std::regex labeled_re(R"(score\W{0,6}(10|[0-9])\b)", std::regex::icase);
        static const std::regex bare_re(R"(^(10|[0-9])(\s*/\s*10)?\.?$)");
        const std::string text(raw);
        const std::string bare = trim(raw);
        std::smatch m;
        if (std::regex_search(text, m, labeled_re) || std::regex_match(bare, m, bare_re))
            return json{{"score", std::stoi(m[1].str())}};
    }
    if (parsed_any && first_violation) {
        throw ParseError("schema violation (" + std::string(to_string(schema)) + ") at '" +
                         (first_violation->path.empty() ? std::string("/") : first_violation->path) +
                         "': " + first_violation->message);
    }
    throw ParseError("no parsable object (" + std::string(to_string(schema)) + ")");
}

ParsedDiff parse_skill_diff(std::string_view raw) {
    const auto doc = parse_structured(raw, SchemaId::skill_diff);
    ParsedDiff out;
    out.diff.analysis = doc.value("analysis", std::string{});
    const json& body = doc.contains("incremental_update") ? doc.at("incremental_update") : doc;
    auto read = [](const json& arr, const char* note_key) {
        std::vector<DiffItem> items;
        for (const auto& e : arr) {
            DiffItem d;
            d.attribute = trim(e.at("attribute").get<std::string>());
            if (e.contains(note_key) && e[note_key].is_string()) d.note = e[note_key].get<std::string>();
            if (e.contains("section") && e["section"].is_string()) d.section_tag = e["section"].get<std::string>();
            items.push_back(std::move(d));
        }
        return items;
    };
    if (body.contains("new_preferences")) out.diff.new_preferences = read(body.at("new_preferences"), "reason");
    if (body.contains("reinforced")) out.diff.reinforced = read(body.at("reinforced"), "evidence");
    if (body.contains("weakened")) out.diff.weakened = read(body.at("weakened"), "reason");
    for (const auto& [key, value] : body.items()) {
        if (key == "new_preferences" || key == "reinforced" || key == "weakened") continue;
        if (&body == &doc && key == "analysis") continue;
        out.notes.push_back("ignored diff field '" + key + "'");
    }
    validate(out.diff);
    return out;
}

std::vector<RankedEntry> parse_ranking(std::string_view raw) {
    const auto doc = parse_structured(raw, SchemaId::ranked_list);
    const json& arr = doc.is_object() ? doc.at("ranking") : doc;
    std::vector<RankedEntry> out;
    for (const auto& e : arr) {
        RankedEntry r;
        const json& id = e.is_object() ? e.at("item_id") : e;
        r.item_id = id.is_string() ? trim(id.get<std::string>()) : id.dump();
        if (e.is_object() && e.contains("rationale") && e["rationale"].is_string())
            r.rationale = e["rationale"].get<std::string>();
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<Facet> parse_facets(std::string_view raw) {
    const auto doc = parse_structured(raw, SchemaId::facet_list);
    const json& arr = doc.is_object() ? doc.at("facets") : doc;
    std::vector<Facet> out;
    for (const auto& f : arr) {
        Facet facet;
        facet.facet = f.at("facet").get<std::string>();
        facet.confidence = f.at("confidence").get<double>();
        if (f.contains("supporting_neighbors")) {
            for (const auto& n : f["supporting_neighbors"])
                facet.supporting_neighbors.push_back(n.is_string() ? n.get<std::string>() : n.dump());
        }
        out.push_back(std::move(facet));
    }
    return out;
}

SlimSkill parse_slim(std::string_view raw) {
    const auto doc = parse_structured(raw, SchemaId::slim_skill);
    SlimSkill slim;
    for (const auto& l : doc.at("likes")) {
        auto t = trim(l.get<std::string>());
        if (!t.empty()) slim.likes.push_back(t);
    }
    if (slim.likes.empty()) throw ParseError("slim skill has no likes");
    slim.style = doc.value("style", std::string{});
    slim.recount();
    return slim;
}

PolicySkill parse_policy_skill(std::string_view raw) {
    const auto doc = parse_structured(raw, SchemaId::policy_skill);
    PolicySkill skill;
    auto read = [&](const char* key, std::vector<PreferenceEntry>& dst) {
        if (!doc.contains(key)) return;
        for (const auto& e : doc.at(key)) {
            PreferenceEntry p;
            p.attribute = normalize_attribute(e.at("attribute").get<std::string>());
            p.tier = tier_from_string(e.contains("tier") ? e["tier"].get<std::string>()
                                                         : e["confidence"].get<std::string>());
            if (e.contains("source") && e["source"].is_string()) {
                const auto src = to_lower(e["source"].get<std::string>());
                p.source = src == "emerging" ? Source::emerging : Source::confirmed;
            }
            // Duplicates within a section keep the first occurrence.
            if (std::none_of(dst.begin(), dst.end(), [&](const auto& x) { return x.attribute == p.attribute; }))
                dst.push_back(std::move(p));
        }
    };
    read("core_preferences", skill.core_preferences);
    read("behavioral_patterns", skill.behavioral_patterns);
    read("ranking_criteria", skill.ranking_criteria);
    skill.strategy = doc.value("strategy", std::string{});
    return skill;
}

std::optional<int> parse_point_score(std::string_view raw) {
    try {
        const auto doc = parse_structured(raw, SchemaId::point_score);
        const double v = doc.is_number() ? doc.get<double>() : doc.at("score").get<double>();
        if (!(v >= 1.0 && v <= 10.0)) return std::nullopt;
        return static_cast<int>(std::lround(v));
    } catch (const ParseError&) {
        return std::nullopt;
    }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<LlmBackend> backend, TemplateLibrary templates, GatewayOptions options)
    : backend_(std::move(backend)), templates_(std::move(templates)), options_(std::move(options)) {
    if (!backend_) throw ConfigError("gateway needs a backend");
}

LlmResponse Gateway::complete(TemplateName name, const Bindings& bindings, int sequence, CallStats* stats) {
    LlmRequest request;
    request.template_name = name;
    request.bindings = bindings;
    request.temperature = options_.temperature;
    request.max_output_tokens = options_.max_output_tokens;
    request.sequence = sequence;
    request.prompt = templates_.render(name, bindings);
    if (auto it = bindings.find("__reask"); it != bindings.end()) request.prompt += "\n\n" + it->second;
    return dispatch(request, stats);
}

LlmResponse Gateway::dispatch(const LlmRequest& request, CallStats* stats) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
        auto response = backend_->complete(request);
        response.latency_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        ++total_calls_;
        if (stats) {
            ++stats->calls;
            stats->prompt_tokens += response.usage.prompt_tokens;
            stats->completion_tokens += response.usage.completion_tokens;
        }
        audit(request, &response, {});
        return response;
    } catch (const std::exception& e) {
        ++total_calls_;
        if (stats) ++stats->calls;
        audit(request, nullptr, e.what());
        throw;
    }
}

void Gateway::audit(const LlmRequest& request, const LlmResponse* response, std::string_view error) {
    if (options_.audit_log.empty()) return;
    json rec{{"template", to_string(request.template_name)},
             {"fingerprint", fingerprint(request.bindings)},
             {"seq", request.sequence},
             {"backend", backend_->id()},
             {"prompt_chars", request.prompt.size()}};
    if (response) {
        rec["ok"] = true;
        rec["latency_ms"] = response->latency_ms;
        rec["prompt_tokens"] = response->usage.prompt_tokens;
        rec["completion_tokens"] = response->usage.completion_tokens;
        rec["response"] = response->text;
    } else {
        rec["ok"] = false;
        rec["error"] = std::string(error);
    }
    std::lock_guard lock(audit_mu_);
    std::ofstream out(options_.audit_log, std::ios::app);
    out << rec.dump() << "\n";
}

}  // namespace skillrec
