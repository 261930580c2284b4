#include "skillrec/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "skillrec/errors.hpp"

namespace skillrec {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

namespace {

template <typename Fn>
std::size_t for_each_jsonl(const fs::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    std::size_t records = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto where = path.filename().string() + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(where + ": malformed JSON: " + e.what());
        }
        if (!j.is_object()) throw DataError(where + ": expected an object");
        try {
            fn(j, where);
        } catch (const json::exception& e) {
            throw DataError(where + ": " + e.what());
        }
        ++records;
    }
    return records;
}

std::string id_field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw DataError(where + ": missing field '" + key + "'");
    const auto& v = j.at(key);
    if (v.is_string()) {
        auto s = v.get<std::string>();
        if (s.empty()) throw DataError(where + ": empty '" + key + "'");
        return s;
    }
    if (v.is_number_integer()) return v.dump();
    throw DataError(where + ": field '" + key + "' must be a string or integer");
}

std::int64_t ts_field(const json& j, const std::string& where) {
    const char* key = j.contains("ts") ? "ts" : "timestamp";
    if (!j.contains(key)) throw DataError(where + ": missing field 'ts'");
    const auto& v = j.at(key);
    if (!v.is_number_integer()) throw DataError(where + ": field 'ts' must be an integer");
    return v.get<std::int64_t>();
}

std::string metadata_value(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_array()) {
        std::vector<std::string> parts;
        for (const auto& e : v) parts.push_back(metadata_value(e));
        return join(parts, ", ");
    }
    if (v.is_null()) return "";
    return v.dump();
}

}  // namespace

std::vector<std::string> Dataset::users() const {
    std::vector<std::string> out;
    for (const auto& [u, _] : interactions) out.push_back(u);
    return out;
}

std::size_t Dataset::interaction_count() const {
    std::size_t n = 0;
    for (const auto& [_, recs] : interactions) n += recs.size();
    return n;
}

std::string Dataset::instruction_for(const std::string& user_id, std::int64_t ts) const {
    auto it = instructions.find(user_id);
    if (it == instructions.end() || it->second.empty()) return std::string(kDefaultInstruction);
    const Instruction* best = nullptr;
    for (const auto& ins : it->second) {
        if (ins.timestamp == ts) return ins.text;
        if (ins.timestamp < ts) best = &ins;
    }
    return best ? best->text : it->second.front().text;
}

Dataset ingest(const fs::path& dir, const IngestOptions& options) {
    if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
    Dataset data;

    const auto item_rows = for_each_jsonl(dir / "items.jsonl", [&](const json& j, const std::string& where) {
        Item item;
        item.item_id = id_field(j, "item_id", where);
        if (!j.contains("title") || !j["title"].is_string()) throw DataError(where + ": missing string 'title'");
        item.title = j["title"].get<std::string>();
        if (j.contains("description")) {
            const auto& d = j["description"];
            item.description = d.is_string() ? d.get<std::string>() : (d.is_null() ? "" : d.dump());
        }
        if (j.contains("metadata")) {
            if (!j["metadata"].is_object()) throw DataError(where + ": 'metadata' must be an object");
            for (const auto& [k, v] : j["metadata"].items()) item.metadata[k] = metadata_value(v);
        }
        if (!data.catalog.emplace(item.item_id, item).second)
            throw DataError(where + ": duplicate item_id " + item.item_id);
    });
    if (data.catalog.empty()) throw DataError("items.jsonl: empty catalog");
    for (const auto& [id, _] : data.catalog) data.item_ids.push_back(id);

    std::map<std::string, std::pair<std::size_t, std::size_t>> label_counts;  // labeled, unlabeled
    const auto interaction_rows =
        for_each_jsonl(dir / "interactions.jsonl", [&](const json& j, const std::string& where) {
            InteractionRecord r;
            r.user_id = id_field(j, "user_id", where);
            r.item_id = id_field(j, "item_id", where);
            r.timestamp = ts_field(j, where);
            bool labeled = false;
            if (j.contains("split") && !j["split"].is_null()) {
                try {
                    r.split = split_from_string(j["split"].get<std::string>());
                } catch (const std::exception& e) {
                    throw DataError(where + ": " + e.what());
                }
                labeled = true;
            }
            if (!data.catalog.count(r.item_id)) {
                ++data.dropped_dangling;
                data.warnings.push_back(where + ": unknown item " + r.item_id + ", record dropped");
                return;
            }
            auto& c = label_counts[r.user_id];
            (labeled ? c.first : c.second)++;
            data.interactions[r.user_id].push_back(std::move(r));
        });
    if (interaction_rows > 0 &&
        static_cast<double>(data.dropped_dangling) > options.max_dangling_share * static_cast<double>(interaction_rows))
        throw DataError("interactions.jsonl: " + std::to_string(data.dropped_dangling) + " of " +
                        std::to_string(interaction_rows) + " records reference missing items (cap " +
                        std::to_string(options.max_dangling_share * 100.0) + "%)");
    for (const auto& [user, c] : label_counts) {
        if (c.first && c.second) throw DataError("user " + user + " mixes labeled and unlabeled interactions");
        if (c.first) data.labeled_users.insert(user);
    }
    for (auto& [_, recs] : data.interactions) {
        std::stable_sort(recs.begin(), recs.end(),
                         [](const InteractionRecord& a, const InteractionRecord& b) { return a.timestamp < b.timestamp; });
    }

    std::size_t instruction_rows = 0;
    if (fs::exists(dir / "instructions.jsonl")) {
        instruction_rows = for_each_jsonl(dir / "instructions.jsonl", [&](const json& j, const std::string& where) {
            Instruction ins;
            ins.user_id = id_field(j, "user_id", where);
            ins.timestamp = ts_field(j, where);
            if (!j.contains("text") || !j["text"].is_string()) throw DataError(where + ": missing string 'text'");
            ins.text = j["text"].get<std::string>();
            data.instructions[ins.user_id].push_back(std::move(ins));
        });
        for (auto& [_, list] : data.instructions) {
            std::stable_sort(list.begin(), list.end(),
                             [](const Instruction& a, const Instruction& b) { return a.timestamp < b.timestamp; });
        }
    } else {
        throw DataError("dataset missing instructions.jsonl: " + dir.string());
    }

    if (fs::exists(dir / "manifest.json")) {
        json m;
        try {
            m = json::parse(read_file(dir / "manifest.json"));
        } catch (const json::parse_error& e) {
            throw DataError("manifest.json: " + std::string(e.what()));
        }
        auto check = [&](const char* key, std::size_t actual) {
            if (!m.contains(key)) return;
            const auto expected = m.at(key).get<std::size_t>();
            if (expected != actual)
                throw DataError("manifest mismatch for " + std::string(key) + ": expected " +
                                std::to_string(expected) + ", found " + std::to_string(actual));
        };
        check("items", item_rows);
        check("interactions", interaction_rows);
        check("instructions", instruction_rows);
        check("users", data.interactions.size());
    }
    return data;
}

// ---------------------------------------------------------------------------
// Splits and sampling
// ---------------------------------------------------------------------------

UserSplit split_user(const std::vector<InteractionRecord>& records, bool labeled, double history_fraction) {
    UserSplit s;
    if (labeled) {
        for (const auto& r : records) {
            switch (r.split) {
                case Split::history: s.history.push_back(r); break;
                case Split::warmup: s.warmup.push_back(r); break;
                case Split::test: s.test.push_back(r); break;
            }
        }
        return s;
    }
    const auto n = records.size();
    const auto h = static_cast<std::size_t>(std::floor(history_fraction * static_cast<double>(n)));
    const auto hist = std::min(h, n);
    const auto rem = n - hist;
    const auto w = rem == 0 ? std::size_t{0} : std::min<std::size_t>(kMaxTau, rem - 1);
    for (std::size_t i = 0; i < n; ++i) {
        auto r = records[i];
        if (i < hist) {
            r.split = Split::history;
            s.history.push_back(r);
        } else if (i < hist + w) {
            r.split = Split::warmup;
            s.warmup.push_back(r);
        } else {
            r.split = Split::test;
            s.test.push_back(r);
        }
    }
    return s;
}

std::map<std::string, UserSplit> split_all(const Dataset& data, double history_fraction) {
    std::map<std::string, UserSplit> out;
    for (const auto& [user, recs] : data.interactions)
        out.emplace(user, split_user(recs, data.labeled_users.count(user) != 0, history_fraction));
    return out;
}

namespace {

std::mt19937_64 seeded_rng(std::uint64_t seed, const std::string& user_id, std::uint64_t round, std::uint64_t salt) {
    std::uint64_t s = splitmix64(seed ^ salt);
    s = splitmix64(s ^ fnv1a(user_id));
    s = splitmix64(s ^ round);
    return std::mt19937_64(s);
}

constexpr std::uint64_t kSampleSalt = 0x5a4d504c45ULL;   // "SAMPLE"-ish
constexpr std::uint64_t kPresentSalt = 0x5052455345ULL;  // "PRESE"-ish

}  // namespace

std::vector<std::string> sample_candidates(const std::string& user_id, const std::string& positive,
                                           const std::vector<std::string>& item_ids,
                                           const std::set<std::string>& excluded, std::size_t n, std::uint64_t seed,
                                           std::uint64_t round) {
    if (n == 0) throw ConfigError("candidate count must be positive");
    std::vector<std::string> eligible;
    eligible.reserve(item_ids.size());
    for (const auto& id : item_ids) {
        if (id != positive && !excluded.count(id)) eligible.push_back(id);
    }
    const auto need = n - 1;
    if (eligible.size() < need)
        throw DataError("insufficient negatives for user " + user_id + ": need " + std::to_string(need) + ", have " +
                        std::to_string(eligible.size()));
    auto rng = seeded_rng(seed, user_id, round, kSampleSalt);
    for (std::size_t i = 0; i < need; ++i) {
        const auto j = i + static_cast<std::size_t>(bounded(rng, eligible.size() - i));
        std::swap(eligible[i], eligible[j]);
    }
    std::vector<std::string> out{positive};
    out.insert(out.end(), eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(need));
    return out;
}

std::vector<std::string> presentation_order(std::vector<std::string> ids, const std::string& user_id,
                                            std::uint64_t seed, std::uint64_t round) {
    auto rng = seeded_rng(seed, user_id, round, kPresentSalt);
    for (std::size_t i = ids.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(bounded(rng, i));
        std::swap(ids[i - 1], ids[j]);
    }
    return ids;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double hit_from_rank(std::size_t rank, int k) {
    return rank >= 1 && rank <= static_cast<std::size_t>(std::max(k, 0)) ? 1.0 : 0.0;
}

double ndcg_from_rank(std::size_t rank, int k) {
    if (rank < 1 || rank > static_cast<std::size_t>(std::max(k, 0))) return 0.0;
    return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

namespace {

std::size_t required_rank(const RankedList& ranking, const std::string& positive) {
    auto r = ranking.rank_of(positive);
    if (!r) throw DataError("positive item " + positive + " absent from ranking");
    return *r;
}

}  // namespace

double hit_at_k(const RankedList& ranking, const std::string& positive, int k) {
    return hit_from_rank(required_rank(ranking, positive), k);
}

double ndcg_at_k(const RankedList& ranking, const std::string& positive, int k) {
    return ndcg_from_rank(required_rank(ranking, positive), k);
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

Ablation ablation_from_name(std::string_view name) {
    Ablation a;
    for (const auto& raw : split(name, '+')) {
        const auto part = to_lower(trim(raw));
        if (part == "full" || part == "incremental" || part.empty()) continue;
        if (part == "no_skill") {
            a.no_skill = true;
        } else if (part == "no_statinit") {
            a.no_statinit = true;
        } else if (part == "pointwise") {
            a.pointwise = true;
        } else if (part == "no_cot") {
            a.no_cot = true;
        } else if (part == "full_replacement" || part == "full_replacement_cot") {
            a.full_replacement_cot = true;
        } else {
            throw ConfigError("unknown ablation '" + part + "'");
        }
    }
    return a;
}

std::string ablation_name(const Ablation& a) {
    std::vector<std::string> parts;
    if (a.no_skill) parts.push_back("no_skill");
    if (a.no_statinit) parts.push_back("no_statinit");
    if (a.pointwise) parts.push_back("pointwise");
    if (a.no_cot) parts.push_back("no_cot");
    if (a.full_replacement_cot) parts.push_back("full_replacement");
    return parts.empty() ? "full" : join(parts, "+");
}

json EvalConfig::to_json() const {
    return json{{"n_candidates", n_candidates},
                {"ks", ks},
                {"tau", tau},
                {"inject", inject},
                {"seed", seed},
                {"ablation", ablation_name(ablation)},
                {"user_sample", user_sample},
                {"domain", domain},
                {"slim_mode", slim_mode},
                {"neighbors", neighbors},
                {"n_facets", n_facets},
                {"quality_threshold", quality_threshold},
                {"recency_weight", recency_weight},
                {"frequency_weight", frequency_weight},
                {"half_life", half_life},
                {"history_fraction", history_fraction},
                {"history_depth", history_depth},
                {"max_failure_share", max_failure_share},
                {"jobs", jobs},
                {"data_dir", data_dir}};
}

fs::path EvalConfig::resolved_data_dir() const { return data_dir.empty() ? default_data_dir() : fs::path(data_dir); }

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        T out{};
        if constexpr (std::is_same_v<T, double>) {
            out = std::stod(value, &used);
        } else if constexpr (std::is_same_v<T, int>) {
            out = std::stoi(value, &used);
        } else {
            if (!value.empty() && value.front() == '-') throw std::invalid_argument("negative");
            out = static_cast<T>(std::stoull(value, &used));
        }
        if (used != value.size()) throw std::invalid_argument("trailing text");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("invalid value for " + key + ": '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    const auto v = to_lower(value);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("invalid boolean for " + key + ": '" + value + "'");
}

}  // namespace

void apply_config_value(EvalConfig& c, const std::string& raw_key, const std::string& raw_value) {
    const auto key = to_lower(trim(raw_key));
    const auto value = trim(raw_value);
    if (key == "n_candidates" || key == "n") {
        c.n_candidates = parse_number<std::size_t>(key, value);
    } else if (key == "ks" || key == "k") {
        c.ks.clear();
        for (const auto& part : split(value, ',')) c.ks.push_back(parse_number<int>(key, trim(part)));
    } else if (key == "tau") {
        c.tau = parse_number<int>(key, value);
    } else if (key == "inject") {
        c.inject = parse_number<std::size_t>(key, value);
    } else if (key == "seed") {
        c.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "ablation") {
        c.ablation = ablation_from_name(value);
    } else if (key == "no_skill") {
        c.ablation.no_skill = parse_bool(key, value);
    } else if (key == "no_statinit") {
        c.ablation.no_statinit = parse_bool(key, value);
    } else if (key == "pointwise") {
        c.ablation.pointwise = parse_bool(key, value);
    } else if (key == "no_cot") {
        c.ablation.no_cot = parse_bool(key, value);
    } else if (key == "full_replacement_cot") {
        c.ablation.full_replacement_cot = parse_bool(key, value);
    } else if (key == "user_sample") {
        c.user_sample = parse_number<std::size_t>(key, value);
    } else if (key == "domain") {
        c.domain = std::string(to_string(domain_from_string(value)));
    } else if (key == "slim_mode") {
        c.slim_mode = to_lower(value);
    } else if (key == "neighbors") {
        c.neighbors = parse_number<std::size_t>(key, value);
    } else if (key == "n_facets") {
        c.n_facets = parse_number<std::size_t>(key, value);
    } else if (key == "quality_threshold") {
        c.quality_threshold = parse_number<double>(key, value);
    } else if (key == "recency_weight") {
        c.recency_weight = parse_number<double>(key, value);
    } else if (key == "frequency_weight") {
        c.frequency_weight = parse_number<double>(key, value);
    } else if (key == "half_life") {
        c.half_life = parse_number<double>(key, value);
    } else if (key == "history_fraction") {
        c.history_fraction = parse_number<double>(key, value);
    } else if (key == "history_depth") {
        c.history_depth = parse_number<int>(key, value);
    } else if (key == "max_failure_share") {
        c.max_failure_share = parse_number<double>(key, value);
    } else if (key == "jobs") {
        c.jobs = parse_number<int>(key, value);
    } else if (key == "data_dir") {
        c.data_dir = value;
    } else {
        throw ConfigError("unknown config key '" + raw_key + "'");
    }
}

std::map<std::string, std::string> read_config_file(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    std::map<std::string, std::string> out;
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

void validate(const EvalConfig& c) {
    if (c.n_candidates < 2) throw ConfigError("n_candidates must be >= 2");
    if (c.ks.empty()) throw ConfigError("ks must not be empty");
    for (int k : c.ks) {
        if (k < 1) throw ConfigError("every K must be >= 1");
    }
    if (c.tau < 0 || c.tau > kMaxTau) throw ConfigError("tau must be in [0, 3]");
    if (c.inject == 0) throw ConfigError("inject budget must be positive");
    if (c.slim_mode != "model" && c.slim_mode != "rules") throw ConfigError("slim_mode must be model or rules");
    (void)domain_from_string(c.domain);
    if (!(c.quality_threshold >= 0.0 && c.quality_threshold <= 1.0))
        throw ConfigError("quality_threshold must be in [0,1]");
    if (!(c.history_fraction >= 0.0 && c.history_fraction < 1.0))
        throw ConfigError("history_fraction must be in [0,1)");
    if (!(c.max_failure_share >= 0.0 && c.max_failure_share <= 1.0))
        throw ConfigError("max_failure_share must be in [0,1]");
    if (c.history_depth < 1) throw ConfigError("history_depth must be >= 1");
    if (c.jobs < 0) throw ConfigError("jobs must be >= 0");
}

// ---------------------------------------------------------------------------
// State and initialization
// ---------------------------------------------------------------------------

RunState build_state(const Dataset& data, double history_fraction) {
    RunState state;
    state.splits = split_all(data, history_fraction);
    for (const auto& [user, split] : state.splits) {
        state.graph.add_node(user_node(user));
        UserMemory mem{user, {}};
        for (const auto& r : split.history) {
            state.graph.record_interaction(user_node(user), item_node(r.item_id), r.timestamp);
            mem.bullets.push_back(memory_bullet(data.catalog.at(r.item_id), r.timestamp));
        }
        state.memories.emplace(user, std::move(mem));
    }
    return state;
}

void save_state(const RunState& state, const fs::path& dir) {
    fs::create_directories(dir);
    state.graph.save_jsonl(dir / "graph.jsonl");
    std::vector<UserMemory> mems;
    for (const auto& [_, m] : state.memories) mems.push_back(m);
    save_memories_jsonl(mems, dir / "memories.jsonl");
}

void load_state(RunState& state, const fs::path& dir) {
    if (!fs::exists(dir / "graph.jsonl") || !fs::exists(dir / "memories.jsonl"))
        throw DataError("store has no saved graph/memory state: " + dir.string());
    state.graph = SemanticGraph::load_jsonl(dir / "graph.jsonl");
    state.memories.clear();
    for (auto& m : load_memories_jsonl(dir / "memories.jsonl")) state.memories.emplace(m.user_id, std::move(m));
    for (const auto& [user, _] : state.splits) {
        if (!state.memories.count(user)) state.memories.emplace(user, UserMemory{user, {}});
        state.graph.add_node(user_node(user));
    }
}

InitSummary initialize_store(const Dataset& data, const RunState& state, const EvalConfig& config,
                             SkillStore& store, Gateway* gateway) {
    const auto domain = domain_from_string(config.domain);
    const auto data_dir = config.resolved_data_dir();
    const auto profile = DomainParserProfile::load(data_dir, domain);
    const auto global = global_init("__global__", domain, data_dir, gateway);

    std::vector<UserHistory> users;
    for (const auto& [user, split] : state.splits) {
        UserHistory u{user, config.ablation.no_statinit ? std::vector<InteractionRecord>{} : split.history};
        users.push_back(std::move(u));
    }
    auto skills = config.jobs == 1 ? initialize_skills_serial(users, data.catalog, profile, global)
                                   : initialize_skills_parallel(users, data.catalog, profile, global, {}, config.jobs);
    InitSummary summary;
    for (std::size_t i = 0; i < skills.size(); ++i) {
        ++summary.users;
        if (state.splits.at(users[i].user_id).history.empty()) ++summary.cold_start;
        for (auto s : kAllSections) {
            for (const auto& e : skills[i].section(s)) ++summary.tier_histogram[std::string(to_string(e.tier))];
        }
        store.unfreeze(skills[i].user_id);
        store.save(skills[i]);
    }
    return summary;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

Pipeline::Pipeline(const Dataset& data, RunState& state, SkillStore& store, Gateway& gateway, EvalConfig config,
                   TraceWriter* trace)
    : data_(data), state_(state), store_(store), gateway_(gateway), config_(std::move(config)), trace_(trace) {
    validate(config_);
}

std::vector<Item> Pipeline::items_for(const std::vector<std::string>& ids) const {
    std::vector<Item> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(data_.catalog.at(id));
    return out;
}

std::set<std::string> Pipeline::interacted(const std::string& user_id) const {
    std::set<std::string> out;
    if (auto it = data_.interactions.find(user_id); it != data_.interactions.end()) {
        for (const auto& r : it->second) out.insert(r.item_id);
    }
    return out;
}

RankOutcome Pipeline::rank(const RankRequest& request, CallStats* stats) {
    RankerConfig rc;
    rc.max_candidates = config_.n_candidates;
    return config_.ablation.pointwise ? rank_pointwise(gateway_, request, rc, stats)
                                      : rank_listwise(gateway_, request, rc, stats);
}

namespace {

std::vector<Facet> retrieve_facets(Gateway& gateway, RunState& state, const Dataset& data, const EvalConfig& c,
                                   const std::string& user, std::int64_t now, int seq, CallStats* stats) {
    const PruneConfig prune{c.recency_weight, c.frequency_weight, c.half_life};
    const auto neighbors = domain_prune(state.graph, user, c.neighbors, now, prune);
    return synthesize_facets(gateway, state.memories.at(user), neighbors, data.catalog,
                             FacetConfig{c.n_facets, c.quality_threshold}, seq, stats);
}

}  // namespace

void Pipeline::warmup_user(const std::string& user, UserResult& result) {
    if (store_.is_frozen(user)) return;
    const auto& split = state_.splits.at(user);
    auto& memory = state_.memories.at(user);
    const auto rounds = std::min<std::size_t>(static_cast<std::size_t>(config_.tau), split.warmup.size());
    Gateway* slim_gateway = config_.slim_mode == "model" ? &gateway_ : nullptr;
    const auto seen = interacted(user);

    for (std::size_t r = 1; r <= rounds; ++r) {
        const auto& event = split.warmup[r - 1];
        const int seq = static_cast<int>(r);
        if (config_.ablation.evolves()) {
            const auto skill = store_.load(user);
            auto facets = retrieve_facets(gateway_, state_, data_, config_, user, event.timestamp, seq,
                                          &result.calls["synth"]);
            const auto slim = extract_slim(skill, config_.inject, slim_gateway, seq, &result.calls["extract"]);
            const auto ids = sample_candidates(user, event.item_id, data_.item_ids, seen, config_.n_candidates,
                                               config_.seed, r);
            const auto shown = presentation_order(ids, user, config_.seed, r);
            RankRequest req{user,
                            data_.instruction_for(user, event.timestamp),
                            facets,
                            render_injection(skill, slim.slim, config_.inject),
                            items_for(shown),
                            seq};
            const auto outcome = rank(req, &result.calls["rank"]);
            if (trace_) {
                auto rec = trace_record(req, outcome);
                rec["phase"] = "warmup";
                trace_->write(rec);
            }
            RankedList basis = outcome.ranking;
            if (outcome.failed) {
                basis.entries.clear();
                for (const auto& id : shown) basis.entries.push_back(RankedEntry{id, ""});
            }
            EvolveInput in;
            in.skill = &skill;
            in.positive = &data_.catalog.at(event.item_id);
            for (const auto& id : build_contrastive_input(basis, event.item_id)) in.unchosen.push_back(&data_.catalog.at(id));
            in.facets = facets;
            in.sequence = seq;
            PolicySkill next;
            if (config_.ablation.full_replacement_cot) {
                next = evolve_full_replacement(gateway_, in, seq, &result.calls["evolve"]);
            } else {
                auto evolved = evolve_incremental(gateway_, in, &result.calls["evolve"]);
                for (auto& v : evolved.violations) result.protocol_notes.push_back("round " + std::to_string(r) + ": " + v);
                next = merge(skill, evolved.diff, seq);
            }
            if (store_.save(next) != SaveResult::saved)
                throw ProtocolError("skill for " + user + " is frozen during warmup");
        }
        propagate(event.item_id, memory, {}, state_.graph, data_.catalog, event.timestamp);
        ++result.warmup_rounds;
    }
    store_.freeze(user);
}

void Pipeline::test_user(const std::string& user, UserResult& result) {
    const auto& split = state_.splits.at(user);
    const auto skill = store_.load(user);
    const auto seen = interacted(user);
    std::string skill_text;
    if (!config_.ablation.no_skill) {
        Gateway* slim_gateway = config_.slim_mode == "model" ? &gateway_ : nullptr;
        const auto slim = extract_slim(skill, config_.inject, slim_gateway, static_cast<int>(test_round(0)) - 1,
                                       &result.calls["extract"]);
        skill_text = render_injection(skill, slim.slim, config_.inject);
        result.slim = slim.slim.render();
    }
    const auto frozen_hash = store_.user_content_hash(user);

    for (std::size_t j = 0; j < split.test.size(); ++j) {
        const auto& event = split.test[j];
        const auto round = test_round(j);
        const int seq = static_cast<int>(round);
        auto facets =
            retrieve_facets(gateway_, state_, data_, config_, user, event.timestamp, seq, &result.calls["synth"]);
        const auto ids =
            sample_candidates(user, event.item_id, data_.item_ids, seen, config_.n_candidates, config_.seed, round);
        const auto shown = presentation_order(ids, user, config_.seed, round);
        RankRequest req{user, data_.instruction_for(user, event.timestamp), facets, skill_text, items_for(shown), seq};
        const auto outcome = rank(req, &result.calls["rank"]);
        if (trace_) {
            auto rec = trace_record(req, outcome);
            rec["phase"] = "test";
            trace_->write(rec);
        }

        PredictionRecord p;
        p.user_id = user;
        p.event = j;
        p.positive = event.item_id;
        p.candidates = shown;
        p.failed = outcome.failed;
        p.repaired = !outcome.repair.clean();
        p.tie_count = outcome.tie_count;
        if (!outcome.failed) {
            p.ranking = outcome.ranking.ids();
            p.rank = *outcome.ranking.rank_of(event.item_id);
        }
        result.predictions.push_back(std::move(p));
        if (store_.user_content_hash(user) != frozen_hash) ++result.freeze_violations;
    }
}

UserResult Pipeline::run_user(const std::string& user_id, bool warmup, bool test) {
    UserResult result;
    result.user_id = user_id;
    try {
        if (!state_.splits.count(user_id)) throw DataError("unknown user " + user_id);
        if (!store_.exists(user_id)) throw NotInitialized("no skill stored for user " + user_id);
        if (warmup) warmup_user(user_id, result);
        if (test) test_user(user_id, result);
    } catch (const std::exception& e) {
        result.ok = false;
        result.error = e.what();
        result.predictions.clear();
    }
    return result;
}

std::vector<UserResult> run_users_serial(Pipeline& pipeline, const std::vector<std::string>& users, bool warmup,
                                         bool test) {
    std::vector<UserResult> out;
    out.reserve(users.size());
    for (const auto& u : users) out.push_back(pipeline.run_user(u, warmup, test));
    return out;
}

std::vector<UserResult> run_users_parallel(Pipeline& pipeline, const std::vector<std::string>& users, bool warmup,
                                           bool test, int jobs) {
    std::vector<UserResult> out(users.size());
    const auto n = static_cast<std::ptrdiff_t>(users.size());
#ifdef _OPENMP
    const int threads = jobs > 0 ? jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
#else
    (void)jobs;
#endif
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        out[k] = pipeline.run_user(users[k], warmup, test);
    }
    return out;
}

std::vector<std::string> select_users(const Dataset& data, const EvalConfig& config) {
    auto users = data.users();
    if (config.user_sample == 0 || config.user_sample >= users.size()) return users;
    auto rng = seeded_rng(config.seed, "__users__", 0, kSampleSalt);
    for (std::size_t i = 0; i < config.user_sample; ++i) {
        const auto j = i + static_cast<std::size_t>(bounded(rng, users.size() - i));
        std::swap(users[i], users[j]);
    }
    users.resize(config.user_sample);
    std::sort(users.begin(), users.end());
    return users;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

json stats_json(const CallStats& s) {
    return json{{"calls", s.calls},
                {"reasks", s.reasks},
                {"prompt_tokens", s.prompt_tokens},
                {"completion_tokens", s.completion_tokens}};
}

}  // namespace

std::string candidate_digest(const std::vector<UserResult>& results) {
    Fnv1a h;
    for (const auto& r : results) {
        for (const auto& p : r.predictions) {
            h.update(p.user_id);
            h.update_u64(p.event);
            auto sorted = p.candidates;
            std::sort(sorted.begin(), sorted.end());
            for (const auto& c : sorted) {
                h.update(c);
                h.update_u64(c.size());
            }
        }
    }
    return h.hex();
}

json build_report(const EvalConfig& config, const std::vector<UserResult>& results, const std::string& condition) {
    std::map<int, double> hits;
    std::map<int, double> gains;
    std::size_t predictions = 0;
    std::size_t failed_predictions = 0;
    std::size_t repaired = 0;
    std::size_t with_ties = 0;
    std::size_t total_ties = 0;
    std::size_t freeze_violations = 0;
    std::size_t protocol_notes = 0;
    std::map<std::string, CallStats> calls;
    json failed_users = json::array();
    json per_prediction = json::array();
    json per_user = json::array();

    for (const auto& r : results) {
        for (const auto& [stage, s] : r.calls) calls[stage] += s;
        freeze_violations += r.freeze_violations;
        protocol_notes += r.protocol_notes.size();
        per_user.push_back(json{{"user_id", r.user_id},
                                {"ok", r.ok},
                                {"warmup_rounds", r.warmup_rounds},
                                {"slim", r.slim},
                                {"protocol_notes", r.protocol_notes}});
        if (!r.ok) {
            failed_users.push_back(json{{"user_id", r.user_id}, {"error", r.error}});
            continue;
        }
        for (const auto& p : r.predictions) {
            ++predictions;
            failed_predictions += p.failed;
            repaired += p.repaired;
            with_ties += p.tie_count > 0;
            total_ties += p.tie_count;
            for (int k : config.ks) {
                hits[k] += hit_from_rank(p.rank, k);
                gains[k] += ndcg_from_rank(p.rank, k);
            }
            per_prediction.push_back(json{{"user_id", p.user_id},
                                          {"event", p.event},
                                          {"positive", p.positive},
                                          {"rank", p.rank},
                                          {"failed", p.failed},
                                          {"repaired", p.repaired},
                                          {"tie_count", p.tie_count},
                                          {"candidates", p.candidates}});
        }
    }
    json metrics = json::object();
    for (int k : config.ks) {
        const double denom = predictions ? static_cast<double>(predictions) : 1.0;
        metrics["H@" + std::to_string(k)] = hits[k] / denom;
        metrics["N@" + std::to_string(k)] = gains[k] / denom;
    }
    json stages = json::object();
    CallStats total;
    for (const auto& [stage, s] : calls) {
        stages[stage] = stats_json(s);
        total += s;
    }
    stages["total"] = stats_json(total);

    return json{{"condition", condition},
                {"config", config.to_json()},
                {"users", results.size()},
                {"failed_users", failed_users},
                {"predictions", predictions},
                {"failed_predictions", failed_predictions},
                {"repaired_predictions", repaired},
                {"metrics", metrics},
                {"ties",
                 {{"predictions_with_ties", with_ties},
                  {"total_tie_count", total_ties},
                  {"mean_tie_count", predictions ? static_cast<double>(total_ties) / predictions : 0.0}}},
                {"calls", stages},
                {"protocol_notes", protocol_notes},
                {"freeze_violations", freeze_violations},
                {"candidate_digest", candidate_digest(results)},
                {"per_user", per_user},
                {"per_prediction", per_prediction}};
}

namespace {

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

std::string render_report_markdown(const json& report) {
    std::ostringstream out;
    out << "# Evaluation report: " << report.at("condition").get<std::string>() << "\n\n";
    out << "| metric | value |\n|---|---|\n";
    for (const auto& [k, v] : report.at("metrics").items()) out << "| " << k << " | " << fixed4(v.get<double>()) << " |\n";
    out << "\n";
    out << "- users: " << report.at("users") << " (failed: " << report.at("failed_users").size() << ")\n";
    out << "- predictions: " << report.at("predictions") << " (failed: " << report.at("failed_predictions")
        << ", repaired: " << report.at("repaired_predictions") << ")\n";
    out << "- predictions with score ties: " << report.at("ties").at("predictions_with_ties") << "\n";
    out << "- model calls: " << report.at("calls").at("total").at("calls") << "\n";
    out << "- freeze violations: " << report.at("freeze_violations") << "\n\n";
    out << "## Resolved configuration\n\n```json\n" << report.at("config").dump(2) << "\n```\n";
    return out.str();
}

void write_report(const json& report, const fs::path& dir) {
    fs::create_directories(dir);
    write_file_atomic(dir / "report.json", dump_pretty(report));
    write_file_atomic(dir / "report.md", render_report_markdown(report));
}

ExperimentResult run_experiment(const Dataset& data, const EvalConfig& config, Gateway& gateway,
                                const fs::path& work_dir, TraceWriter* trace) {
    validate(config);
    const auto store_dir = work_dir / "store";
    fs::remove_all(store_dir);
    SkillStore store(store_dir, config.history_depth);
    RunState state = build_state(data, config.history_fraction);
    initialize_store(data, state, config, store, &gateway);

    Pipeline pipeline(data, state, store, gateway, config, trace);
    const auto users = select_users(data, config);
    ExperimentResult out;
    out.users = config.jobs == 1 ? run_users_serial(pipeline, users, true, true)
                                 : run_users_parallel(pipeline, users, true, true, config.jobs);
    save_state(state, store.root());
    out.store_hash = store.content_hash();
    out.report = build_report(config, out.users, ablation_name(config.ablation));
    out.report["store_hash"] = out.store_hash;
    write_report(out.report, work_dir);

    const auto failed = out.report.at("failed_users").size();
    if (!users.empty() && static_cast<double>(failed) > config.max_failure_share * static_cast<double>(users.size()))
        throw PartialFailure(std::to_string(failed) + " of " + std::to_string(users.size()) +
                             " users failed; first error: " +
                             out.report.at("failed_users").at(0).at("error").get<std::string>());
    return out;
}

std::vector<AblationCondition> ablation_matrix(const std::string& matrix, const EvalConfig& base) {
    std::vector<AblationCondition> out;
    auto with = [&](const std::string& name, auto&& mutate) {
        EvalConfig c = base;
        mutate(c);
        out.push_back(AblationCondition{name, c});
    };
    if (matrix == "rq3") {
        for (const char* name : {"full", "no_skill", "no_statinit", "pointwise", "no_cot"})
            with(name, [&](EvalConfig& c) { c.ablation = ablation_from_name(name); });
    } else if (matrix == "rq4") {
        with("incremental", [](EvalConfig& c) { c.ablation = Ablation{}; });
        with("full_replacement", [](EvalConfig& c) { c.ablation = ablation_from_name("full_replacement"); });
    } else if (matrix == "tau") {
        for (int t = 0; t <= kMaxTau; ++t) with("tau" + std::to_string(t), [t](EvalConfig& c) { c.tau = t; });
    } else if (matrix == "inject") {
        for (std::size_t b : {10, 30, 80, 150, 200})
            with("inject" + std::to_string(b), [b](EvalConfig& c) { c.inject = b; });
    } else {
        throw ConfigError("unknown ablation matrix '" + matrix + "' (rq3, rq4, tau, inject)");
    }
    return out;
}

json run_ablation(const Dataset& data, const EvalConfig& base, const std::string& matrix, Gateway& gateway,
                  const fs::path& out_dir, bool trace) {
    const auto conditions = ablation_matrix(matrix, base);
    json summary{{"matrix", matrix}, {"conditions", json::array()}};
    std::string first_digest;
    bool identical = true;
    std::string partial;
    for (const auto& cond : conditions) {
        const auto dir = out_dir / cond.name;
        std::unique_ptr<TraceWriter> tw;
        if (trace) tw = std::make_unique<TraceWriter>(dir / "trace.jsonl");
        json report;
        try {
            report = run_experiment(data, cond.config, gateway, dir, tw.get()).report;
        } catch (const PartialFailure& e) {
            partial = cond.name + ": " + e.what();
            report = json::parse(read_file(dir / "report.json"));
        }
        const auto digest = report.at("candidate_digest").get<std::string>();
        if (first_digest.empty()) first_digest = digest;
        identical = identical && digest == first_digest;
        summary["conditions"].push_back(json{{"name", cond.name},
                                             {"ablation", report.at("config").at("ablation")},
                                             {"metrics", report.at("metrics")},
                                             {"predictions", report.at("predictions")},
                                             {"failed_users", report.at("failed_users").size()},
                                             {"calls", report.at("calls").at("total").at("calls")},
                                             {"candidate_digest", digest},
                                             {"report", (fs::path(cond.name) / "report.json").generic_string()}});
    }
    summary["identical_candidate_sets"] = identical;
    summary["config"] = base.to_json();

    std::ostringstream md;
    md << "# Ablation matrix: " << matrix << "\n\n| condition |";
    for (int k : base.ks) md << " H@" << k << " |";
    for (int k : base.ks) {
        if (k > 1) md << " N@" << k << " |";
    }
    md << " predictions |\n|---|";
    for (int k : base.ks) md << (k > 1 ? "---|---|" : "---|");
    md << "---|\n";
    for (const auto& c : summary["conditions"]) {
        md << "| " << c["name"].get<std::string>() << " |";
        for (int k : base.ks) md << " " << fixed4(c["metrics"]["H@" + std::to_string(k)].get<double>()) << " |";
        for (int k : base.ks) {
            if (k > 1) md << " " << fixed4(c["metrics"]["N@" + std::to_string(k)].get<double>()) << " |";
        }
        md << " " << c["predictions"] << " |\n";
    }
    md << "\nCandidate sets identical across conditions: " << (identical ? "yes" : "no") << "\n";
    fs::create_directories(out_dir);
    write_file_atomic(out_dir / "ablation.json", dump_pretty(summary));
    write_file_atomic(out_dir / "ablation.md", md.str());
    if (!partial.empty()) throw PartialFailure(partial);
    return summary;
}

}  // namespace skillrec
