#include "skillrec/cli.hpp"

#include <algorithm>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "skillrec/errors.hpp"

namespace skillrec {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const PartialFailure*>(&e)) return kExitPartial;
    if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
    if (dynamic_cast<const BackendError*>(&e)) return kExitBackend;
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const ProtocolError*>(&e) ||
        dynamic_cast<const json::exception*>(&e))
        return kExitData;
    return 1;
}

StoreMeta read_store_meta(const fs::path& store) {
    const auto path = store / "meta.json";
    if (!fs::exists(path)) throw DataError("not an initialized store (no meta.json): " + store.string());
    try {
        const auto j = json::parse(read_file(path));
        StoreMeta meta;
        meta.dataset = j.at("dataset").get<std::string>();
        for (const auto& [key, value] : j.at("config").items()) {
            if (key == "ks") {
                std::vector<std::string> parts;
                for (const auto& k : value) parts.push_back(std::to_string(k.get<int>()));
                apply_config_value(meta.config, key, join(parts, ","));
            } else {
                apply_config_value(meta.config, key, value.is_string() ? value.get<std::string>() : value.dump());
            }
        }
        return meta;
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_store_meta(const fs::path& store, const StoreMeta& meta) {
    write_file_atomic(store / "meta.json", dump_pretty(json{{"dataset", meta.dataset}, {"config", meta.config.to_json()}}));
}

std::unique_ptr<Gateway> make_gateway(const BackendOptions& options, const fs::path& data_dir) {
    auto templates = TemplateLibrary::load(data_dir / "templates");
    GatewayOptions gopts;
    if (!options.audit_log.empty()) gopts.audit_log = options.audit_log;
    std::shared_ptr<LlmBackend> backend;
    if (options.kind == "oracle") {
        if (options.oracle_script.empty()) throw ConfigError("--backend oracle needs --oracle-script");
        backend = OracleBackend::from_file(options.oracle_script);
    } else if (options.kind == "live") {
        backend = std::make_shared<LiveBackend>(options.live);
        gopts.reask_on_parse_failure = true;
    } else {
        throw ConfigError("unknown backend '" + options.kind + "' (live or oracle)");
    }
    return std::make_unique<Gateway>(std::move(backend), std::move(templates), gopts);
}

std::string line_diff(const std::string& before, const std::string& after) {
    auto lines = [](const std::string& text) {
        std::vector<std::string> out;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) out.push_back(line);
        return out;
    };
    const auto a = lines(before);
    const auto b = lines(after);
    const auto n = a.size();
    const auto m = b.size();
    std::vector<std::vector<std::size_t>> lcs(n + 1, std::vector<std::size_t>(m + 1, 0));
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t j = m; j-- > 0;)
            lcs[i][j] = a[i] == b[j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);
    }
    std::string out;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < n || j < m) {
        if (i < n && j < m && a[i] == b[j]) {
            out += "  " + a[i++] + "\n";
            ++j;
        } else if (i < n && (j == m || lcs[i + 1][j] >= lcs[i][j + 1])) {
            out += "- " + a[i++] + "\n";
        } else {
            out += "+ " + b[j++] + "\n";
        }
    }
    return out;
}

std::string render_trajectory(const SkillStore& store, const std::string& user_id) {
    const auto current = store.load(user_id);
    auto revs = store.revisions(user_id);
    std::vector<PolicySkill> skills;
    for (int r : revs) skills.push_back(store.load_revision(user_id, r));
    if (skills.empty() || skills.back().revision != current.revision) skills.push_back(current);

    std::ostringstream out;
    out << "# Skill trajectory: " << user_id << "\n\n";
    out << "- current revision: " << current.revision << "\n";
    out << "- origin: " << to_string(current.origin) << "\n";
    out << "- frozen: " << (store.is_frozen(user_id) ? "yes" : "no") << "\n\n";

    std::vector<std::string> attributes;
    std::set<std::string> seen;
    for (const auto& s : skills) {
        for (auto sec : kAllSections) {
            for (const auto& e : s.section(sec)) {
                if (seen.insert(e.attribute).second) attributes.push_back(e.attribute);
            }
        }
    }
    out << "| attribute |";
    for (const auto& s : skills) out << " r" << s.revision << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < skills.size(); ++i) out << "---|";
    out << "\n";
    for (const auto& attr : attributes) {
        out << "| " << attr << " |";
        for (const auto& s : skills) {
            const auto* e = s.find(attr);
            out << " " << (e ? std::string(to_string(e->tier)) : std::string("-")) << " |";
        }
        out << "\n";
    }
    for (std::size_t i = 1; i < skills.size(); ++i) {
        out << "\n## r" << skills[i - 1].revision << " to r" << skills[i].revision << "\n\n```diff\n"
            << line_diff(render_markdown(skills[i - 1]), render_markdown(skills[i])) << "```\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Command plumbing
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::pair<std::string, std::string>> kConfigKeys = {
    {"n_candidates", "candidate set size"},
    {"ks", "cutoffs, comma separated"},
    {"tau", "warmup rounds (0-3)"},
    {"inject", "slim injection budget in tokens"},
    {"seed", "sampling seed"},
    {"ablation", "full, or '+'-joined no_skill/no_statinit/pointwise/no_cot/full_replacement"},
    {"no_skill", "ablation switch (true/false)"},
    {"no_statinit", "ablation switch (true/false)"},
    {"pointwise", "ablation switch (true/false)"},
    {"no_cot", "ablation switch (true/false)"},
    {"full_replacement_cot", "ablation switch (true/false)"},
    {"user_sample", "evaluate a seeded sample of N users (0 = all)"},
    {"domain", "parser profile: structured, books or movietv"},
    {"slim_mode", "model or rules"},
    {"neighbors", "neighbors kept by pruning"},
    {"n_facets", "facets kept after filtering"},
    {"quality_threshold", "minimum facet confidence"},
    {"recency_weight", "neighbor recency weight"},
    {"frequency_weight", "neighbor frequency weight"},
    {"half_life", "recency decay scale (timestamp units)"},
    {"history_fraction", "share of each user's interactions used as history"},
    {"history_depth", "skill revisions retained per user"},
    {"max_failure_share", "failed-user share tolerated before exit code 5"},
    {"jobs", "worker threads (0 = OpenMP default, 1 = serial)"},
    {"data_dir", "templates/lexicons/global skills directory"},
};

struct ConfigFlags {
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
    std::string config_file;

    void attach(CLI::App* app) {
        for (const auto& [key, help] : kConfigKeys) {
            std::string dashed = key;
            std::replace(dashed.begin(), dashed.end(), '_', '-');
            std::string names = "--" + dashed;
            if (dashed != key) names += ",--" + key;
            options[key] = app->add_option(names, values[key], help);
        }
        app->add_option("--config", config_file, "key = value config file (flags win)");
    }

    // base < config file < flags
    EvalConfig resolve(EvalConfig base) const {
        if (!config_file.empty()) {
            for (const auto& [k, v] : read_config_file(config_file)) apply_config_value(base, k, v);
        }
        for (const auto& [key, _] : kConfigKeys) {
            if (options.at(key)->count() > 0) apply_config_value(base, key, values.at(key));
        }
        validate(base);
        return base;
    }
};

struct BackendFlags {
    BackendOptions options;

    void attach(CLI::App* app) {
        app->add_option("--backend", options.kind, "live or oracle")->default_val("oracle");
        app->add_option("--oracle-script", options.oracle_script, "JSONL script replayed by the oracle backend");
        app->add_option("--base-url", options.live.base_url, "OpenAI-compatible endpoint");
        app->add_option("--model", options.live.model, "model name for the live backend");
        app->add_option("--api-key-env", options.live.api_key_env, "environment variable holding the API key");
        app->add_option("--max-in-flight", options.live.max_in_flight, "concurrent live requests");
        app->add_option("--audit-log", options.audit_log, "append every model call to this JSONL file");
    }
};

struct LoadedStore {
    StoreMeta meta;
    Dataset data;
    RunState state;
};

LoadedStore open_store(const fs::path& store_dir, const EvalConfig& config) {
    LoadedStore s;
    s.meta = read_store_meta(store_dir);
    s.data = ingest(s.meta.dataset);
    s.state = build_state(s.data, config.history_fraction);
    load_state(s.state, store_dir);
    return s;
}

void check_failures(const std::vector<UserResult>& results, const EvalConfig& config) {
    std::size_t failed = 0;
    const UserResult* first = nullptr;
    for (const auto& r : results) {
        if (r.ok) continue;
        ++failed;
        if (!first) first = &r;
    }
    if (first && static_cast<double>(failed) > config.max_failure_share * static_cast<double>(results.size()))
        throw PartialFailure(std::to_string(failed) + " of " + std::to_string(results.size()) +
                             " users failed; first: " + first->user_id + ": " + first->error);
}

std::vector<UserResult> run_users(Pipeline& pipeline, const std::vector<std::string>& users, bool warmup, bool test,
                                  int jobs) {
    return jobs == 1 ? run_users_serial(pipeline, users, warmup, test)
                     : run_users_parallel(pipeline, users, warmup, test, jobs);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Per-user policy-skill recommender: initialization, warmup, evaluation and ablations"};
    app.require_subcommand(1);

    // init
    auto* init = app.add_subcommand("init", "Build revision-0 skills for every user of a dataset");
    std::string init_dataset;
    std::string init_store;
    bool init_force = false;
    ConfigFlags init_cfg;
    BackendFlags init_backend;
    init->add_option("--dataset", init_dataset, "dataset directory")->required();
    init->add_option("--store", init_store, "skill store directory")->required();
    init->add_flag("--force", init_force, "replace an existing store");
    init_cfg.attach(init);
    init_backend.attach(init);

    // warmup
    auto* warm = app.add_subcommand("warmup", "Run tau evolution rounds per user, then freeze");
    std::string warm_store;
    std::string warm_trace;
    ConfigFlags warm_cfg;
    BackendFlags warm_backend;
    warm->add_option("--store", warm_store, "skill store directory")->required();
    warm->add_option("--trace", warm_trace, "write per-prediction traces to this JSONL file");
    warm_cfg.attach(warm);
    warm_backend.attach(warm);

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Warm up remaining users, freeze, and score the test split");
    std::string eval_store;
    std::string eval_out;
    std::string eval_trace;
    ConfigFlags eval_cfg;
    BackendFlags eval_backend;
    eval->add_option("--store", eval_store, "skill store directory")->required();
    eval->add_option("--out", eval_out, "report directory (default <store>/eval)");
    eval->add_option("--trace", eval_trace, "write per-prediction traces to this JSONL file");
    eval_cfg.attach(eval);
    eval_backend.attach(eval);

    // ablate
    auto* abl = app.add_subcommand("ablate", "Run an ablation matrix over shared candidate sets");
    std::string abl_store;
    std::string abl_dataset;
    std::string abl_out;
    std::string abl_matrix = "rq3";
    bool abl_trace = false;
    ConfigFlags abl_cfg;
    BackendFlags abl_backend;
    abl->add_option("--store", abl_store, "take dataset and configuration from this store");
    abl->add_option("--dataset", abl_dataset, "dataset directory (when no store is given)");
    abl->add_option("--out", abl_out, "output directory")->required();
    abl->add_option("--matrix", abl_matrix, "rq3, rq4, tau or inject")->default_val("rq3");
    abl->add_flag("--trace", abl_trace, "write a trace per condition");
    abl_cfg.attach(abl);
    abl_backend.attach(abl);

    // inspect
    auto* insp = app.add_subcommand("inspect", "Show a user's skill trajectory");
    std::string insp_store;
    std::string insp_user;
    insp->add_option("--store", insp_store, "skill store directory")->required();
    insp->add_option("user", insp_user, "user id")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (init->parsed()) {
            const fs::path store_dir = init_store;
            if (fs::exists(store_dir / "meta.json") || (fs::exists(store_dir) && !fs::is_empty(store_dir))) {
                if (!init_force)
                    throw ConfigError("store " + store_dir.string() + " already exists; pass --force to replace it");
                fs::remove_all(store_dir);
            }
            const auto config = init_cfg.resolve(EvalConfig{});
            const auto data = ingest(init_dataset);
            const auto state = build_state(data, config.history_fraction);
            std::unique_ptr<Gateway> gateway;
            if (init_backend.options.kind == "live" || !init_backend.options.oracle_script.empty())
                gateway = make_gateway(init_backend.options, config.resolved_data_dir());
            SkillStore store(store_dir, config.history_depth);
            const auto summary = initialize_store(data, state, config, store, gateway.get());
            save_state(state, store_dir);
            write_store_meta(store_dir, StoreMeta{fs::absolute(init_dataset).lexically_normal().string(), config});
            for (const auto& w : data.warnings) err << "warning: " << w << "\n";
            out << "initialized " << summary.users << " skills (" << summary.cold_start << " cold-start) in "
                << store_dir.string() << "\n";
            out << "tier histogram:";
            for (const char* t : {"high", "medium", "low"}) {
                const auto it = summary.tier_histogram.find(t);
                out << " " << t << "=" << (it == summary.tier_histogram.end() ? 0 : it->second);
            }
            out << "\n";
            return kExitOk;
        }

        if (warm->parsed()) {
            const fs::path store_dir = warm_store;
            const auto config = warm_cfg.resolve(read_store_meta(store_dir).config);
            auto loaded = open_store(store_dir, config);
            auto gateway = make_gateway(warm_backend.options, config.resolved_data_dir());
            SkillStore store(store_dir, config.history_depth);
            std::unique_ptr<TraceWriter> trace;
            if (!warm_trace.empty()) trace = std::make_unique<TraceWriter>(warm_trace);
            Pipeline pipeline(loaded.data, loaded.state, store, *gateway, config, trace.get());
            const auto users = select_users(loaded.data, config);
            const auto results = run_users(pipeline, users, true, false, config.jobs);
            save_state(loaded.state, store_dir);
            std::size_t rounds = 0;
            for (const auto& r : results) rounds += static_cast<std::size_t>(r.warmup_rounds);
            out << "warmed up " << users.size() << " users (" << rounds << " rounds, tau=" << config.tau
                << "); skills frozen\n";
            for (const auto& r : results) {
                if (!r.ok) err << "user " << r.user_id << ": " << r.error << "\n";
            }
            check_failures(results, config);
            return kExitOk;
        }

        if (eval->parsed()) {
            const fs::path store_dir = eval_store;
            const auto config = eval_cfg.resolve(read_store_meta(store_dir).config);
            auto loaded = open_store(store_dir, config);
            auto gateway = make_gateway(eval_backend.options, config.resolved_data_dir());
            SkillStore store(store_dir, config.history_depth);
            std::unique_ptr<TraceWriter> trace;
            if (!eval_trace.empty()) trace = std::make_unique<TraceWriter>(eval_trace);
            Pipeline pipeline(loaded.data, loaded.state, store, *gateway, config, trace.get());
            const auto users = select_users(loaded.data, config);
            const auto results = run_users(pipeline, users, true, true, config.jobs);
            save_state(loaded.state, store_dir);
            auto report = build_report(config, results, ablation_name(config.ablation));
            report["store_hash"] = store.content_hash();
            const fs::path out_dir = eval_out.empty() ? store_dir / "eval" : fs::path(eval_out);
            write_report(report, out_dir);
            out << render_report_markdown(report);
            for (const auto& r : results) {
                if (!r.ok) err << "user " << r.user_id << ": " << r.error << "\n";
            }
            check_failures(results, config);
            return kExitOk;
        }

        if (abl->parsed()) {
            EvalConfig base;
            std::string dataset = abl_dataset;
            if (!abl_store.empty()) {
                const auto meta = read_store_meta(abl_store);
                base = meta.config;
                if (dataset.empty()) dataset = meta.dataset;
            }
            if (dataset.empty()) throw ConfigError("ablate needs --store or --dataset");
            const auto config = abl_cfg.resolve(base);
            const auto data = ingest(dataset);
            auto gateway = make_gateway(abl_backend.options, config.resolved_data_dir());
            run_ablation(data, config, abl_matrix, *gateway, abl_out, abl_trace);
            out << read_file(fs::path(abl_out) / "ablation.md");
            return kExitOk;
        }

        if (insp->parsed()) {
            const auto meta = read_store_meta(insp_store);
            SkillStore store(insp_store, meta.config.history_depth);
            out << render_trajectory(store, insp_user);
            return kExitOk;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return kExitConfig;
}

}  // namespace skillrec
