#pragma once

// Dataset ingestion, per-user splits, candidate sampling, the
// warmup -> freeze -> test lifecycle, metrics, reports and ablations.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "skillrec/datamodel.hpp"
#include "skillrec/llm_gateway.hpp"
#include "skillrec/memory_backbone.hpp"
#include "skillrec/ranker.hpp"
#include "skillrec/skill_engine.hpp"
#include "skillrec/statinit.hpp"

namespace skillrec {

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct Instruction {
    std::string user_id;
    std::int64_t timestamp = 0;
    std::string text;
};

inline constexpr std::string_view kDefaultInstruction =
    "Recommend the item this user is most likely to choose next.";

struct Dataset {
    std::map<std::string, Item> catalog;
    std::vector<std::string> item_ids;  // sorted
    // Per user, timestamp-ordered (stable for equal timestamps).
    std::map<std::string, std::vector<InteractionRecord>> interactions;
    std::set<std::string> labeled_users;  // users whose records carry split labels
    std::map<std::string, std::vector<Instruction>> instructions;  // per user, by timestamp
    std::size_t dropped_dangling = 0;
    std::vector<std::string> warnings;

    std::vector<std::string> users() const;
    std::size_t interaction_count() const;
    // Exact timestamp match, else the latest earlier instruction, else the
    // user's first instruction, else kDefaultInstruction.
    std::string instruction_for(const std::string& user_id, std::int64_t ts) const;
};

struct IngestOptions {
    double max_dangling_share = 0.01;
};

// Reads items.jsonl, interactions.jsonl and instructions.jsonl (and checks
// manifest.json counts when present). Schema errors carry file:line.
// Interactions naming unknown items are dropped with a warning; more than
// max_dangling_share of them is a DataError.
Dataset ingest(const std::filesystem::path& dir, const IngestOptions& options = {});

// ---------------------------------------------------------------------------
// Splits and sampling
// ---------------------------------------------------------------------------

inline constexpr int kMaxTau = 3;

struct UserSplit {
    std::vector<InteractionRecord> history;
    std::vector<InteractionRecord> warmup;  // up to kMaxTau events; tau uses a prefix
    std::vector<InteractionRecord> test;
};

// Labeled records keep their labels. Otherwise: history = floor(f * n),
// warmup = min(kMaxTau, remaining - 1), test = the rest, so the test events
// do not depend on tau.
UserSplit split_user(const std::vector<InteractionRecord>& records, bool labeled, double history_fraction = 0.7);

std::map<std::string, UserSplit> split_all(const Dataset& data, double history_fraction = 0.7);

// Positive plus n-1 negatives drawn uniformly without replacement from
// `item_ids` minus `excluded` minus the positive; the generator is seeded
// from (seed, user, round). Positive first. Throws DataError when there are
// too few eligible negatives.
std::vector<std::string> sample_candidates(const std::string& user_id, const std::string& positive,
                                           const std::vector<std::string>& item_ids,
                                           const std::set<std::string>& excluded, std::size_t n, std::uint64_t seed,
                                           std::uint64_t round);

// Seeded shuffle used as the order candidates are shown in.
std::vector<std::string> presentation_order(std::vector<std::string> ids, const std::string& user_id,
                                            std::uint64_t seed, std::uint64_t round);

// Round index used for test event j; independent of tau.
constexpr std::uint64_t test_round(std::size_t j) { return 1000 + j; }

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double hit_from_rank(std::size_t rank, int k);   // rank is 1-based; 0 = miss
double ndcg_from_rank(std::size_t rank, int k);
// Throw DataError if `positive` is absent from `ranking`.
double hit_at_k(const RankedList& ranking, const std::string& positive, int k);
double ndcg_at_k(const RankedList& ranking, const std::string& positive, int k);

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct Ablation {
    bool no_skill = false;
    bool no_statinit = false;
    bool pointwise = false;
    bool no_cot = false;
    bool full_replacement_cot = false;

    bool evolves() const { return !no_skill && !no_cot; }
    bool operator==(const Ablation&) const = default;
};

// full | no_skill | no_statinit | pointwise | no_cot | full_replacement
Ablation ablation_from_name(std::string_view name);
std::string ablation_name(const Ablation& a);

struct EvalConfig {
    std::size_t n_candidates = 10;
    std::vector<int> ks{1, 3, 5};
    int tau = 2;
    std::size_t inject = kDefaultInjectBudget;
    std::uint64_t seed = 42;
    Ablation ablation;
    std::size_t user_sample = 0;  // 0 = every user
    std::string domain = "structured";
    std::string slim_mode = "model";  // model | rules
    std::size_t neighbors = 10;
    std::size_t n_facets = 5;
    double quality_threshold = 0.3;
    double recency_weight = 1.0;
    double frequency_weight = 1.0;
    double half_life = 2592000.0;
    double history_fraction = 0.7;
    int history_depth = 5;
    double max_failure_share = 0.1;
    int jobs = 0;  // 0 = OpenMP default; 1 = serial reference path
    std::string data_dir;  // empty = default data directory

    json to_json() const;
    std::filesystem::path resolved_data_dir() const;
};

// Sets one field from its textual form. Keys are the JSON field names
// (e.g. "tau", "ablation", "ks" as "1,3,5"). Throws ConfigError.
void apply_config_value(EvalConfig& config, const std::string& key, const std::string& value);
// `key = value` lines; '#' starts a comment.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);
void validate(const EvalConfig& config);

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct PredictionRecord {
    std::string user_id;
    std::size_t event = 0;
    std::string positive;
    std::vector<std::string> candidates;  // presentation order
    std::vector<std::string> ranking;
    std::size_t rank = 0;  // 0 = failed prediction (scored as a miss)
    bool failed = false;
    bool repaired = false;
    std::size_t tie_count = 0;
};

struct UserResult {
    std::string user_id;
    bool ok = true;
    std::string error;
    int warmup_rounds = 0;
    std::vector<PredictionRecord> predictions;
    std::map<std::string, CallStats> calls;  // by stage: synth, extract, rank, evolve
    std::vector<std::string> protocol_notes;
    std::size_t freeze_violations = 0;
    std::string slim;  // rendered slim used during test
};

// Shared state for one run. Each user touches only its own memory entry,
// its own graph edges and its own store directory, so users can run
// concurrently.
struct RunState {
    std::map<std::string, UserSplit> splits;
    SemanticGraph graph;
    std::map<std::string, UserMemory> memories;
};

// Graph edges and memory bullets from every user's history split; every
// user gets a graph node.
RunState build_state(const Dataset& data, double history_fraction);
void save_state(const RunState& state, const std::filesystem::path& dir);
void load_state(RunState& state, const std::filesystem::path& dir);

struct InitSummary {
    std::size_t users = 0;
    std::size_t cold_start = 0;
    std::map<std::string, std::size_t> tier_histogram;  // "low"/"medium"/"high" entry counts
};

// Writes revision-0 skills: StatInit for users with history, the global
// template for the rest (or for everyone under no_statinit).
InitSummary initialize_store(const Dataset& data, const RunState& state, const EvalConfig& config,
                             SkillStore& store, Gateway* gateway);

class Pipeline {
public:
    Pipeline(const Dataset& data, RunState& state, SkillStore& store, Gateway& gateway, EvalConfig config,
             TraceWriter* trace = nullptr);

    // Warms up every non-frozen user (tau rounds, then freeze) and/or runs
    // the test events. Never throws for a single user's failure.
    UserResult run_user(const std::string& user_id, bool warmup, bool test);

    const EvalConfig& config() const { return config_; }

private:
    void warmup_user(const std::string& user_id, UserResult& result);
    void test_user(const std::string& user_id, UserResult& result);
    RankOutcome rank(const RankRequest& request, CallStats* stats);
    std::vector<Item> items_for(const std::vector<std::string>& ids) const;
    std::set<std::string> interacted(const std::string& user_id) const;

    const Dataset& data_;
    RunState& state_;
    SkillStore& store_;
    Gateway& gateway_;
    EvalConfig config_;
    TraceWriter* trace_;
};

// Serial reference and OpenMP user-parallel kernel; identical results.
std::vector<UserResult> run_users_serial(Pipeline& pipeline, const std::vector<std::string>& users, bool warmup,
                                         bool test);
std::vector<UserResult> run_users_parallel(Pipeline& pipeline, const std::vector<std::string>& users, bool warmup,
                                           bool test, int jobs);

std::vector<std::string> select_users(const Dataset& data, const EvalConfig& config);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

json build_report(const EvalConfig& config, const std::vector<UserResult>& results, const std::string& condition);
std::string render_report_markdown(const json& report);
void write_report(const json& report, const std::filesystem::path& dir);
// Digest of every test prediction's (user, event, sorted candidates).
std::string candidate_digest(const std::vector<UserResult>& results);

struct ExperimentResult {
    json report;
    std::vector<UserResult> users;
    std::string store_hash;
};

// Fresh store under `work_dir/store`, initialization, warmup, freeze, test;
// report.json and report.md written to `work_dir`. Throws PartialFailure
// (after writing the report) when failed users exceed the configured share.
ExperimentResult run_experiment(const Dataset& data, const EvalConfig& config, Gateway& gateway,
                                const std::filesystem::path& work_dir, TraceWriter* trace = nullptr);

struct AblationCondition {
    std::string name;
    EvalConfig config;
};

// rq3: full + four leave-one-outs; rq4: incremental vs full replacement;
// tau: tau 0..3; inject: the injection-budget sweep.
std::vector<AblationCondition> ablation_matrix(const std::string& matrix, const EvalConfig& base);

// Runs each condition into `out_dir/<name>` and writes ablation.json and
// ablation.md summaries.
json run_ablation(const Dataset& data, const EvalConfig& base, const std::string& matrix, Gateway& gateway,
                  const std::filesystem::path& out_dir, bool trace = false);

}  // namespace skillrec
