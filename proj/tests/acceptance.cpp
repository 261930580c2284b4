// Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and exits
// nonzero when any criterion fails. Runs offline against the fixtures; the
// live smoke check runs only when SKILLREC_LIVE_BASE_URL is set.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "repair_corpus.hpp"
#include "skillrec/errors.hpp"
#include "skillrec/eval_harness.hpp"

using namespace skillrec;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures(SKILLREC_FIXTURE_DIR);

enum class Status { pass, fail, skip };

struct Outcome {
    Status status = Status::pass;
    std::string detail;
};

// Collects failed expectations; the first few are kept for the report line.
class Checker {
public:
    void expect(bool ok, const std::string& what) {
        ++checks_;
        if (ok) return;
        ++failures_;
        if (notes_.size() < 3) notes_.push_back(what);
    }
    Outcome outcome(const std::string& summary) const {
        if (failures_ == 0) return {Status::pass, summary};
        return {Status::fail, std::to_string(failures_) + "/" + std::to_string(checks_) + " checks failed: " +
                                  join(notes_, "; ")};
    }

private:
    std::size_t checks_ = 0;
    std::size_t failures_ = 0;
    std::vector<std::string> notes_;
};

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "skillrec_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

TemplateLibrary templates() { return TemplateLibrary::load(default_data_dir() / "templates"); }

Gateway oracle_gateway(const fs::path& script) { return Gateway(OracleBackend::from_file(script), templates()); }

Gateway synth50_gateway() { return oracle_gateway(kFixtures / "synth50" / "oracle.jsonl"); }

std::set<std::string> eligible_attributes(const PolicySkill& skill) {
    std::set<std::string> out;
    for (const auto* e : slim_candidates(skill)) out.insert(e->attribute);
    return out;
}

std::string tier_name(const PreferenceEntry* e) { return e ? std::string(to_string(e->tier)) : "absent"; }

// ---------------------------------------------------------------------------
// 1. Merge protocol properties
// ---------------------------------------------------------------------------

Outcome merge_properties() {
    constexpr int kTrials = 10000;
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(20260101);
    Checker c;
    std::size_t protected_weakens = 0;
    std::size_t protected_demotions = 0;

    for (int t = 0; t < kTrials; ++t) {
        PolicySkill skill;
        skill.user_id = "u";
        std::vector<std::string> pool;
        for (int i = 0; i < 30; ++i) pool.push_back("attr " + std::to_string(i));
        std::shuffle(pool.begin(), pool.end(), rng);
        const std::size_t existing = rng() % 13;
        int max_round = 0;
        for (std::size_t i = 0; i < existing; ++i) {
            PreferenceEntry e;
            e.attribute = pool[i];
            e.tier = static_cast<Tier>(rng() % 3);
            e.source = rng() % 2 ? Source::confirmed : Source::emerging;
            e.is_protected = rng() % 3 == 0;
            e.contradiction_count = static_cast<int>(rng() % 2);
            e.last_updated_round = static_cast<int>(rng() % 4);
            max_round = std::max(max_round, e.last_updated_round);
            skill.section(kAllSections[rng() % 3]).push_back(e);
        }
        skill.revision = static_cast<int>(rng() % 5);

        // Each chosen label lands in exactly one list. Weakens and reinforces
        // target existing entries; discoveries may repeat an existing label.
        SkillDiff diff;
        std::vector<std::string> labels = pool;
        std::shuffle(labels.begin(), labels.end(), rng);
        labels.resize(rng() % 8);
        for (const auto& label : labels) {
            static const char* kTags[] = {"", "pattern", "criterion"};
            const bool exists = skill.find(label) != nullptr;
            const auto pick = rng() % 3;
            if (exists && pick == 0) {
                diff.reinforced.push_back({label, "evidence", ""});
            } else if (exists && pick == 1) {
                diff.weakened.push_back({label, "reason", ""});
            } else {
                diff.new_preferences.push_back({label, "reason", kTags[rng() % 3]});
            }
        }

        const int round = max_round + 1;
        const auto after = merge(skill, diff, round);

        auto in = [](const std::vector<DiffItem>& items, const std::string& a) {
            return std::any_of(items.begin(), items.end(), [&](const DiffItem& d) { return d.attribute == a; });
        };
        const auto tag = " (trial " + std::to_string(t) + ")";
        c.expect(after.revision == skill.revision + 1, "revision not advanced" + tag);

        for (const auto& a : skill.attributes()) {
            const auto* before = skill.find(a);
            const auto* now = after.find(a);
            c.expect(now != nullptr, "attribute '" + a + "' removed" + tag);
            if (!now) continue;
            const int step = std::abs(tier_rank(now->tier) - tier_rank(before->tier));
            c.expect(step <= 1, "'" + a + "' moved more than one tier" + tag);
            c.expect(now->is_protected == before->is_protected, "protection flag changed" + tag);

            Tier want_tier = before->tier;
            int want_count = before->contradiction_count;
            if (in(diff.reinforced, a) || in(diff.new_preferences, a)) {
                want_tier = tier_promote(before->tier);
                want_count = 0;
            } else if (in(diff.weakened, a)) {
                if (before->is_protected && before->contradiction_count + 1 < kDefaultProtectionThreshold) {
                    want_count = before->contradiction_count + 1;
                } else {
                    want_tier = tier_demote(before->tier);
                    want_count = 0;
                }
                if (before->is_protected) {
                    ++protected_weakens;
                    const bool demoted = now->tier != before->tier || before->tier == Tier::low;
                    const bool second = before->contradiction_count + 1 == kDefaultProtectionThreshold;
                    protected_demotions += demoted && second;
                    c.expect(!(now->tier != before->tier) || second,
                             "protected '" + a + "' demoted before its second contradiction" + tag);
                }
            }
            c.expect(now->tier == want_tier, "'" + a + "' tier " + std::string(to_string(now->tier)) + ", expected " +
                                                 std::string(to_string(want_tier)) + tag);
            c.expect(now->contradiction_count == want_count, "'" + a + "' contradiction count" + tag);
        }

        for (const auto& d : diff.new_preferences) {
            if (skill.find(d.attribute)) continue;
            const auto* e = after.find(d.attribute);
            c.expect(e != nullptr, "discovery '" + d.attribute + "' missing" + tag);
            if (!e) continue;
            c.expect(e->tier == Tier::low && e->source == Source::emerging && !e->is_protected,
                     "discovery '" + d.attribute + "' not low/emerging" + tag);
        }
        c.expect(after.entry_count() == skill.entry_count() + static_cast<std::size_t>(std::count_if(
                                                                 diff.new_preferences.begin(),
                                                                 diff.new_preferences.end(),
                                                                 [&](const DiffItem& d) {
                                                                     return skill.find(d.attribute) == nullptr;
                                                                 })),
                 "entry count" + tag);
    }

    // A protected high entry survives its first contradiction and drops one
    // tier on the second.
    PolicySkill s;
    s.user_id = "u";
    s.core_preferences.push_back(PreferenceEntry{"restaurants", Tier::high, Source::confirmed, 0, true, 0});
    SkillDiff weaken;
    weaken.weakened.push_back({"restaurants", "reason", ""});
    const auto once = merge(s, weaken, 1);
    const auto twice = merge(once, weaken, 2);
    c.expect(once.find("restaurants")->tier == Tier::high, "first contradiction demoted a protected entry");
    c.expect(twice.find("restaurants")->tier == Tier::medium, "second contradiction did not demote");

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    c.expect(secs < 10.0, "runtime " + std::to_string(secs) + " s");
    std::ostringstream summary;
    summary << kTrials << " trials in " << std::fixed;
    summary.precision(2);
    summary << secs << " s; " << protected_weakens << " protected weakens, " << protected_demotions
            << " second-contradiction demotions";
    return c.outcome(summary.str());
}

// ---------------------------------------------------------------------------
// 2. Discover then reinforce across two warmup rounds
// ---------------------------------------------------------------------------

std::vector<json> discover_reinforce_script() {
    std::vector<json> records;
    for (const auto& r : read_jsonl(kFixtures / "cases" / "yelp" / "oracle.jsonl"))
        if (r.at("template") != "cot_incremental") records.push_back(r);
    const json discover{{"analysis", "The chosen venue stays open past midnight."},
                        {"incremental_update",
                         {{"new_preferences", {{{"attribute", "late-night dining"}, {"reason", "open past midnight"}}}},
                          {"reinforced", json::array()},
                          {"weakened", json::array()}}}};
    const json reinforce{{"analysis", "Another late-night pick."},
                         {"incremental_update",
                          {{"new_preferences", json::array()},
                           {"reinforced", {{{"attribute", "late-night dining"}, {"evidence", "again after midnight"}}}},
                           {"weakened", json::array()}}}};
    records.push_back({{"template", "cot_incremental"}, {"match", {{"user_id", "user-0"}}}, {"seq", 1},
                       {"response", discover.dump()}});
    records.push_back({{"template", "cot_incremental"}, {"match", {{"user_id", "user-0"}}}, {"seq", 2},
                       {"response", reinforce.dump()}});
    return records;
}

Outcome discover_reinforce() {
    const auto data = ingest(kFixtures / "cases" / "yelp");
    const auto script = discover_reinforce_script();
    const std::string label = "late-night dining";
    Checker c;
    std::map<int, std::string> seen;
    for (int tau : {0, 1, 2}) {
        Gateway gw(OracleBackend::from_records(script), templates());
        EvalConfig cfg;
        cfg.tau = tau;
        const auto dir = scratch("discover_tau" + std::to_string(tau));
        const auto run = run_experiment(data, cfg, gw, dir);
        const SkillStore store(dir / "store", cfg.history_depth);
        const auto skill = store.load("user-0");
        const auto* e = skill.find(label);
        const bool eligible = eligible_attributes(skill).count(label) > 0;
        const auto slim = extract_slim_deterministic(skill, cfg.inject);
        const bool in_slim = std::find(slim.likes.begin(), slim.likes.end(), label) != slim.likes.end();
        seen[tau] = tier_name(e) + (eligible ? "/eligible" : "/not eligible");
        c.expect(run.users.at(0).warmup_rounds == tau, "tau " + std::to_string(tau) + " ran " +
                                                           std::to_string(run.users.at(0).warmup_rounds) + " rounds");
        if (tau == 0) {
            c.expect(e == nullptr, "tau 0 already has the discovery");
        } else if (tau == 1) {
            c.expect(e && e->tier == Tier::low && e->source == Source::emerging, "tau 1 discovery not low/emerging");
            c.expect(!eligible && !in_slim, "tau 1 discovery is slim-eligible");
        } else {
            c.expect(e && e->tier == Tier::medium, "tau 2 discovery not promoted to medium");
            c.expect(eligible, "tau 2 discovery not slim-eligible");
            const auto order = slim_candidates(skill);
            const auto pos = std::find_if(order.begin(), order.end(),
                                          [&](const PreferenceEntry* x) { return x->attribute == label; });
            seen[tau] += " (candidate " + std::to_string(pos - order.begin() + 1) + " of " +
                         std::to_string(order.size()) + ")";
            const auto r1 = store.load_revision("user-0", 1);
            c.expect(r1.find(label) && r1.find(label)->tier == Tier::low && !eligible_attributes(r1).count(label),
                     "round-1 revision already eligible");
        }
    }
    return c.outcome("tau0 " + seen[0] + ", tau1 " + seen[1] + ", tau2 " + seen[2]);
}

// ---------------------------------------------------------------------------
// 3. Case-study trajectories, StatInit skills and slims
// ---------------------------------------------------------------------------

using Expected = std::vector<std::pair<std::string, Tier>>;

void expect_core(Checker& c, const std::string& name, const PolicySkill& s, const Expected& want) {
    c.expect(s.core_preferences.size() == want.size(), name + " core preference count");
    for (std::size_t i = 0; i < want.size() && i < s.core_preferences.size(); ++i) {
        const auto& e = s.core_preferences[i];
        c.expect(e.attribute == want[i].first && e.tier == want[i].second,
                 name + " entry " + std::to_string(i) + " is " + e.attribute + "/" + std::string(to_string(e.tier)));
    }
}

Outcome case_trajectories() {
    Checker c;
    struct Case {
        std::string name;
        Domain domain;
        Expected statinit;
        std::string slim;
    };
    const std::vector<Case> cases{
        {"yelp",
         Domain::structured,
         {{"restaurants", Tier::high},
          {"premium tobacco products", Tier::low},
          {"$$ price range", Tier::high},
          {"las vegas area", Tier::high},
          {"casual ambience", Tier::high},
          {"high-rated venues (4+ stars)", Tier::low}},
         "likes: Restaurants, Food, $$ price range, casual ambience"},
        {"books",
         Domain::books,
         {{"mystery", Tier::high}, {"romance", Tier::low}, {"fantasy", Tier::low}, {"uplifting reads", Tier::low}},
         "likes: mystery, romance, fantasy | style: complex world explorer"},
        {"movietv",
         Domain::movietv,
         {{"action", Tier::low},
          {"animation", Tier::low},
          {"sci-fi", Tier::low},
          {"funny tone", Tier::medium},
          {"uplifting tone", Tier::medium}},
         "likes: action, animation, sci-fi, funny tone | style: genre variety seeker"},
    };

    std::string yelp_path;
    for (const auto& k : cases) {
        const auto dir = kFixtures / "cases" / k.name;
        const auto data = ingest(dir);
        EvalConfig cfg;
        cfg.domain = std::string(to_string(k.domain));
        auto gw = oracle_gateway(dir / "oracle.jsonl");
        const auto work = scratch("case_" + k.name);
        const auto run = run_experiment(data, cfg, gw, work);
        const SkillStore store(work / "store", cfg.history_depth);

        const auto r0 = store.load_revision("user-0", 0);
        expect_core(c, k.name, r0, k.statinit);
        for (const auto& e : r0.core_preferences)
            c.expect(e.is_protected == (e.tier == Tier::high), k.name + " protection of " + e.attribute);
        c.expect(run.users.at(0).slim == k.slim, k.name + " slim '" + run.users.at(0).slim + "'");

        if (k.name == "books")
            c.expect(r0.strategy.find("Must Include: Books in core genres: mystery, romance, fantasy") !=
                         std::string::npos,
                     "books strategy");
        if (k.name == "yelp") {
            const std::string rated = "high-rated venues (4+ stars)";
            std::vector<std::string> path;
            for (int r = 0; r <= 2; ++r) path.push_back(tier_name(store.load_revision("user-0", r).find(rated)));
            yelp_path = join(path, "->");
            c.expect(path == std::vector<std::string>{"low", "medium", "high"}, "high-rated path " + yelp_path);
            const auto r2 = store.load_revision("user-0", 2);
            for (const char* d : {"indian cuisine", "tobacco shops"}) {
                const auto* e = r2.find(d);
                c.expect(e && e->tier == Tier::low && e->source == Source::emerging,
                         std::string(d) + " not a low/emerging discovery");
                c.expect(!store.load_revision("user-0", 1).find(d), std::string(d) + " present before round 2");
            }
            for (const auto& [a, t] : k.statinit)
                c.expect(r2.find(a) != nullptr, "yelp lost " + a);
        }
    }
    return c.outcome("3 StatInit skills tier-exact; yelp high-rated " + yelp_path +
                     "; indian cuisine and tobacco shops low; 3 slims match");
}

// ---------------------------------------------------------------------------
// 4. Metric oracle
// ---------------------------------------------------------------------------

Outcome metric_oracle() {
    Checker c;
    std::mt19937_64 rng(4);
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("c" + std::to_string(i));
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        std::shuffle(ids.begin(), ids.end(), rng);
        RankedList r;
        for (const auto& id : ids) r.entries.push_back({id, ""});
        const auto& positive = ids[rng() % ids.size()];
        for (int k : {1, 3, 5, 10}) {
            // Brute force: DCG summed over the cutoff; the ideal DCG of one
            // relevant item is 1.
            double dcg = 0.0;
            double hit = 0.0;
            for (int pos = 0; pos < k; ++pos) {
                const double rel = ids[static_cast<std::size_t>(pos)] == positive ? 1.0 : 0.0;
                dcg += rel / std::log2(pos + 2.0);
                hit += rel;
            }
            worst = std::max({worst, std::abs(ndcg_at_k(r, positive, k) - dcg), std::abs(hit_at_k(r, positive, k) - hit)});
        }
    }
    c.expect(worst <= 1e-12, "max deviation " + std::to_string(worst));
    c.expect(ndcg_from_rank(3, 3) == 0.5, "N@3 at rank 3");
    c.expect(ndcg_from_rank(1, 3) == 1.0, "N@3 at rank 1");
    c.expect(ndcg_from_rank(4, 3) == 0.0 && ndcg_from_rank(10, 3) == 0.0, "N@3 outside the cutoff");
    std::ostringstream s;
    s << "1000 permutations x 4 cutoffs, max deviation " << worst << "; closed forms hold";
    return c.outcome(s.str());
}

// ---------------------------------------------------------------------------
// 5. Ranking validity on malformed outputs
// ---------------------------------------------------------------------------

Outcome ranking_validity() {
    Checker c;
    const auto corpus = repair_corpus::build();
    std::size_t repaired = 0;
    std::size_t failed = 0;
    UserResult scored;
    scored.user_id = "corpus";
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& k = corpus[i];
        auto backend = std::make_shared<FunctionBackend>("corpus", [&](const LlmRequest&) { return k.raw; });
        Gateway gw(backend, templates());
        RankRequest req;
        req.user_id = "u";
        req.instruction = "pick one";
        for (const auto& id : k.candidates) req.candidates.push_back(Item{id, "Title " + id, "", {}});
        const auto out = rank_listwise(gw, req);
        const auto tag = " (case " + std::to_string(i) + ", " + k.kind + ")";
        c.expect(out.failed == k.expect_failure, "failure flag" + tag);

        PredictionRecord p;
        p.user_id = "corpus";
        p.event = i;
        p.positive = k.candidates.front();
        p.candidates = k.candidates;
        p.failed = out.failed;
        if (out.failed) {
            ++failed;
            c.expect(out.ranking.entries.empty() && !out.error.empty(), "silent failure" + tag);
        } else {
            ++repaired;
            c.expect(is_permutation_of(out.ranking, k.candidates), "not a permutation" + tag);
            c.expect(out.ranking.ids() == k.expected, "unexpected repair" + tag);
            p.ranking = out.ranking.ids();
            p.rank = *out.ranking.rank_of(p.positive);
        }
        scored.predictions.push_back(p);
    }

    // Failed predictions count as misses: the report over the corpus equals
    // the mean over successful ranks only, divided by every prediction.
    const auto report = build_report(EvalConfig{}, {scored}, "corpus");
    double expected_h5 = 0.0;
    for (const auto& p : scored.predictions) expected_h5 += hit_from_rank(p.rank, 5);
    expected_h5 /= static_cast<double>(scored.predictions.size());
    c.expect(report.at("failed_predictions") == failed, "failed prediction count in report");
    c.expect(std::abs(report.at("metrics").at("H@5").get<double>() - expected_h5) < 1e-12, "H@5 over the corpus");
    c.expect(hit_from_rank(0, 10) == 0.0 && ndcg_from_rank(0, 10) == 0.0, "failed rank scores as a hit");
    return c.outcome(std::to_string(corpus.size()) + " cases: " + std::to_string(repaired) +
                     " exact permutations, " + std::to_string(failed) + " loud failures scored as misses");
}

// ---------------------------------------------------------------------------
// 6. Determinism
// ---------------------------------------------------------------------------

Outcome determinism() {
    Checker c;
    const auto data = ingest(kFixtures / "synth50");
    std::vector<ExperimentResult> runs;
    std::vector<fs::path> dirs;
    for (int i = 0; i < 2; ++i) {
        auto gw = synth50_gateway();
        dirs.push_back(scratch("determinism_" + std::to_string(i)));
        runs.push_back(run_experiment(data, EvalConfig{}, gw, dirs.back()));
    }
    for (const char* f : {"report.json", "report.md"})
        c.expect(read_file(dirs[0] / f) == read_file(dirs[1] / f), std::string(f) + " differs");
    c.expect(runs[0].store_hash == runs[1].store_hash, "store hashes differ");
    c.expect(directory_hash(dirs[0] / "store") == directory_hash(dirs[1] / "store"), "store directories differ");
    return c.outcome("2 runs: reports byte-identical, store hash " + runs[0].store_hash);
}

// ---------------------------------------------------------------------------
// 7. Freeze contract
// ---------------------------------------------------------------------------

Outcome freeze_contract() {
    Checker c;
    const auto data = ingest(kFixtures / "synth50");
    EvalConfig cfg;
    cfg.jobs = 1;
    const auto dir = scratch("freeze");
    SkillStore store(dir / "store", cfg.history_depth);
    RunState state = build_state(data, cfg.history_fraction);
    auto gw = synth50_gateway();
    initialize_store(data, state, cfg, store, &gw);
    const auto users = select_users(data, cfg);
    {
        Pipeline warm(data, state, store, gw, cfg);
        run_users_serial(warm, users, true, false);
    }
    const auto frozen_hash = store.content_hash();
    for (const auto& u : users) c.expect(store.is_frozen(u), u + " not frozen after warmup");

    // Every model call during the test split re-hashes the whole store.
    auto oracle = OracleBackend::from_file(kFixtures / "synth50" / "oracle.jsonl");
    std::size_t probes = 0;
    std::size_t drifted = 0;
    auto probe = std::make_shared<FunctionBackend>("probe", [&](const LlmRequest& r) {
        ++probes;
        if (store.content_hash() != frozen_hash) ++drifted;
        return oracle->complete(r).text;
    });
    Gateway probed(probe, templates());
    Pipeline test(data, state, store, probed, cfg);
    const auto results = run_users_serial(test, users, false, true);
    std::size_t predictions = 0;
    std::size_t violations = 0;
    for (const auto& r : results) {
        c.expect(r.ok, r.user_id + ": " + r.error);
        predictions += r.predictions.size();
        violations += r.freeze_violations;
    }
    c.expect(drifted == 0, std::to_string(drifted) + " calls saw a changed store");
    c.expect(violations == 0, std::to_string(violations) + " freeze violations");
    c.expect(store.content_hash() == frozen_hash, "hash changed across the test split");
    c.expect(predictions > 0, "no predictions");
    return c.outcome(std::to_string(predictions) + " predictions, " + std::to_string(probes) +
                     " model calls, store hash " + frozen_hash + " unchanged");
}

// ---------------------------------------------------------------------------
// 8. RQ3 ablation wiring
// ---------------------------------------------------------------------------

Outcome ablation_wiring() {
    Checker c;
    const auto data = ingest(kFixtures / "synth50");
    auto gw = synth50_gateway();
    const auto out = scratch("rq3");
    const auto summary = run_ablation(data, EvalConfig{}, "rq3", gw, out);
    const auto& conds = summary.at("conditions");
    c.expect(conds.size() == 5, "condition count");
    c.expect(summary.at("identical_candidate_sets").get<bool>(), "candidate sets differ");
    std::map<std::string, double> h1;
    for (const auto& k : conds) {
        const auto name = k.at("name").get<std::string>();
        h1[name] = k.at("metrics").at("H@1").get<double>();
        c.expect(fs::exists(out / name / "report.json"), name + " report missing");
    }
    c.expect(h1["full"] > h1["no_skill"], "full H@1 does not exceed no_skill");
    std::ostringstream s;
    s.precision(4);
    s << std::fixed << "5 reports over identical candidates; H@1 full " << h1["full"] << " > no_skill "
      << h1["no_skill"];
    return c.outcome(s.str());
}

// ---------------------------------------------------------------------------
// 9. Incremental vs full replacement after three rounds
// ---------------------------------------------------------------------------

Outcome incremental_vs_replacement() {
    Checker c;
    const auto data = ingest(kFixtures / "synth50");
    auto gw = synth50_gateway();
    EvalConfig base;
    base.tau = 3;
    const auto out = scratch("rq4_tau3");
    run_ablation(data, base, "rq4", gw, out);

    std::size_t r0_high = 0;
    std::size_t kept_incremental = 0;
    std::size_t kept_replacement = 0;
    std::size_t protected_after_replacement = 0;
    std::size_t three_round_users = 0;
    const SkillStore inc(out / "incremental" / "store", base.history_depth);
    const SkillStore rep(out / "full_replacement" / "store", base.history_depth);
    for (const auto& u : inc.users()) {
        const auto r0 = inc.load_revision(u, 0);
        const auto a = inc.load(u);
        const auto b = rep.load(u);
        three_round_users += a.revision >= 3;
        for (const auto& s : kAllSections) {
            for (const auto& e : b.section(s)) protected_after_replacement += e.is_protected;
            for (const auto& e : r0.section(s)) {
                if (!e.is_protected || e.tier != Tier::high) continue;
                ++r0_high;
                const auto* ia = a.find(e.attribute);
                const auto* ib = b.find(e.attribute);
                const bool kept_a = ia && ia->is_protected;
                kept_incremental += kept_a;
                kept_replacement += ib && ib->is_protected && ib->tier == Tier::high;
                c.expect(kept_a, u + " lost protected '" + e.attribute + "' under incremental evolution");
            }
        }
    }
    c.expect(r0_high > 0, "no protected StatInit entries");
    c.expect(three_round_users > 0, "no user ran three rounds");
    c.expect(protected_after_replacement == 0, "full replacement kept protected entries");
    c.expect(kept_replacement < r0_high, "full replacement kept every high prior");
    return c.outcome(std::to_string(r0_high) + " protected StatInit highs; incremental keeps " +
                     std::to_string(kept_incremental) + ", full replacement keeps " +
                     std::to_string(kept_replacement) + " (" + std::to_string(three_round_users) +
                     " users with 3 rounds)");
}

// ---------------------------------------------------------------------------
// 10. Slim budget
// ---------------------------------------------------------------------------

Outcome slim_budget() {
    Checker c;
    const std::vector<std::size_t> budgets{10, 30, 80, 150, 200};

    // Every retained revision of every fixture user, from full runs.
    std::vector<PolicySkill> skills;
    struct Source {
        fs::path dir;
        std::string domain;
    };
    const std::vector<Source> sources{{kFixtures / "synth50", "structured"},
                                      {kFixtures / "cases" / "yelp", "structured"},
                                      {kFixtures / "cases" / "books", "books"},
                                      {kFixtures / "cases" / "movietv", "movietv"}};
    std::set<std::string> fixture_users;
    for (const auto& s : sources) {
        EvalConfig cfg;
        cfg.domain = s.domain;
        auto gw = oracle_gateway(s.dir / "oracle.jsonl");
        const auto work = scratch("slim_" + s.dir.filename().string());
        run_experiment(ingest(s.dir), cfg, gw, work);
        const SkillStore store(work / "store", cfg.history_depth);
        for (const auto& u : store.users()) {
            fixture_users.insert(s.dir.filename().string() + "/" + u);
            for (int r : store.revisions(u)) skills.push_back(store.load_revision(u, r));
        }
    }

    std::size_t degraded = 0;
    for (const auto& skill : skills) {
        const auto eligible = eligible_attributes(skill);
        for (auto b : budgets) {
            const auto slim = extract_slim_deterministic(skill, b);
            const auto tokens = whitespace_token_count(slim.render());
            const auto tag = " (" + skill.user_id + " r" + std::to_string(skill.revision) + " b" + std::to_string(b) + ")";
            c.expect(tokens == slim.token_count, "token count mismatch" + tag);
            c.expect(tokens <= std::min(b, kSlimTokenCap), "slim over budget" + tag);
            c.expect(whitespace_token_count(render_injection(skill, slim, b)) <= b, "injection over budget" + tag);
            for (const auto& like : slim.likes) c.expect(eligible.count(like) > 0, "ineligible like '" + like + "'" + tag);
            c.expect(!slim.degraded || eligible.empty(), "degraded with eligible entries" + tag);
            degraded += slim.degraded;
        }
    }

    // Model-path slims as injected during the budget sweep.
    const auto data = ingest(kFixtures / "synth50");
    auto gw = synth50_gateway();
    const auto sweep = scratch("slim_sweep");
    run_ablation(data, EvalConfig{}, "inject", gw, sweep);
    std::size_t model_slims = 0;
    for (auto b : budgets) {
        const auto name = "inject" + std::to_string(b);
        const auto report = json::parse(read_file(sweep / name / "report.json"));
        const SkillStore store(sweep / name / "store");
        for (const auto& u : report.at("per_user")) {
            const auto text = u.at("slim").get<std::string>();
            ++model_slims;
            c.expect(whitespace_token_count(text) <= std::min(b, kSlimTokenCap), "model slim over budget in " + name);
            if (b != kDefaultInjectBudget) continue;
            const auto eligible = eligible_attributes(store.load(u.at("user_id")));
            for (const auto& like : parse_slim(text).likes)
                c.expect(eligible.count(normalize_attribute(like)) > 0,
                         "default-budget model slim uses ineligible '" + like + "'");
        }
    }
    return c.outcome(std::to_string(fixture_users.size()) + " users, " + std::to_string(skills.size()) +
                     " skill revisions x 5 budgets (" + std::to_string(degraded) + " degraded); " +
                     std::to_string(model_slims) + " model-path slims within budget");
}

// ---------------------------------------------------------------------------
// 11. Live smoke run
// ---------------------------------------------------------------------------

Outcome live_smoke() {
    const char* url = std::getenv("SKILLREC_LIVE_BASE_URL");
    if (!url || !*url) return {Status::skip, "SKILLREC_LIVE_BASE_URL not set"};
    Checker c;
    LiveConfig live;
    live.base_url = url;
    if (const char* m = std::getenv("SKILLREC_LIVE_MODEL")) live.model = m;
    if (const char* k = std::getenv("SKILLREC_LIVE_KEY_ENV")) live.api_key_env = k;
    GatewayOptions opts;
    opts.reask_on_parse_failure = true;
    Gateway gw(std::make_shared<LiveBackend>(live), templates(), opts);
    EvalConfig cfg;
    cfg.user_sample = 5;
    const auto dir = scratch("live");
    json report;
    try {
        report = run_experiment(ingest(kFixtures / "synth50"), cfg, gw, dir).report;
    } catch (const PartialFailure& e) {
        c.expect(false, e.what());
        report = json::parse(read_file(dir / "report.json"));
    }
    const auto on_disk = json::parse(read_file(dir / "report.json"));
    c.expect(on_disk == report, "report.json differs from the in-memory report");
    c.expect(report.at("users") == 5, "user count");
    c.expect(report.at("failed_users").empty(), "failed users");
    c.expect(report.at("failed_predictions") == 0, "unrepaired rankings");
    c.expect(report.at("predictions").get<std::size_t>() > 0, "no predictions");
    for (const char* m : {"H@1", "H@3", "H@5", "N@3", "N@5"}) c.expect(report.at("metrics").contains(m), m);
    return c.outcome("5 users, " + report.at("predictions").dump() + " predictions, 0 unrepaired, " +
                     report.at("repaired_predictions").dump() + " repaired");
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"merge protocol properties", merge_properties},
        {"discover then reinforce", discover_reinforce},
        {"case-study trajectories", case_trajectories},
        {"metric oracle", metric_oracle},
        {"ranking validity", ranking_validity},
        {"determinism", determinism},
        {"freeze contract", freeze_contract},
        {"ablation wiring", ablation_wiring},
        {"incremental vs full replacement", incremental_vs_replacement},
        {"slim budget", slim_budget},
        {"live smoke", live_smoke},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {Status::fail, std::string("exception: ") + e.what()};
        }
        const char* label = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
        failures += o.status == Status::fail;
        std::cout << label << " criterion " << (i + 1) << " (" << criteria[i].first << "): " << o.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
