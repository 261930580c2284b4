#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "skillrec/errors.hpp"
#include "skillrec/eval_harness.hpp"

using namespace skillrec;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures(SKILLREC_FIXTURE_DIR);

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("skillrec_eh_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    for (const auto& l : lines) out << l << "\n";
}

// Minimal valid dataset; callers overwrite one file to inject a fault.
fs::path tiny_dataset(const std::string& name) {
    const auto dir = fresh_dir(name);
    write_lines(dir / "items.jsonl", {R"({"item_id":"a","title":"A","metadata":{"categories":["Bars","Pubs"],"stars":4.5}})",
                                      R"({"item_id":7,"title":"Seven"})"});
    write_lines(dir / "interactions.jsonl", {R"({"user_id":"u","item_id":"a","ts":5})",
                                             R"({"user_id":"u","item_id":7,"timestamp":2})"});
    write_lines(dir / "instructions.jsonl", {R"({"user_id":"u","ts":2,"text":"first"})",
                                             R"({"user_id":"u","ts":9,"text":"later"})"});
    return dir;
}

std::vector<InteractionRecord> records(std::size_t n) {
    std::vector<InteractionRecord> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back({"u", "i" + std::to_string(i), static_cast<std::int64_t>(i), Split::history});
    return out;
}

Gateway synth50_gateway() {
    return Gateway(OracleBackend::from_file(kFixtures / "synth50" / "oracle.jsonl"),
                   TemplateLibrary::load(default_data_dir() / "templates"));
}

}  // namespace

TEST(Ingest, ReadsFieldsAndSortsByTimestamp) {
    const auto d = ingest(tiny_dataset("ok"));
    EXPECT_EQ(d.item_ids, (std::vector<std::string>{"7", "a"}));
    EXPECT_EQ(d.catalog.at("a").metadata.at("categories"), "Bars, Pubs");
    EXPECT_EQ(d.catalog.at("a").metadata.at("stars"), "4.5");
    ASSERT_EQ(d.interactions.at("u").size(), 2u);
    EXPECT_EQ(d.interactions.at("u")[0].item_id, "7");
    EXPECT_EQ(d.instruction_for("u", 2), "first");
    EXPECT_EQ(d.instruction_for("u", 5), "first");
    EXPECT_EQ(d.instruction_for("u", 1), "first");
    EXPECT_EQ(d.instruction_for("u", 10), "later");
    EXPECT_EQ(d.instruction_for("nobody", 1), kDefaultInstruction);
}

TEST(Ingest, ErrorsCarryFileAndLine) {
    auto dir = tiny_dataset("badline");
    write_lines(dir / "interactions.jsonl", {R"({"user_id":"u","item_id":"a","ts":5})", R"({"user_id":"u","ts":1})"});
    try {
        ingest(dir);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("interactions.jsonl:2"), std::string::npos) << e.what();
    }
    dir = tiny_dataset("malformed");
    write_lines(dir / "items.jsonl", {"{not json"});
    EXPECT_THROW(ingest(dir), DataError);
}

TEST(Ingest, DuplicatesDanglingMixedLabelsManifest) {
    auto dir = tiny_dataset("dup");
    write_lines(dir / "items.jsonl", {R"({"item_id":"a","title":"A"})", R"({"item_id":"a","title":"B"})"});
    EXPECT_THROW(ingest(dir), DataError);

    dir = tiny_dataset("dangling");
    write_lines(dir / "interactions.jsonl", {R"({"user_id":"u","item_id":"a","ts":5})",
                                             R"({"user_id":"u","item_id":"zz","ts":6})"});
    EXPECT_THROW(ingest(dir), DataError);
    const auto lenient = ingest(dir, IngestOptions{0.5});
    EXPECT_EQ(lenient.dropped_dangling, 1u);
    EXPECT_EQ(lenient.warnings.size(), 1u);

    dir = tiny_dataset("mixed");
    write_lines(dir / "interactions.jsonl", {R"({"user_id":"u","item_id":"a","ts":5,"split":"test"})",
                                             R"({"user_id":"u","item_id":"a","ts":6})"});
    EXPECT_THROW(ingest(dir), DataError);

    dir = tiny_dataset("manifest");
    write_lines(dir / "manifest.json", {R"({"items": 3})"});
    EXPECT_THROW(ingest(dir), DataError);

    dir = tiny_dataset("noinstr");
    fs::remove(dir / "instructions.jsonl");
    EXPECT_THROW(ingest(dir), DataError);
}

TEST(Split, ArithmeticMatchesFormula) {
    for (std::size_t n = 1; n <= 40; ++n) {
        for (double f : {0.5, 0.7, 0.8}) {
            const auto s = split_user(records(n), false, f);
            const auto h = static_cast<std::size_t>(std::floor(f * static_cast<double>(n)));
            const auto rem = n - h;
            const std::size_t w = rem == 0 ? 0 : std::min<std::size_t>(3, rem - 1);
            EXPECT_EQ(s.history.size(), h) << n << " " << f;
            EXPECT_EQ(s.warmup.size(), w) << n << " " << f;
            EXPECT_EQ(s.test.size(), n - h - w) << n << " " << f;
            if (n - h >= 1) EXPECT_GE(s.test.size(), 1u);
        }
    }
}

TEST(Split, LabelsAreKept) {
    auto r = records(3);
    r[0].split = Split::test;
    r[2].split = Split::warmup;
    const auto s = split_user(r, true);
    EXPECT_EQ(s.history.size(), 1u);
    EXPECT_EQ(s.warmup.size(), 1u);
    EXPECT_EQ(s.test.at(0).item_id, "i0");
}

TEST(Sampling, PositiveFirstDistinctAndExcluded) {
    std::vector<std::string> ids;
    for (int i = 0; i < 30; ++i) ids.push_back("i" + std::to_string(i));
    const std::set<std::string> excluded{"i1", "i2", "i3"};
    const auto c = sample_candidates("u", "i0", ids, excluded, 10, 42, 1);
    ASSERT_EQ(c.size(), 10u);
    EXPECT_EQ(c[0], "i0");
    EXPECT_EQ(std::set<std::string>(c.begin(), c.end()).size(), 10u);
    for (const auto& x : c) EXPECT_FALSE(excluded.count(x));
    EXPECT_EQ(sample_candidates("u", "i0", ids, excluded, 10, 42, 1), c);
    EXPECT_NE(sample_candidates("u", "i0", ids, excluded, 10, 42, 2), c);
    EXPECT_NE(sample_candidates("v", "i0", ids, excluded, 10, 42, 1), c);
    EXPECT_THROW(sample_candidates("u", "i0", ids, excluded, 28, 42, 1), DataError);
}

// Each eligible negative should be drawn with probability (n-1)/|eligible|.
TEST(Sampling, NegativesAreUniform) {
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) ids.push_back("i" + std::to_string(i));
    std::map<std::string, int> counts;
    const int trials = 20000;
    for (int t = 0; t < trials; ++t) {
        const auto c = sample_candidates("u", "i0", ids, {}, 5, 7, static_cast<std::uint64_t>(t));
        for (std::size_t i = 1; i < c.size(); ++i) ++counts[c[i]];
    }
    ASSERT_EQ(counts.size(), 19u);
    const double expected = trials * 4.0 / 19.0;
    double chi2 = 0.0;
    for (const auto& [_, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
    // 18 degrees of freedom; 42.3 is the 0.999 quantile.
    EXPECT_LT(chi2, 42.3);
}

TEST(Presentation, ShuffleIsPermutationAndSeeded) {
    const std::vector<std::string> ids{"a", "b", "c", "d", "e", "f"};
    const auto p = presentation_order(ids, "u", 42, 3);
    EXPECT_TRUE(std::is_permutation(p.begin(), p.end(), ids.begin()));
    EXPECT_EQ(presentation_order(ids, "u", 42, 3), p);
    int first_is_a = 0;
    for (std::uint64_t r = 0; r < 6000; ++r) first_is_a += presentation_order(ids, "u", 1, r)[0] == "a";
    EXPECT_NEAR(first_is_a / 6000.0, 1.0 / 6.0, 0.03);
}

TEST(Metrics, ClosedForms) {
    EXPECT_DOUBLE_EQ(ndcg_from_rank(3, 3), 0.5);
    EXPECT_DOUBLE_EQ(ndcg_from_rank(1, 3), 1.0);
    EXPECT_DOUBLE_EQ(ndcg_from_rank(4, 3), 0.0);
    EXPECT_DOUBLE_EQ(ndcg_from_rank(0, 3), 0.0);
    EXPECT_DOUBLE_EQ(hit_from_rank(3, 3), 1.0);
    EXPECT_DOUBLE_EQ(hit_from_rank(4, 3), 0.0);
    RankedList r;
    r.entries = {{"x", ""}};
    EXPECT_THROW(hit_at_k(r, "y", 1), DataError);
}

// Brute force: the DCG of a single relevant item, summed position by position.
TEST(Metrics, MatchBruteForceOnRandomPermutations) {
    std::mt19937_64 rng(5);
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("c" + std::to_string(i));
    for (int t = 0; t < 1000; ++t) {
        std::shuffle(ids.begin(), ids.end(), rng);
        RankedList r;
        for (const auto& id : ids) r.entries.push_back({id, ""});
        const auto& positive = ids[rng() % ids.size()];
        for (int k : {1, 3, 5, 10}) {
            double dcg = 0.0;
            double hit = 0.0;
            for (int pos = 0; pos < k; ++pos) {
                const double rel = ids[static_cast<std::size_t>(pos)] == positive ? 1.0 : 0.0;
                dcg += rel / std::log2(pos + 2.0);
                hit = std::max(hit, rel);
            }
            EXPECT_NEAR(ndcg_at_k(r, positive, k), dcg / 1.0, 1e-12);
            EXPECT_NEAR(hit_at_k(r, positive, k), hit, 1e-12);
        }
    }
}

TEST(Ablation, NamesRoundTrip) {
    for (const char* n : {"full", "no_skill", "no_statinit", "pointwise", "no_cot", "full_replacement",
                          "no_statinit+pointwise"})
        EXPECT_EQ(ablation_name(ablation_from_name(n)), n);
    EXPECT_EQ(ablation_from_name("incremental"), Ablation{});
    EXPECT_THROW(ablation_from_name("no_memory"), ConfigError);
    EXPECT_FALSE(ablation_from_name("no_cot").evolves());
}

TEST(Config, FilePrecedenceAndValidation) {
    const auto dir = fresh_dir("config");
    write_lines(dir / "run.conf", {"# comment", "tau = 1", "k = 1,10  # inline", "ablation = pointwise", ""});
    EvalConfig c;
    for (const auto& [k, v] : read_config_file(dir / "run.conf")) apply_config_value(c, k, v);
    apply_config_value(c, "tau", "3");  // a later flag wins
    EXPECT_EQ(c.tau, 3);
    EXPECT_EQ(c.ks, (std::vector<int>{1, 10}));
    EXPECT_TRUE(c.ablation.pointwise);
    EXPECT_NO_THROW(validate(c));
    EXPECT_THROW(apply_config_value(c, "tau", "two"), ConfigError);
    EXPECT_THROW(apply_config_value(c, "seed", "-1"), ConfigError);
    EXPECT_THROW(apply_config_value(c, "bogus", "1"), ConfigError);
    c.tau = 4;
    EXPECT_THROW(validate(c), ConfigError);
    c.tau = 2;
    c.slim_mode = "magic";
    EXPECT_THROW(validate(c), ConfigError);
    write_lines(dir / "bad.conf", {"no equals sign"});
    EXPECT_THROW(read_config_file(dir / "bad.conf"), ConfigError);
    EXPECT_THROW(read_config_file(dir / "missing.conf"), ConfigError);
}

TEST(Config, JsonCarriesEveryKey) {
    EvalConfig c;
    const auto j = c.to_json();
    EvalConfig back;
    for (const auto& [k, v] : j.items()) {
        if (k == "ks") {
            std::vector<std::string> parts;
            for (int x : v) parts.push_back(std::to_string(x));
            apply_config_value(back, k, join(parts, ","));
        } else {
            apply_config_value(back, k, v.is_string() ? v.get<std::string>() : v.dump());
        }
    }
    EXPECT_EQ(back.to_json(), j);
}

TEST(AblationMatrix, Shapes) {
    EvalConfig base;
    EXPECT_EQ(ablation_matrix("rq3", base).size(), 5u);
    EXPECT_EQ(ablation_matrix("rq4", base).size(), 2u);
    EXPECT_EQ(ablation_matrix("tau", base).size(), 4u);
    EXPECT_EQ(ablation_matrix("inject", base).size(), 5u);
    EXPECT_THROW(ablation_matrix("rq9", base), ConfigError);
}

TEST(State, SaveLoadRoundTrip) {
    const auto data = ingest(kFixtures / "synth50");
    const auto state = build_state(data, 0.7);
    const auto dir = fresh_dir("state");
    save_state(state, dir);
    RunState back;
    back.splits = state.splits;
    load_state(back, dir);
    EXPECT_TRUE(back.graph == state.graph);
    EXPECT_EQ(back.memories, state.memories);
    EXPECT_EQ(state.memories.size(), 50u);
}

TEST(GoldenReplay, Rq3MatchesRecordedMetrics) {
    const auto data = ingest(kFixtures / "synth50");
    const auto golden = json::parse(read_file(kFixtures / "synth50" / "golden_metrics.json"));
    auto gw = synth50_gateway();
    const auto summary = run_ablation(data, EvalConfig{}, "rq3", gw, fresh_dir("golden_rq3"));
    const auto& want = golden.at("rq3");
    ASSERT_EQ(summary.at("conditions").size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        const auto& got = summary.at("conditions").at(i);
        EXPECT_EQ(got.at("name"), want[i].at("name"));
        EXPECT_EQ(got.at("candidate_digest"), want[i].at("candidate_digest"));
        for (const auto& [k, v] : want[i].at("metrics").items())
            EXPECT_NEAR(got.at("metrics").at(k).get<double>(), v.get<double>(), 1e-12) << want[i].at("name") << " " << k;
    }
    EXPECT_TRUE(summary.at("identical_candidate_sets").get<bool>());
}

TEST(Parallel, SerialAndParallelRunsAgree) {
    const auto data = ingest(kFixtures / "synth50");
    auto gw = synth50_gateway();
    EvalConfig serial_cfg;
    serial_cfg.jobs = 1;
    EvalConfig parallel_cfg;
    parallel_cfg.jobs = 4;
    const auto a = run_experiment(data, serial_cfg, gw, fresh_dir("serial"));
    const auto b = run_experiment(data, parallel_cfg, gw, fresh_dir("parallel"));
    EXPECT_EQ(a.store_hash, b.store_hash);
    EXPECT_EQ(a.report.at("metrics"), b.report.at("metrics"));
    EXPECT_EQ(a.report.at("per_prediction"), b.report.at("per_prediction"));
}

TEST(Pipeline, FailedUserIsIsolated) {
    const auto data = ingest(kFixtures / "synth50");
    // Empty script: every model call misses, so every user fails.
    Gateway gw(OracleBackend::from_records({}), TemplateLibrary::load(default_data_dir() / "templates"));
    EvalConfig c;
    c.user_sample = 3;
    const auto dir = fresh_dir("failing");
    EXPECT_THROW(run_experiment(data, c, gw, dir), PartialFailure);
    const auto report = json::parse(read_file(dir / "report.json"));
    EXPECT_EQ(report.at("failed_users").size(), 3u);
    EXPECT_DOUBLE_EQ(report.at("metrics").at("H@1").get<double>(), 0.0);
}
