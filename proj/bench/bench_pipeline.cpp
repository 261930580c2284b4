// Serial reference vs OpenMP user-parallel kernels on the synth50 fixture.

#include <benchmark/benchmark.h>

#include "skillrec/eval_harness.hpp"

using namespace skillrec;
namespace fs = std::filesystem;

namespace {

const fs::path kSynth = fs::path(SKILLREC_FIXTURE_DIR) / "synth50";

struct Fixture {
    Dataset data = ingest(kSynth);
    std::shared_ptr<OracleBackend> oracle = OracleBackend::from_file(kSynth / "oracle.jsonl");
    TemplateLibrary templates = TemplateLibrary::load(default_data_dir() / "templates");
    DomainParserProfile profile = DomainParserProfile::load(default_data_dir(), Domain::structured);
    PolicySkill global = global_init("__global__", Domain::structured, default_data_dir());
    std::vector<UserHistory> histories;

    Fixture() {
        const auto splits = split_all(data);
        for (const auto& [user, split] : splits) histories.push_back({user, split.history});
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

void run_pipeline(benchmark::State& state, int jobs) {
    auto& f = fixture();
    EvalConfig config;
    config.jobs = jobs;
    const auto users = select_users(f.data, config);
    const auto root = fs::temp_directory_path() / ("skillrec_bench_" + std::to_string(jobs));
    for (auto _ : state) {
        state.PauseTiming();
        fs::remove_all(root);
        SkillStore store(root, config.history_depth);
        RunState run_state = build_state(f.data, config.history_fraction);
        Gateway gateway(f.oracle, f.templates);
        initialize_store(f.data, run_state, config, store, &gateway);
        Pipeline pipeline(f.data, run_state, store, gateway, config);
        state.ResumeTiming();
        auto results = jobs == 1 ? run_users_serial(pipeline, users, true, true)
                                 : run_users_parallel(pipeline, users, true, true, jobs);
        benchmark::DoNotOptimize(results);
    }
    state.counters["users"] = static_cast<double>(users.size());
}

void BM_PipelineSerial(benchmark::State& state) { run_pipeline(state, 1); }
void BM_PipelineParallel(benchmark::State& state) { run_pipeline(state, static_cast<int>(state.range(0))); }

void BM_StatInitSerial(benchmark::State& state) {
    auto& f = fixture();
    for (auto _ : state) {
        auto skills = initialize_skills_serial(f.histories, f.data.catalog, f.profile, f.global);
        benchmark::DoNotOptimize(skills);
    }
}

void BM_StatInitParallel(benchmark::State& state) {
    auto& f = fixture();
    for (auto _ : state) {
        auto skills = initialize_skills_parallel(f.histories, f.data.catalog, f.profile, f.global, {},
                                                 static_cast<int>(state.range(0)));
        benchmark::DoNotOptimize(skills);
    }
}

}  // namespace

BENCHMARK(BM_PipelineSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_PipelineParallel)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_StatInitSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_StatInitParallel)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
