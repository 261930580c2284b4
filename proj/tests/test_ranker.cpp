#include <gtest/gtest.h>

#include <fstream>

#include "repair_corpus.hpp"
#include "skillrec/errors.hpp"
#include "skillrec/ranker.hpp"

using namespace skillrec;

namespace {

TemplateLibrary ranking_library() {
    TemplateLibrary lib;
    lib.add({TemplateName::list,
             "{user_id}|{instruction}|{formatted_facets}|{slim_skill}|{n_candidates}\n{formatted_candidates}"});
    lib.add({TemplateName::point, "{user_id}|{instruction}|{formatted_facets}|{slim_skill}|{candidate}"});
    return lib;
}

RankRequest request_for(const std::vector<std::string>& ids) {
    RankRequest r;
    r.user_id = "u";
    r.instruction = "find dinner";
    for (const auto& id : ids) r.candidates.push_back(Item{id, "Title " + id, "", {}});
    return r;
}

}  // namespace

TEST(Repair, CleanRankingUntouched) {
    RepairReport rep;
    const auto out = repair_ranking({{"b", "x"}, {"a", ""}, {"c", ""}}, {"a", "b", "c"}, &rep);
    EXPECT_EQ(out.ids(), (std::vector<std::string>{"b", "a", "c"}));
    EXPECT_TRUE(rep.clean());
    EXPECT_EQ(rep.recognized, 3u);
    EXPECT_EQ(out.entries[0].rationale, "x");
}

TEST(Repair, DedupesDropsUnknownAppendsMissing) {
    RepairReport rep;
    const auto out = repair_ranking({{"c", ""}, {"zz", ""}, {"c", ""}, {"a", ""}}, {"a", "b", "c", "d"}, &rep);
    EXPECT_EQ(out.ids(), (std::vector<std::string>{"c", "a", "b", "d"}));
    EXPECT_EQ(rep.duplicates_removed, std::vector<std::string>{"c"});
    EXPECT_EQ(rep.unknown_removed, std::vector<std::string>{"zz"});
    EXPECT_EQ(rep.missing_appended, (std::vector<std::string>{"b", "d"}));
    EXPECT_FALSE(rep.unrepairable);
}

TEST(Repair, FewerThanHalfRecognizedIsUnrepairable) {
    RepairReport rep;
    repair_ranking({{"a", ""}}, {"a", "b", "c"}, &rep);
    EXPECT_TRUE(rep.unrepairable);
    repair_ranking({{"a", ""}, {"b", ""}}, {"a", "b", "c", "d"}, &rep);
    EXPECT_FALSE(rep.unrepairable);
}

TEST(Listwise, MalformedCorpusRepairsToPermutationsOrFailsLoudly) {
    const auto corpus = repair_corpus::build();
    ASSERT_EQ(corpus.size(), 200u);
    std::size_t failures = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& c = corpus[i];
        auto backend = std::make_shared<FunctionBackend>("fn", [&](const LlmRequest&) { return c.raw; });
        Gateway gw(backend, ranking_library());
        const auto out = rank_listwise(gw, request_for(c.candidates));
        ASSERT_EQ(out.failed, c.expect_failure) << "case " << i << " (" << c.kind << "): " << c.raw;
        if (out.failed) {
            ++failures;
            EXPECT_TRUE(out.ranking.entries.empty());
            EXPECT_FALSE(out.error.empty());
            continue;
        }
        EXPECT_TRUE(is_permutation_of(out.ranking, c.candidates)) << "case " << i;
        EXPECT_EQ(out.ranking.ids(), c.expected) << "case " << i << " (" << c.kind << ")";
    }
    // Three of the ten corpus kinds are unrepairable by construction.
    EXPECT_EQ(failures, 60u);
}

TEST(Listwise, PromptBindings) {
    std::string prompt;
    auto backend = std::make_shared<FunctionBackend>("fn", [&](const LlmRequest& r) {
        prompt = r.prompt;
        return std::string(R"(["b","a"])");
    });
    Gateway gw(backend, ranking_library());
    auto req = request_for({"a", "b"});
    const auto out = rank_listwise(gw, req);
    EXPECT_EQ(prompt, "u|find dinner|- (no facets)|(none)|2\n1. [a] Title a\n2. [b] Title b");
    EXPECT_EQ(out.ranking.ids(), (std::vector<std::string>{"b", "a"}));
    req.skill_text = "likes: x";
    rank_listwise(gw, req);
    EXPECT_NE(prompt.find("|likes: x|"), std::string::npos);
}

TEST(Listwise, CandidateCountBounds) {
    auto backend = std::make_shared<FunctionBackend>("fn", [](const LlmRequest&) { return std::string("[]"); });
    Gateway gw(backend, ranking_library());
    EXPECT_THROW(rank_listwise(gw, request_for({"a"})), ConfigError);
    std::vector<std::string> many;
    for (int i = 0; i < 11; ++i) many.push_back("i" + std::to_string(i));
    EXPECT_THROW(rank_listwise(gw, request_for(many)), ConfigError);
}

TEST(Listwise, ReaskRecoversFromGarbage) {
    int calls = 0;
    auto backend = std::make_shared<FunctionBackend>("fn", [&](const LlmRequest&) {
        return ++calls == 1 ? std::string("sorry") : std::string(R"(["a","b","c"])");
    });
    GatewayOptions opts;
    opts.reask_on_parse_failure = true;
    Gateway gw(backend, ranking_library(), opts);
    CallStats stats;
    const auto out = rank_listwise(gw, request_for({"a", "b", "c"}), {}, &stats);
    EXPECT_FALSE(out.failed);
    EXPECT_EQ(stats.reasks, 1);
}

TEST(Listwise, BackendErrorsPropagate) {
    auto oracle = OracleBackend::from_records({});
    Gateway gw(oracle, ranking_library());
    EXPECT_THROW(rank_listwise(gw, request_for({"a", "b"})), ScriptMiss);
}

TEST(Pointwise, StableSortAndTies) {
    const std::map<std::string, std::string> scores{{"a", "5"}, {"b", "Score: 9"}, {"c", "5"}, {"d", "n/a"}};
    auto backend = std::make_shared<FunctionBackend>("fn", [&](const LlmRequest& r) {
        const auto& cand = r.bindings.at("candidate");
        return scores.at(cand.substr(1, cand.find(']') - 1));
    });
    Gateway gw(backend, ranking_library());
    CallStats stats;
    const auto out = rank_pointwise(gw, request_for({"a", "b", "c", "d"}), {}, &stats);
    EXPECT_EQ(out.ranking.ids(), (std::vector<std::string>{"b", "a", "c", "d"}));
    EXPECT_EQ(out.scores, (std::vector<int>{5, 9, 5, 0}));
    EXPECT_EQ(out.tie_count, 1u);
    EXPECT_EQ(out.ranking.source, RankSource::pointwise);
    EXPECT_EQ(stats.calls, 4);
}

TEST(Pointwise, CountTiesOracle) {
    EXPECT_EQ(count_ties({}), 0u);
    EXPECT_EQ(count_ties({1, 2, 3}), 0u);
    EXPECT_EQ(count_ties({7, 7, 7, 7}), 3u);
    EXPECT_EQ(count_ties({1, 1, 2, 2, 2, 3}), 3u);
}

TEST(Trace, AppendsOneRecordPerCall) {
    const auto path = std::filesystem::temp_directory_path() / "skillrec_trace_test" / "trace.jsonl";
    TraceWriter trace(path);
    RankOutcome o;
    o.ranking.entries = {{"a", ""}};
    trace.write(trace_record(request_for({"a"}), o));
    trace.write(trace_record(request_for({"a"}), o));
    const auto lines = read_jsonl(path);
    ASSERT_EQ(lines.size(), 2u);
    EXPECT_EQ(lines[0].at("ranking"), json::array({"a"}));
    EXPECT_EQ(lines[0].at("source"), "listwise");
}
