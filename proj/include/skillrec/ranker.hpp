#pragma once

// Skill-augmented ranking over a candidate set: the listwise path with
// output repair, and the pointwise ablation path with tie accounting.

#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include "skillrec/datamodel.hpp"
#include "skillrec/llm_gateway.hpp"

namespace skillrec {

struct RankerConfig {
    std::size_t max_candidates = 10;
    std::size_t facet_chars = 200;
    std::size_t description_chars = 240;
};

struct RepairReport {
    std::vector<std::string> duplicates_removed;
    std::vector<std::string> unknown_removed;
    std::vector<std::string> missing_appended;
    std::size_t recognized = 0;  // distinct candidate ids the model returned
    bool unrepairable = false;

    bool clean() const { return duplicates_removed.empty() && unknown_removed.empty() && missing_appended.empty(); }
};

// Dedupes (first occurrence wins), drops ids outside the candidate set and
// appends missing ids in candidate order. Marks the output unrepairable when
// fewer than half of the candidates were recognized; the returned list is a
// permutation either way.
RankedList repair_ranking(const std::vector<RankedEntry>& raw, const std::vector<std::string>& candidate_ids,
                          RepairReport* report = nullptr);

std::string format_candidates(const std::vector<Item>& candidates, std::size_t description_chars = 240);

struct RankRequest {
    std::string user_id;
    std::string instruction;
    std::vector<Facet> facets;
    std::string skill_text;  // rendered injection; empty when no skill
    std::vector<Item> candidates;  // presentation order
    int sequence = 0;
};

struct RankOutcome {
    RankedList ranking;
    RepairReport repair;
    std::string raw_output;
    std::vector<int> scores;  // pointwise only, presentation order
    std::size_t tie_count = 0;
    bool failed = false;  // unusable output; the prediction scores as a miss
    std::string error;
};

// Parse or repair failures (after the gateway's re-ask, when enabled) give
// failed=true rather than an exception. Backend errors propagate.
RankOutcome rank_listwise(Gateway& gateway, const RankRequest& request, const RankerConfig& config = {},
                          CallStats* stats = nullptr);

// One call per candidate; unparsable scores count as 0. Sorted by score
// descending with presentation order breaking ties. tie_count is the sum
// over equal-score groups of (size - 1).
RankOutcome rank_pointwise(Gateway& gateway, const RankRequest& request, const RankerConfig& config = {},
                           CallStats* stats = nullptr);

std::size_t count_ties(const std::vector<int>& scores);

// Append-only JSONL trace, one record per prediction.
class TraceWriter {
public:
    explicit TraceWriter(std::filesystem::path path);
    void write(const json& record);
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::mutex mu_;
};

json trace_record(const RankRequest& request, const RankOutcome& outcome);

}  // namespace skillrec
