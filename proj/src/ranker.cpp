#include "skillrec/ranker.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "skillrec/errors.hpp"
#include "skillrec/skill_engine.hpp"

namespace skillrec {

RankedList repair_ranking(const std::vector<RankedEntry>& raw, const std::vector<std::string>& candidate_ids,
                          RepairReport* report) {
    RepairReport local;
    RepairReport& rep = report ? *report : local;
    rep = RepairReport{};
    const std::set<std::string> known(candidate_ids.begin(), candidate_ids.end());
    std::set<std::string> seen;
    RankedList out;
    out.source = RankSource::listwise;
    for (const auto& e : raw) {
        if (!known.count(e.item_id)) {
            rep.unknown_removed.push_back(e.item_id);
            continue;
        }
        if (!seen.insert(e.item_id).second) {
            rep.duplicates_removed.push_back(e.item_id);
            continue;
        }
        out.entries.push_back(e);
    }
    rep.recognized = seen.size();
    for (const auto& id : candidate_ids) {
        if (seen.count(id)) continue;
        rep.missing_appended.push_back(id);
        out.entries.push_back(RankedEntry{id, ""});
    }
    rep.unrepairable = rep.recognized * 2 < candidate_ids.size();
    return out;
}

std::string format_candidates(const std::vector<Item>& candidates, std::size_t description_chars) {
    std::string out;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (!out.empty()) out += "\n";
        out += std::to_string(i + 1) + ". " + format_item_for_prompt(candidates[i], description_chars);
    }
    return out;
}

namespace {

void check_candidates(const RankRequest& request, const RankerConfig& config, std::size_t min_size) {
    const auto n = request.candidates.size();
    if (n < min_size || n > config.max_candidates)
        throw ConfigError("candidate count " + std::to_string(n) + " outside [" + std::to_string(min_size) + ", " +
                          std::to_string(config.max_candidates) + "]");
}

std::vector<std::string> candidate_ids(const RankRequest& request) {
    std::vector<std::string> ids;
    for (const auto& c : request.candidates) ids.push_back(c.item_id);
    return ids;
}

Bindings common_bindings(const RankRequest& request, const RankerConfig& config) {
    return Bindings{{"user_id", request.user_id},
                    {"instruction", request.instruction},
                    {"formatted_facets", format_facets(request.facets, config.facet_chars)},
                    {"slim_skill", request.skill_text.empty() ? std::string("(none)") : request.skill_text}};
}

}  // namespace

RankOutcome rank_listwise(Gateway& gateway, const RankRequest& request, const RankerConfig& config,
                          CallStats* stats) {
    check_candidates(request, config, 2);
    const auto ids = candidate_ids(request);
    auto b = common_bindings(request, config);
    b["formatted_candidates"] = format_candidates(request.candidates, config.description_chars);
    b["n_candidates"] = std::to_string(request.candidates.size());

    RankOutcome out;
    auto parse = [&](std::string_view raw) {
        RepairReport rep;
        auto ranked = repair_ranking(parse_ranking(raw), ids, &rep);
        if (rep.unrepairable)
            throw ParseError("ranking recognizes only " + std::to_string(rep.recognized) + " of " +
                             std::to_string(ids.size()) + " candidates");
        out.repair = rep;
        return ranked;
    };
    try {
        out.ranking = gateway.complete_parsed(TemplateName::list, b, request.sequence, parse, stats, &out.raw_output);
    } catch (const ParseError& e) {
        out.failed = true;
        out.error = e.what();
        out.repair.unrepairable = true;
        out.ranking = RankedList{};
    }
    out.ranking.source = RankSource::listwise;
    if (!out.failed) validate_permutation(out.ranking, ids);
    return out;
}

std::size_t count_ties(const std::vector<int>& scores) {
    std::map<int, std::size_t> groups;
    for (int s : scores) ++groups[s];
    std::size_t ties = 0;
    for (const auto& [_, n] : groups) ties += n - 1;
    return ties;
}

RankOutcome rank_pointwise(Gateway& gateway, const RankRequest& request, const RankerConfig& config,
                           CallStats* stats) {
    check_candidates(request, config, 1);
    const auto base = common_bindings(request, config);
    RankOutcome out;
    json raws = json::array();
    for (const auto& item : request.candidates) {
        auto b = base;
        b["candidate"] = format_item_for_prompt(item, config.description_chars);
        const auto response = gateway.complete(TemplateName::point, b, request.sequence, stats);
        raws.push_back(response.text);
        out.scores.push_back(parse_point_score(response.text).value_or(0));
    }
    out.raw_output = raws.dump();
    std::vector<std::size_t> order(request.candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return out.scores[a] > out.scores[b]; });
    out.ranking.source = RankSource::pointwise;
    for (auto i : order) {
        out.ranking.entries.push_back(
            RankedEntry{request.candidates[i].item_id, "score " + std::to_string(out.scores[i])});
    }
    out.tie_count = count_ties(out.scores);
    return out;
}

TraceWriter::TraceWriter(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream(path_, std::ios::trunc);
}

void TraceWriter::write(const json& record) {
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app);
    if (!out) throw DataError("cannot append to trace " + path_.string());
    out << record.dump() << "\n";
}

json trace_record(const RankRequest& request, const RankOutcome& outcome) {
    json candidates = json::array();
    for (const auto& c : request.candidates) candidates.push_back(c.item_id);
    return json{{"user_id", request.user_id},
                {"sequence", request.sequence},
                {"instruction", request.instruction},
                {"candidates", candidates},
                {"slim", request.skill_text},
                {"raw_output", outcome.raw_output},
                {"ranking", outcome.ranking.ids()},
                {"source", to_string(outcome.ranking.source)},
                {"failed", outcome.failed},
                {"error", outcome.error},
                {"tie_count", outcome.tie_count},
                {"repair",
                 {{"duplicates_removed", outcome.repair.duplicates_removed},
                  {"unknown_removed", outcome.repair.unknown_removed},
                  {"missing_appended", outcome.repair.missing_appended},
                  {"recognized", outcome.repair.recognized},
                  {"unrepairable", outcome.repair.unrepairable}}}};
}

}  // namespace skillrec
