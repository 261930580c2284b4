#pragma once

// Zero-LLM-cost initial skill construction. Item metadata from a user's
// history is mined by a domain-specific parser, signal frequencies are
// mapped to confidence tiers, and an evolvable strategy block is emitted.
// Users without history receive the domain's global template instead.

#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "skillrec/datamodel.hpp"
#include "skillrec/llm_gateway.hpp"

namespace skillrec {

enum class Domain { structured, books, movietv };
std::string_view to_string(Domain d);
// Accepts structured|yelp, books|goodreads, movietv.
Domain domain_from_string(std::string_view s);

enum class Dimension { category, price, city, ambience, meal, rating, genre, creator, mood };
std::string_view to_string(Dimension d);

struct LexiconClass {
    std::string label;
    std::vector<std::string> keywords;
};

struct DomainParserProfile {
    Domain domain = Domain::structured;
    std::vector<LexiconClass> genres;
    std::vector<LexiconClass> moods;
    std::vector<std::string> creator_cues;  // e.g. "directed by"
    std::string creator_label_prefix;       // e.g. "films by "
    std::vector<std::regex> noise_patterns;
    std::vector<std::string> noise_sources;  // pattern text, for display
    std::string item_noun = "Items";
    std::string tie_breaker;
    std::string exploration;
    std::string style_fallback = "open-minded explorer";

    // Loads `<data_dir>/lexicons/<domain>.json`.
    static DomainParserProfile load(const std::filesystem::path& data_dir, Domain domain);
    static DomainParserProfile from_json(const json& j);
};

struct Signal {
    std::string attribute;  // normalized
    Dimension dimension = Dimension::category;
    std::size_t order = 0;  // lexicon position, tie-break within a dimension

    bool operator==(const Signal&) const = default;
};

// If `text` is a bracketed list literal of quoted strings (possibly
// nested), returns its string elements in order; otherwise nullopt.
std::optional<std::vector<std::string>> flatten_list_literal(std::string_view text);

// Paragraphs of a description: list-literal elements when the description
// is one, else blank-line / newline separated blocks.
std::vector<std::string> description_paragraphs(std::string_view description);

// Drops every sentence-level segment matching a noise pattern.
std::string filter_noise(std::string_view text, const DomainParserProfile& profile);

// Whole-word, case-insensitive keyword match on punctuation-normalized text.
bool contains_keyword(std::string_view normalized_text, std::string_view keyword);
std::string normalize_for_matching(std::string_view text);

// Creator names found in `text` after any of the profile's cues. Names are
// 1-3 capitalized words.
std::vector<std::string> extract_creators(std::string_view text, const DomainParserProfile& profile);

inline constexpr std::size_t kCreatorWindowChars = 400;

// Never fails: an unparseable description contributes no signals.
std::vector<Signal> parse_item_signals(const Item& item, const DomainParserProfile& profile);

struct StatInitConfig {
    double high_cut = 0.5;
    double medium_cut = 0.25;
    int min_support = 3;         // occurrences needed for medium or high
    int creator_min_count = 2;   // a creator must recur to count as a favorite
    double max_missing_share = 0.5;
};

// Pure function of its inputs; history order does not matter.
PolicySkill stat_init(const std::string& user_id, const std::vector<InteractionRecord>& history,
                      const std::map<std::string, Item>& catalog, const DomainParserProfile& profile,
                      const StatInitConfig& config = {});

// Population-level skill for users without history. Loaded from
// `<data_dir>/global_skills/<domain>.json`; when absent and a gateway is
// given, generated once through the global_skill template.
PolicySkill global_init(const std::string& user_id, Domain domain, const std::filesystem::path& data_dir,
                        Gateway* gateway = nullptr);

struct UserHistory {
    std::string user_id;
    std::vector<InteractionRecord> history;
};

// Routes each user to stat_init (non-empty history) or the global template.
// Serial reference and OpenMP version; both return skills in input order.
std::vector<PolicySkill> initialize_skills_serial(const std::vector<UserHistory>& users,
                                                  const std::map<std::string, Item>& catalog,
                                                  const DomainParserProfile& profile, const PolicySkill& global,
                                                  const StatInitConfig& config = {});
std::vector<PolicySkill> initialize_skills_parallel(const std::vector<UserHistory>& users,
                                                    const std::map<std::string, Item>& catalog,
                                                    const DomainParserProfile& profile, const PolicySkill& global,
                                                    const StatInitConfig& config = {}, int jobs = 0);

}  // namespace skillrec
