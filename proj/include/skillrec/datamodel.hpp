#pragma once

// Domain types shared across the pipeline, their validation, and their
// canonical JSON encoding. All types are plain values.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "skillrec/util.hpp"

namespace skillrec {

// ---------------------------------------------------------------------------
// Confidence tiers
// ---------------------------------------------------------------------------

enum class Tier { low = 0, medium = 1, high = 2 };

constexpr Tier tier_promote(Tier t) {
    return t == Tier::low ? Tier::medium : Tier::high;
}

// Saturates at low; demotion never removes an entry.
constexpr Tier tier_demote(Tier t) {
    return t == Tier::high ? Tier::medium : Tier::low;
}

constexpr int tier_rank(Tier t) { return static_cast<int>(t); }

std::string_view to_string(Tier t);
Tier tier_from_string(std::string_view s);

enum class Source { confirmed, emerging };
std::string_view to_string(Source s);
Source source_from_string(std::string_view s);

// Trim, case-fold, collapse internal whitespace. Throws DataError when
// nothing is left.
std::string normalize_attribute(std::string_view raw);

// ---------------------------------------------------------------------------
// Policy skill
// ---------------------------------------------------------------------------

inline constexpr int kDefaultProtectionThreshold = 2;

struct PreferenceEntry {
    std::string attribute;  // normalized label
    Tier tier = Tier::low;
    Source source = Source::confirmed;
    int contradiction_count = 0;
    bool is_protected = false;  // created by StatInit at high tier
    int last_updated_round = 0;

    bool operator==(const PreferenceEntry&) const = default;
};

enum class Section { core_preferences, behavioral_patterns, ranking_criteria };
inline constexpr Section kAllSections[] = {Section::core_preferences, Section::behavioral_patterns,
                                           Section::ranking_criteria};
std::string_view to_string(Section s);
std::string_view section_heading(Section s);

enum class Origin { global_template, statinit };
std::string_view to_string(Origin o);
Origin origin_from_string(std::string_view s);

struct PolicySkill {
    std::string user_id;
    std::vector<PreferenceEntry> core_preferences;
    std::vector<PreferenceEntry> behavioral_patterns;
    std::vector<PreferenceEntry> ranking_criteria;
    // Free text, one "Key: value" directive per line (Style, Must Include,
    // Tie Breaker, Exploration, ...).
    std::string strategy;
    int revision = 0;
    Origin origin = Origin::statinit;

    std::vector<PreferenceEntry>& section(Section s);
    const std::vector<PreferenceEntry>& section(Section s) const;

    // Looks up a normalized attribute in every section.
    PreferenceEntry* find(std::string_view normalized);
    const PreferenceEntry* find(std::string_view normalized) const;

    std::vector<std::string> attributes() const;
    std::size_t entry_count() const;

    bool operator==(const PolicySkill&) const = default;
};

// Throws DataError on duplicate attributes within a section or an
// un-normalized label.
void validate(const PolicySkill& skill);

// First phrase of the strategy block: the first non-empty line with any
// leading "Label:" removed, cut at the first sentence delimiter.
std::string strategy_first_phrase(std::string_view strategy);

// Markdown view with the section headings used for human inspection.
std::string render_markdown(const PolicySkill& skill);

// ---------------------------------------------------------------------------
// Slim skill
// ---------------------------------------------------------------------------

inline constexpr std::size_t kSlimTokenCap = 50;

struct SlimSkill {
    std::vector<std::string> likes;
    std::string style;
    std::size_t token_count = 0;
    // Set when the source skill had no injection-eligible entry.
    bool degraded = false;

    // `likes: a, b[, c] | style: phrase`; the style part is omitted when
    // style is empty, and an empty slim renders as "".
    std::string render() const;
    void recount() { token_count = whitespace_token_count(render()); }

    bool operator==(const SlimSkill&) const = default;
};

// ---------------------------------------------------------------------------
// Evolution delta
// ---------------------------------------------------------------------------

struct DiffItem {
    std::string attribute;
    std::string note;  // reason or evidence
    // Optional routing tag for discoveries ("pattern" or "criterion").
    std::string section_tag;

    bool operator==(const DiffItem&) const = default;
};

struct SkillDiff {
    std::string analysis;
    std::vector<DiffItem> new_preferences;
    std::vector<DiffItem> reinforced;
    std::vector<DiffItem> weakened;

    bool empty() const { return new_preferences.empty() && reinforced.empty() && weakened.empty(); }
    bool operator==(const SkillDiff&) const = default;
};

// Throws ProtocolError if a normalized attribute appears in more than one
// list.
void validate(const SkillDiff& diff);

// ---------------------------------------------------------------------------
// Catalog, interactions, rankings, facets
// ---------------------------------------------------------------------------

struct Item {
    std::string item_id;
    std::string title;
    std::string description;
    std::map<std::string, std::string> metadata;

    bool operator==(const Item&) const = default;
};

enum class Split { history, warmup, test };
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct InteractionRecord {
    std::string user_id;
    std::string item_id;
    std::int64_t timestamp = 0;
    Split split = Split::history;

    bool operator==(const InteractionRecord&) const = default;
};

enum class RankSource { listwise, pointwise };
std::string_view to_string(RankSource s);

struct RankedEntry {
    std::string item_id;
    std::string rationale;
    bool operator==(const RankedEntry&) const = default;
};

struct RankedList {
    std::vector<RankedEntry> entries;
    RankSource source = RankSource::listwise;

    std::vector<std::string> ids() const;
    // 1-based rank, or nullopt when absent.
    std::optional<std::size_t> rank_of(std::string_view item_id) const;

    bool operator==(const RankedList&) const = default;
};

// True iff `ranking` is a permutation of `candidates`.
bool is_permutation_of(const RankedList& ranking, const std::vector<std::string>& candidates);
// Throws DataError describing the first defect otherwise.
void validate_permutation(const RankedList& ranking, const std::vector<std::string>& candidates);

struct Facet {
    std::string facet;
    double confidence = 0.0;
    std::vector<std::string> supporting_neighbors;

    bool operator==(const Facet&) const = default;
};

// ---------------------------------------------------------------------------
// JSON encoding
// ---------------------------------------------------------------------------

void to_json(json& j, const PreferenceEntry& e);
void from_json(const json& j, PreferenceEntry& e);
void to_json(json& j, const PolicySkill& s);
void from_json(const json& j, PolicySkill& s);
void to_json(json& j, const SlimSkill& s);
void from_json(const json& j, SlimSkill& s);
void to_json(json& j, const DiffItem& d);
void from_json(const json& j, DiffItem& d);
void to_json(json& j, const SkillDiff& d);
void from_json(const json& j, SkillDiff& d);
void to_json(json& j, const Item& i);
void from_json(const json& j, Item& i);
void to_json(json& j, const RankedEntry& e);
void from_json(const json& j, RankedEntry& e);
void to_json(json& j, const RankedList& r);
void from_json(const json& j, RankedList& r);
void to_json(json& j, const Facet& f);
void from_json(const json& j, Facet& f);

}  // namespace skillrec
