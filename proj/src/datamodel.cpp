#include "skillrec/datamodel.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "skillrec/errors.hpp"

namespace skillrec {

std::string_view to_string(Tier t) {
    switch (t) {
        case Tier::low: return "low";
        case Tier::medium: return "medium";
        case Tier::high: return "high";
    }
    return "low";
}

Tier tier_from_string(std::string_view s) {
    const auto v = to_lower(trim(s));
    if (v == "low") return Tier::low;
    if (v == "medium") return Tier::medium;
    if (v == "high") return Tier::high;
    throw DataError("unknown confidence tier '" + std::string(s) + "'");
}

std::string_view to_string(Source s) { return s == Source::confirmed ? "confirmed" : "emerging"; }

Source source_from_string(std::string_view s) {
    const auto v = to_lower(trim(s));
    if (v == "confirmed") return Source::confirmed;
    if (v == "emerging") return Source::emerging;
    throw DataError("unknown source '" + std::string(s) + "'");
}

std::string normalize_attribute(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (unsigned char c : raw) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    if (out.empty()) throw DataError("empty attribute");
    return out;
}

std::string_view to_string(Section s) {
    switch (s) {
        case Section::core_preferences: return "core_preferences";
        case Section::behavioral_patterns: return "behavioral_patterns";
        case Section::ranking_criteria: return "ranking_criteria";
    }
    return "core_preferences";
}

std::string_view section_heading(Section s) {
    switch (s) {
        case Section::core_preferences: return "Core Preferences";
        case Section::behavioral_patterns: return "Behavioral Patterns";
        case Section::ranking_criteria: return "Ranking Criteria";
    }
    return "Core Preferences";
}

std::string_view to_string(Origin o) { return o == Origin::statinit ? "statinit" : "global_template"; }

Origin origin_from_string(std::string_view s) {
    if (s == "statinit") return Origin::statinit;
    if (s == "global_template") return Origin::global_template;
    throw DataError("unknown skill origin '" + std::string(s) + "'");
}

std::vector<PreferenceEntry>& PolicySkill::section(Section s) {
    switch (s) {
        case Section::behavioral_patterns: return behavioral_patterns;
        case Section::ranking_criteria: return ranking_criteria;
        default: return core_preferences;
    }
}

const std::vector<PreferenceEntry>& PolicySkill::section(Section s) const {
    return const_cast<PolicySkill*>(this)->section(s);
}

PreferenceEntry* PolicySkill::find(std::string_view normalized) {
    for (auto s : kAllSections) {
        for (auto& e : section(s)) {
            if (e.attribute == normalized) return &e;
        }
    }
    return nullptr;
}

const PreferenceEntry* PolicySkill::find(std::string_view normalized) const {
    return const_cast<PolicySkill*>(this)->find(normalized);
}

std::vector<std::string> PolicySkill::attributes() const {
    std::vector<std::string> out;
    for (auto s : kAllSections) {
        for (const auto& e : section(s)) out.push_back(e.attribute);
    }
    return out;
}

std::size_t PolicySkill::entry_count() const {
    return core_preferences.size() + behavioral_patterns.size() + ranking_criteria.size();
}

void validate(const PolicySkill& skill) {
    for (auto s : kAllSections) {
        std::set<std::string> seen;
        for (const auto& e : skill.section(s)) {
            if (e.attribute.empty() || normalize_attribute(e.attribute) != e.attribute)
                throw DataError("skill " + skill.user_id + ": attribute not normalized: '" + e.attribute + "'");
            if (!seen.insert(e.attribute).second)
                throw DataError("skill " + skill.user_id + ": duplicate attribute '" + e.attribute + "' in " +
                                std::string(to_string(s)));
            if (e.contradiction_count < 0)
                throw DataError("skill " + skill.user_id + ": negative contradiction count");
        }
    }
}

std::string strategy_first_phrase(std::string_view strategy) {
    std::istringstream in{std::string(strategy)};
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (t.empty()) continue;
        const auto colon = t.find(':');
        if (colon != std::string::npos) {
            const auto label = t.substr(0, colon);
            // Short labels only; a colon deep inside a sentence is content.
            if (whitespace_token_count(label) <= 3) t = trim(t.substr(colon + 1));
        }
        if (t.empty()) continue;
        const auto cut = t.find_first_of(".;");
        return trim(t.substr(0, cut));
    }
    return {};
}

std::string render_markdown(const PolicySkill& skill) {
    std::ostringstream out;
    out << "# Policy Skill: " << skill.user_id << "\n\n";
    out << "Revision: " << skill.revision << " | Origin: " << to_string(skill.origin) << "\n";
    for (auto s : kAllSections) {
        out << "\n### " << section_heading(s) << "\n";
        const auto& entries = skill.section(s);
        if (entries.empty()) out << "- (none)\n";
        for (const auto& e : entries) {
            out << "- " << e.attribute << " (Confidence: " << to_string(e.tier)
                << ", Source: " << to_string(e.source) << ")";
            if (e.is_protected) out << " [protected]";
            if (e.contradiction_count > 0) out << " [contradictions: " << e.contradiction_count << "]";
            out << "\n";
        }
    }
    out << "\n### EVOLVABLE Strategy\n";
    out << (skill.strategy.empty() ? std::string("(none)") : skill.strategy);
    if (skill.strategy.empty() || skill.strategy.back() != '\n') out << "\n";
    return out.str();
}

std::string SlimSkill::render() const {
    if (likes.empty() && style.empty()) return {};
    std::string out = "likes: " + join(likes, ", ");
    if (!style.empty()) out += " | style: " + style;
    return out;
}

void validate(const SkillDiff& diff) {
    std::map<std::string, std::string> owner;
    auto claim = [&](const std::vector<DiffItem>& items, const char* list) {
        std::set<std::string> local;
        for (const auto& item : items) {
            const auto key = normalize_attribute(item.attribute);
            if (!local.insert(key).second) continue;
            auto [it, inserted] = owner.emplace(key, list);
            if (!inserted)
                throw ProtocolError("attribute '" + key + "' appears in both " + it->second + " and " + list);
        }
    };
    claim(diff.new_preferences, "new_preferences");
    claim(diff.reinforced, "reinforced");
    claim(diff.weakened, "weakened");
}

std::string_view to_string(Split s) {
    switch (s) {
        case Split::history: return "history";
        case Split::warmup: return "warmup";
        case Split::test: return "test";
    }
    return "history";
}

Split split_from_string(std::string_view s) {
    if (s == "history") return Split::history;
    if (s == "warmup") return Split::warmup;
    if (s == "test") return Split::test;
    throw DataError("unknown split label '" + std::string(s) + "'");
}

std::string_view to_string(RankSource s) { return s == RankSource::listwise ? "listwise" : "pointwise"; }

std::vector<std::string> RankedList::ids() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.item_id);
    return out;
}

std::optional<std::size_t> RankedList::rank_of(std::string_view item_id) const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].item_id == item_id) return i + 1;
    }
    return std::nullopt;
}

bool is_permutation_of(const RankedList& ranking, const std::vector<std::string>& candidates) {
    if (ranking.entries.size() != candidates.size()) return false;
    std::multiset<std::string> a(candidates.begin(), candidates.end());
    std::multiset<std::string> b;
    for (const auto& e : ranking.entries) b.insert(e.item_id);
    if (a != b) return false;
    return std::set<std::string>(candidates.begin(), candidates.end()).size() == candidates.size();
}

void validate_permutation(const RankedList& ranking, const std::vector<std::string>& candidates) {
    std::set<std::string> expected(candidates.begin(), candidates.end());
    std::set<std::string> seen;
    for (const auto& e : ranking.entries) {
        if (!expected.count(e.item_id)) throw DataError("ranking contains unknown id '" + e.item_id + "'");
        if (!seen.insert(e.item_id).second) throw DataError("ranking repeats id '" + e.item_id + "'");
    }
    for (const auto& c : expected) {
        if (!seen.count(c)) throw DataError("ranking omits candidate '" + c + "'");
    }
}

// --- JSON -----------------------------------------------------------------

void to_json(json& j, const PreferenceEntry& e) {
    j = json{{"attribute", e.attribute},
             {"tier", to_string(e.tier)},
             {"source", to_string(e.source)},
             {"contradiction_count", e.contradiction_count},
             {"protected", e.is_protected},
             {"last_updated_round", e.last_updated_round}};
}

void from_json(const json& j, PreferenceEntry& e) {
    e.attribute = normalize_attribute(j.at("attribute").get<std::string>());
    e.tier = tier_from_string(j.at("tier").get<std::string>());
    e.source = source_from_string(j.value("source", std::string("confirmed")));
    e.contradiction_count = j.value("contradiction_count", 0);
    e.is_protected = j.value("protected", false);
    e.last_updated_round = j.value("last_updated_round", 0);
    if (e.contradiction_count < 0) throw DataError("negative contradiction_count");
}

void to_json(json& j, const PolicySkill& s) {
    j = json{{"user_id", s.user_id},
             {"core_preferences", s.core_preferences},
             {"behavioral_patterns", s.behavioral_patterns},
             {"ranking_criteria", s.ranking_criteria},
             {"strategy", s.strategy},
             {"revision", s.revision},
             {"origin", to_string(s.origin)}};
}

void from_json(const json& j, PolicySkill& s) {
    s.user_id = j.value("user_id", std::string{});
    s.core_preferences = j.value("core_preferences", std::vector<PreferenceEntry>{});
    s.behavioral_patterns = j.value("behavioral_patterns", std::vector<PreferenceEntry>{});
    s.ranking_criteria = j.value("ranking_criteria", std::vector<PreferenceEntry>{});
    s.strategy = j.value("strategy", std::string{});
    s.revision = j.value("revision", 0);
    s.origin = origin_from_string(j.value("origin", std::string("statinit")));
    validate(s);
}

void to_json(json& j, const SlimSkill& s) {
    j = json{{"likes", s.likes}, {"style", s.style}, {"token_count", s.token_count}, {"degraded", s.degraded}};
}

void from_json(const json& j, SlimSkill& s) {
    s.likes = j.at("likes").get<std::vector<std::string>>();
    s.style = j.value("style", std::string{});
    s.degraded = j.value("degraded", false);
    s.recount();
}

void to_json(json& j, const DiffItem& d) {
    j = json{{"attribute", d.attribute}, {"note", d.note}};
    if (!d.section_tag.empty()) j["section"] = d.section_tag;
}

void from_json(const json& j, DiffItem& d) {
    d.attribute = j.at("attribute").get<std::string>();
    d.note = j.value("note", std::string{});
    d.section_tag = j.value("section", std::string{});
}

void to_json(json& j, const SkillDiff& d) {
    j = json{{"analysis", d.analysis},
             {"new_preferences", d.new_preferences},
             {"reinforced", d.reinforced},
             {"weakened", d.weakened}};
}

void from_json(const json& j, SkillDiff& d) {
    d.analysis = j.value("analysis", std::string{});
    d.new_preferences = j.value("new_preferences", std::vector<DiffItem>{});
    d.reinforced = j.value("reinforced", std::vector<DiffItem>{});
    d.weakened = j.value("weakened", std::vector<DiffItem>{});
    validate(d);
}

void to_json(json& j, const Item& i) {
    j = json{{"item_id", i.item_id}, {"title", i.title}, {"description", i.description}, {"metadata", i.metadata}};
}

void from_json(const json& j, Item& i) {
    i.item_id = j.at("item_id").get<std::string>();
    i.title = j.value("title", std::string{});
    i.description = j.value("description", std::string{});
    i.metadata.clear();
    if (auto it = j.find("metadata"); it != j.end() && it->is_object()) {
        for (const auto& [k, v] : it->items()) {
            i.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
        }
    }
}

void to_json(json& j, const RankedEntry& e) { j = json{{"item_id", e.item_id}, {"rationale", e.rationale}}; }

void from_json(const json& j, RankedEntry& e) {
    e.item_id = j.at("item_id").get<std::string>();
    e.rationale = j.value("rationale", std::string{});
}

void to_json(json& j, const RankedList& r) {
    j = json{{"ranking", r.entries}, {"source", to_string(r.source)}};
}

void from_json(const json& j, RankedList& r) {
    r.entries = j.at("ranking").get<std::vector<RankedEntry>>();
    const auto src = j.value("source", std::string("listwise"));
    r.source = src == "pointwise" ? RankSource::pointwise : RankSource::listwise;
}

void to_json(json& j, const Facet& f) {
    j = json{{"facet", f.facet}, {"confidence", f.confidence}, {"supporting_neighbors", f.supporting_neighbors}};
}

void from_json(const json& j, Facet& f) {
    f.facet = j.at("facet").get<std::string>();
    f.confidence = j.at("confidence").get<double>();
    if (!(f.confidence >= 0.0 && f.confidence <= 1.0))
        throw DataError("facet confidence out of [0,1]: " + std::to_string(f.confidence));
    f.supporting_neighbors = j.value("supporting_neighbors", std::vector<std::string>{});
}

}  // namespace skillrec
