#include "skillrec/skill_engine.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "skillrec/errors.hpp"
#include "skillrec/statinit.hpp"

namespace skillrec {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

namespace {

// User ids become directory names; anything outside [A-Za-z0-9._-] is
// percent-encoded so ids cannot escape the store.
std::string encode_user_dir(const std::string& user_id) {
    if (user_id.empty()) throw DataError("empty user id");
    std::string out;
    for (unsigned char c : user_id) {
        if (std::isalnum(c) || c == '-' || c == '_' || (c == '.' && !out.empty())) {
            out.push_back(static_cast<char>(c));
        } else {
            char buf[4];
            std::snprintf(buf, sizeof buf, "%%%02X", c);
            out += buf;
        }
    }
    return out;
}

std::string decode_user_dir(const std::string& name) {
    std::string out;
    for (std::size_t i = 0; i < name.size(); ++i) {
        if (name[i] == '%' && i + 2 < name.size()) {
            out.push_back(static_cast<char>(std::stoi(name.substr(i + 1, 2), nullptr, 16)));
            i += 2;
        } else {
            out.push_back(name[i]);
        }
    }
    return out;
}

fs::path revision_path(const fs::path& user_dir, int revision) {
    return user_dir / "history" / ("skill.r" + std::to_string(revision) + ".json");
}

PolicySkill read_skill(const fs::path& path) {
    try {
        auto skill = json::parse(read_file(path)).get<PolicySkill>();
        validate(skill);
        return skill;
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace

SkillStore::SkillStore(fs::path root, int history_depth) : root_(std::move(root)), history_depth_(history_depth) {
    if (history_depth_ < 1) throw ConfigError("history depth must be >= 1");
    std::error_code ec;
    fs::create_directories(root_ / "users", ec);
    if (ec) throw DataError("cannot create skill store at " + root_.string() + ": " + ec.message());
}

std::mutex& SkillStore::lock_for(const std::string& user_id) const {
    return locks_[fnv1a(user_id) % locks_.size()];
}

fs::path SkillStore::user_dir(const std::string& user_id) const { return root_ / "users" / encode_user_dir(user_id); }

bool SkillStore::exists(const std::string& user_id) const { return fs::exists(user_dir(user_id) / "skill.json"); }

PolicySkill SkillStore::load(const std::string& user_id) const {
    std::lock_guard lock(lock_for(user_id));
    const auto path = user_dir(user_id) / "skill.json";
    if (!fs::exists(path)) throw NotInitialized("no skill stored for user " + user_id);
    return read_skill(path);
}

SaveResult SkillStore::save(const PolicySkill& skill) {
    validate(skill);
    std::lock_guard lock(lock_for(skill.user_id));
    const auto dir = user_dir(skill.user_id);
    if (fs::exists(dir / "frozen")) return SaveResult::rejected_frozen;
    fs::create_directories(dir / "history");
    const auto body = dump_pretty(json(skill));
    write_file_atomic(revision_path(dir, skill.revision), body);
    write_file_atomic(dir / "skill.json", body);
    write_file_atomic(dir / "skill.md", render_markdown(skill));

    std::vector<int> revs;
    for (const auto& entry : fs::directory_iterator(dir / "history")) {
        const auto name = entry.path().filename().string();
        if (name.rfind("skill.r", 0) != 0 || entry.path().extension() != ".json") continue;
        revs.push_back(std::stoi(name.substr(7)));
    }
    std::sort(revs.begin(), revs.end());
    const auto excess = static_cast<std::ptrdiff_t>(revs.size()) - history_depth_;
    for (std::ptrdiff_t i = 0; i < excess; ++i) fs::remove(revision_path(dir, revs[static_cast<std::size_t>(i)]));
    return SaveResult::saved;
}

void SkillStore::freeze(const std::string& user_id) {
    std::lock_guard lock(lock_for(user_id));
    const auto dir = user_dir(user_id);
    fs::create_directories(dir);
    write_file_atomic(dir / "frozen", "frozen\n");
}

void SkillStore::unfreeze(const std::string& user_id) {
    std::lock_guard lock(lock_for(user_id));
    fs::remove(user_dir(user_id) / "frozen");
}

bool SkillStore::is_frozen(const std::string& user_id) const { return fs::exists(user_dir(user_id) / "frozen"); }

std::vector<int> SkillStore::revisions(const std::string& user_id) const {
    std::lock_guard lock(lock_for(user_id));
    std::vector<int> revs;
    const auto hist = user_dir(user_id) / "history";
    if (!fs::exists(hist)) return revs;
    for (const auto& entry : fs::directory_iterator(hist)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("skill.r", 0) == 0 && entry.path().extension() == ".json")
            revs.push_back(std::stoi(name.substr(7)));
    }
    std::sort(revs.begin(), revs.end());
    return revs;
}

PolicySkill SkillStore::load_revision(const std::string& user_id, int revision) const {
    const auto path = revision_path(user_dir(user_id), revision);
    if (!fs::exists(path))
        throw DataError("revision " + std::to_string(revision) + " of user " + user_id + " is not retained");
    return read_skill(path);
}

std::vector<std::string> SkillStore::users() const {
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(root_ / "users")) {
        if (entry.is_directory() && fs::exists(entry.path() / "skill.json"))
            out.push_back(decode_user_dir(entry.path().filename().string()));
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string directory_hash(const fs::path& dir) {
    Fnv1a h;
    if (!fs::exists(dir)) return h.hex();
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        const auto rel = fs::relative(f, dir).generic_string();
        h.update(rel);
        h.update_u64(rel.size());
        const auto bytes = read_file(f);
        h.update(bytes);
        h.update_u64(bytes.size());
    }
    return h.hex();
}

std::string SkillStore::content_hash() const { return directory_hash(root_); }

std::string SkillStore::user_content_hash(const std::string& user_id) const {
    std::lock_guard lock(lock_for(user_id));
    return directory_hash(user_dir(user_id));
}

// ---------------------------------------------------------------------------
// Slim extraction
// ---------------------------------------------------------------------------

namespace {

struct Ranked {
    const PreferenceEntry* entry;
    std::size_t position;
};

std::vector<const PreferenceEntry*> ordered_entries(const PolicySkill& skill, bool eligible_only) {
    std::vector<Ranked> all;
    std::size_t pos = 0;
    for (auto s : kAllSections) {
        for (const auto& e : skill.section(s)) {
            if (!eligible_only || e.tier != Tier::low) all.push_back(Ranked{&e, pos});
            ++pos;
        }
    }
    std::stable_sort(all.begin(), all.end(), [](const Ranked& a, const Ranked& b) {
        if (a.entry->tier != b.entry->tier) return tier_rank(a.entry->tier) > tier_rank(b.entry->tier);
        return a.entry->last_updated_round > b.entry->last_updated_round;
    });
    std::vector<const PreferenceEntry*> out;
    for (const auto& r : all) out.push_back(r.entry);
    return out;
}

}  // namespace

std::vector<const PreferenceEntry*> slim_candidates(const PolicySkill& skill) { return ordered_entries(skill, true); }

SlimSkill truncate_slim(SlimSkill slim, std::size_t budget) {
    slim.recount();
    auto over = [&] {
        slim.recount();
        return slim.token_count > budget;
    };
    if (!over()) return slim;
    while (slim.likes.size() > 2 && over()) slim.likes.pop_back();
    if (over()) slim.style.clear();
    if (over() && slim.likes.size() > 1) slim.likes.pop_back();
    if (over()) {
        // "likes:" plus at least one word
        if (budget < 2 || slim.likes.empty()) {
            SlimSkill empty;
            empty.degraded = true;
            return empty;
        }
        auto words = whitespace_tokens(slim.likes.front());
        words.resize(std::min(words.size(), budget - 1));
        slim.likes.front() = join(words, " ");
        slim.recount();
    }
    return slim;
}

SlimSkill extract_slim_deterministic(const PolicySkill& skill, std::size_t budget) {
    SlimSkill slim;
    auto picks = slim_candidates(skill);
    if (picks.empty()) {
        slim.degraded = true;
        picks = ordered_entries(skill, false);
    }
    for (const auto* e : picks) {
        if (slim.likes.size() == kMaxLikes) break;
        slim.likes.push_back(e->attribute);
    }
    slim.style = strategy_first_phrase(skill.strategy);
    const bool degraded = slim.degraded;
    slim = truncate_slim(std::move(slim), std::min(budget, kSlimTokenCap));
    slim.degraded = slim.degraded || degraded;
    return slim;
}

SlimResult extract_slim(const PolicySkill& skill, std::size_t budget, Gateway* gateway, int sequence,
                        CallStats* stats) {
    SlimResult out;
    if (!gateway) {
        out.slim = extract_slim_deterministic(skill, budget);
        return out;
    }
    Bindings b{{"user_id", skill.user_id},
               {"full_skill", render_markdown(skill)},
               {"budget", std::to_string(std::min(budget, kSlimTokenCap))}};
    try {
        auto slim = gateway->complete_parsed(TemplateName::extract, b, sequence, parse_slim, stats);
        out.slim = truncate_slim(std::move(slim), std::min(budget, kSlimTokenCap));
        out.from_model = true;
    } catch (const ParseError&) {
        out.slim = extract_slim_deterministic(skill, budget);
        out.fell_back = true;
    }
    return out;
}

std::string render_injection(const PolicySkill& skill, const SlimSkill& slim, std::size_t budget) {
    std::string text = slim.render();
    if (budget <= kSlimTokenCap) return text;
    std::size_t used = whitespace_token_count(text);
    std::set<std::string> seen;
    for (const auto& l : slim.likes) seen.insert(to_lower(l));

    std::vector<std::string> lines;
    for (const auto* e : ordered_entries(skill, false)) {
        if (seen.count(e->attribute)) continue;
        lines.push_back("- " + e->attribute + " (" + std::string(to_string(e->tier)) + ")");
    }
    std::istringstream strategy(skill.strategy);
    for (std::string line; std::getline(strategy, line);) {
        if (!trim(line).empty()) lines.push_back(trim(line));
    }
    for (const auto& line : lines) {
        const auto n = whitespace_token_count(line);
        if (used + n > budget) break;
        text += "\n" + line;
        used += n;
    }
    return text;
}

// ---------------------------------------------------------------------------
// Evolution
// ---------------------------------------------------------------------------

std::vector<std::string> build_contrastive_input(const RankedList& ranking, const std::string& positive) {
    if (!ranking.rank_of(positive)) throw DataError("positive item " + positive + " is not in the ranking");
    std::vector<std::string> out;
    for (auto it = ranking.entries.rbegin(); it != ranking.entries.rend(); ++it) {
        if (it->item_id != positive) out.push_back(it->item_id);
    }
    return out;
}

std::string format_item_for_prompt(const Item& item, std::size_t description_chars) {
    std::string out = "[" + item.item_id + "] " + item.title;
    if (!item.metadata.empty()) {
        std::vector<std::string> parts;
        for (const auto& [k, v] : item.metadata) parts.push_back(k + ": " + v);
        out += " | " + join(parts, "; ");
    }
    if (description_chars > 0 && !item.description.empty()) {
        auto text = join(description_paragraphs(item.description), " ");
        if (text.size() > description_chars) text = text.substr(0, description_chars) + "...";
        if (!text.empty()) out += " | " + text;
    }
    return out;
}

std::string format_facets(const std::vector<Facet>& facets, std::size_t per_facet_chars) {
    if (facets.empty()) return "- (no facets)";
    std::string out;
    for (const auto& f : facets) {
        auto text = f.facet.size() > per_facet_chars ? f.facet.substr(0, per_facet_chars) : f.facet;
        char conf[16];
        std::snprintf(conf, sizeof conf, "%.2f", f.confidence);
        if (!out.empty()) out += "\n";
        out += "- " + text + " (confidence " + conf + ")";
    }
    return out;
}

bool is_avoidance_rule(std::string_view a) {
    static constexpr std::string_view prefixes[] = {"avoid", "no ", "not ", "never ", "dislike", "don't ", "do not ",
                                                    "must avoid", "hates ", "skip ", "exclude"};
    for (auto p : prefixes) {
        if (a.substr(0, p.size()) == p) return true;
    }
    return a.find(" avoid") != std::string_view::npos || a.find("avoidance") != std::string_view::npos;
}

EvolveResult sanitize_diff(const PolicySkill& skill, SkillDiff diff) {
    EvolveResult out;
    out.diff.analysis = diff.analysis;
    std::set<std::string> taken;

    auto normalize = [&](DiffItem& d, const char* list) {
        try {
            d.attribute = normalize_attribute(d.attribute);
            return true;
        } catch (const DataError&) {
            out.violations.push_back(std::string(list) + ": dropped empty attribute");
            return false;
        }
    };

    std::vector<DiffItem> reclassified;
    for (auto& d : diff.reinforced) {
        if (!normalize(d, "reinforced")) continue;
        if (is_avoidance_rule(d.attribute)) {
            out.violations.push_back("reinforced: stripped avoidance rule '" + d.attribute + "'");
            continue;
        }
        if (!skill.find(d.attribute)) {
            out.violations.push_back("reinforced: unknown attribute '" + d.attribute + "' reclassified as discovery");
            reclassified.push_back(std::move(d));
            continue;
        }
        if (taken.insert(d.attribute).second) out.diff.reinforced.push_back(std::move(d));
    }
    for (auto& d : diff.weakened) {
        if (!normalize(d, "weakened")) continue;
        if (trim(d.note).empty()) {
            out.violations.push_back("weakened: '" + d.attribute + "' stripped, no contradiction stated");
            continue;
        }
        if (!skill.find(d.attribute)) {
            out.violations.push_back("weakened: unknown attribute '" + d.attribute + "' stripped");
            continue;
        }
        if (taken.insert(d.attribute).second) out.diff.weakened.push_back(std::move(d));
    }
    auto add_discovery = [&](DiffItem& d) {
        if (is_avoidance_rule(d.attribute)) {
            out.violations.push_back("new_preferences: stripped avoidance rule '" + d.attribute + "'");
            return;
        }
        if (taken.insert(d.attribute).second) out.diff.new_preferences.push_back(std::move(d));
    };
    for (auto& d : diff.new_preferences) {
        if (normalize(d, "new_preferences")) add_discovery(d);
    }
    for (auto& d : reclassified) add_discovery(d);
    validate(out.diff);
    return out;
}

namespace {

Bindings evolve_bindings(const EvolveInput& in) {
    if (!in.skill || !in.positive) throw ConfigError("evolve: skill and positive item are required");
    std::string unchosen;
    for (std::size_t i = 0; i < in.unchosen.size(); ++i) {
        if (!unchosen.empty()) unchosen += "\n";
        unchosen += std::to_string(i + 1) + ". " + format_item_for_prompt(*in.unchosen[i]);
    }
    if (unchosen.empty()) unchosen = "(none)";
    return Bindings{{"user_id", in.skill->user_id},
                    {"current_skill", render_markdown(*in.skill)},
                    {"positive_item", format_item_for_prompt(*in.positive)},
                    {"unchosen_items", unchosen},
                    {"formatted_facets", format_facets(in.facets)}};
}

}  // namespace

EvolveResult evolve_incremental(Gateway& gateway, const EvolveInput& input, CallStats* stats) {
    const auto b = evolve_bindings(input);
    auto parsed = gateway.complete_parsed(TemplateName::cot_incremental, b, input.sequence, parse_skill_diff, stats);
    auto out = sanitize_diff(*input.skill, std::move(parsed.diff));
    out.violations.insert(out.violations.begin(), parsed.notes.begin(), parsed.notes.end());
    return out;
}

PolicySkill evolve_full_replacement(Gateway& gateway, const EvolveInput& input, int round, CallStats* stats) {
    const auto b = evolve_bindings(input);
    auto skill =
        gateway.complete_parsed(TemplateName::cot_full_replacement, b, input.sequence, parse_policy_skill, stats);
    skill.user_id = input.skill->user_id;
    skill.revision = input.skill->revision + 1;
    skill.origin = input.skill->origin;
    for (auto s : kAllSections) {
        for (auto& e : skill.section(s)) {
            e.is_protected = false;
            e.contradiction_count = 0;
            e.last_updated_round = round;
        }
    }
    validate(skill);
    return skill;
}

namespace {

Section section_for_tag(std::string_view tag) {
    const auto t = to_lower(trim(tag));
    if (t == "pattern" || t == "behavioral" || t == "behavioral_patterns") return Section::behavioral_patterns;
    if (t == "criterion" || t == "criteria" || t == "ranking_criteria") return Section::ranking_criteria;
    return Section::core_preferences;
}

// Normalized, deduplicated (first wins), sorted by label.
std::vector<DiffItem> canonical(const std::vector<DiffItem>& items) {
    std::map<std::string, DiffItem> by_label;
    for (const auto& d : items) {
        DiffItem c = d;
        c.attribute = normalize_attribute(d.attribute);
        by_label.try_emplace(c.attribute, std::move(c));
    }
    std::vector<DiffItem> out;
    for (auto& [_, d] : by_label) out.push_back(std::move(d));
    return out;
}

void reinforce(PreferenceEntry& e, int round) {
    e.tier = tier_promote(e.tier);
    e.contradiction_count = 0;
    e.last_updated_round = round;
}

}  // namespace

PolicySkill merge(const PolicySkill& skill, const SkillDiff& diff, int round, const MergeOptions& options) {
    validate(diff);
    PolicySkill out = skill;
    out.revision = skill.revision + 1;

    std::vector<DiffItem> discoveries = canonical(diff.new_preferences);
    for (const auto& d : canonical(diff.reinforced)) {
        if (auto* e = out.find(d.attribute)) {
            reinforce(*e, round);
        } else {
            discoveries.push_back(d);
        }
    }
    for (const auto& d : canonical(diff.weakened)) {
        auto* e = out.find(d.attribute);
        if (!e) continue;
        if (e->is_protected && e->contradiction_count + 1 < options.protection_threshold) {
            ++e->contradiction_count;
        } else {
            e->tier = tier_demote(e->tier);
            e->contradiction_count = 0;
        }
        e->last_updated_round = round;
    }
    discoveries = canonical(discoveries);
    for (const auto& d : discoveries) {
        if (auto* e = out.find(d.attribute)) {
            reinforce(*e, round);
            continue;
        }
        PreferenceEntry e;
        e.attribute = d.attribute;
        e.tier = Tier::low;
        e.source = Source::emerging;
        e.last_updated_round = round;
        out.section(section_for_tag(d.section_tag)).push_back(std::move(e));
    }
    return out;
}

}  // namespace skillrec
