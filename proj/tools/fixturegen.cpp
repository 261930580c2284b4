// Generates the test fixtures: a synthetic 50-user structured bundle with
// an oracle script recorded from a simulated responder, and three small
// case datasets with hand-written match scripts.

#include <algorithm>
#include <iostream>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "skillrec/errors.hpp"
#include "skillrec/eval_harness.hpp"

namespace fs = std::filesystem;
using namespace skillrec;

namespace {

void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
    std::string out;
    for (const auto& r : rows) out += r.dump() + "\n";
    write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Synthetic structured bundle
// ---------------------------------------------------------------------------

const std::vector<std::string> kCategories = {"Restaurants", "Cafes", "Bars", "Bakeries"};
const std::vector<std::string> kPrices = {"$", "$$", "$$$", "$$$$"};
const std::vector<std::string> kAmbience = {"casual", "trendy", "romantic", "classy"};
const std::vector<std::string> kCities = {"Phoenix", "Tempe", "Mesa"};
const std::vector<std::string> kNames = {"Copper", "Juniper", "Saguaro", "Harbor", "Olive", "Ember",
                                         "Maple",  "Cobalt",  "Lantern", "Sable",  "Marigold", "Basil"};

struct Venue {
    std::string id;
    int cat, price, amb, city;
    double stars;
};

struct Bundle {
    std::vector<Venue> venues;
    std::vector<json> items, interactions, instructions;
};

Bundle make_bundle(std::size_t n_items, std::size_t n_users) {
    Bundle b;
    std::mt19937_64 rng(20240607);
    auto pick = [&](std::size_t n) { return static_cast<int>(bounded(rng, n)); };
    for (std::size_t i = 0; i < n_items; ++i) {
        Venue v;
        char buf[24];
        std::snprintf(buf, sizeof buf, "v%04zu", i);
        v.id = buf;
        v.cat = static_cast<int>(i % 4);
        v.price = static_cast<int>((i / 4) % 4);
        v.amb = static_cast<int>((i / 16) % 4);
        v.city = static_cast<int>((i / 64) % 3);  // 10 venues per combination
        v.stars = 2.5 + 0.5 * pick(6);
        b.venues.push_back(v);
        const auto title = kNames[i % kNames.size()] + " " + kCategories[v.cat].substr(0, kCategories[v.cat].size() - 1) +
                           " " + std::to_string(i);
        b.items.push_back(json{{"item_id", v.id},
                               {"title", title},
                               {"description", "A " + kAmbience[v.amb] + " spot in " + kCities[v.city] + "."},
                               {"metadata",
                                {{"categories", kCategories[v.cat]},
                                 {"price", kPrices[v.price]},
                                 {"ambience", kAmbience[v.amb]},
                                 {"city", kCities[v.city]},
                                 {"stars", v.stars}}}});
    }

    const std::vector<std::string> phrasing = {
        "Looking for {c} tonight, somewhere that fits my usual taste.",
        "Any {c} you would suggest for this weekend?",
        "I want to try one of the {c} around here.",
        "Recommend {c} for a quick outing.",
    };
    for (std::size_t u = 0; u < n_users; ++u) {
        char buf[24];
        std::snprintf(buf, sizeof buf, "u%02zu", u);
        const std::string user = buf;
        const int fav_cat = pick(4), fav_price = pick(4), fav_amb = pick(4), city = pick(3);
        std::set<std::string> used;
        auto choose = [&](int cat, int c) {
            std::vector<const Venue*> pool;
            for (const auto& v : b.venues) {
                if (v.cat == cat && v.price == fav_price && v.amb == fav_amb && v.city == c && !used.count(v.id))
                    pool.push_back(&v);
            }
            if (pool.empty()) {
                for (const auto& v : b.venues) {
                    if (v.cat == cat && v.price == fav_price && v.amb == fav_amb && !used.count(v.id)) pool.push_back(&v);
                }
            }
            if (pool.empty()) throw std::runtime_error("fixture catalog too small");
            const auto* v = pool[bounded(rng, pool.size())];
            used.insert(v->id);
            return v;
        };
        std::int64_t ts = 1700000000 + static_cast<std::int64_t>(u) * 1000;
        for (int k = 0; k < 14; ++k) {
            ts += 86400;
            int cat;
            int c = city;
            if (k < 9) {
                cat = k < 5 ? fav_cat : pick(4);
                if (k >= 6) c = pick(3);
            } else {
                cat = pick(10) < 6 ? fav_cat : pick(4);
            }
            const auto* v = choose(cat, c);
            b.interactions.push_back(json{{"user_id", user}, {"item_id", v->id}, {"ts", ts}});
            if (k >= 9) {
                auto text = phrasing[static_cast<std::size_t>(k + static_cast<int>(u)) % phrasing.size()];
                auto lower = to_lower(kCategories[v->cat]);
                text.replace(text.find("{c}"), 3, lower);
                b.instructions.push_back(json{{"user_id", user}, {"ts", ts}, {"text", text}});
            }
        }
    }
    return b;
}

// ---------------------------------------------------------------------------
// Simulated responder
// ---------------------------------------------------------------------------

PolicySkill parse_skill_markdown(const std::string& text, const std::string& user_id) {
    static const std::regex entry_re(R"(^- (.+) \(Confidence: (low|medium|high), Source: (confirmed|emerging)\)(.*)$)");
    PolicySkill skill;
    skill.user_id = user_id;
    std::istringstream in(text);
    std::string line;
    std::vector<PreferenceEntry>* current = nullptr;
    bool in_strategy = false;
    while (std::getline(in, line)) {
        if (line.rfind("### ", 0) == 0) {
            current = nullptr;
            in_strategy = line.find("Strategy") != std::string::npos;
            for (auto s : kAllSections) {
                if (line.substr(4) == section_heading(s)) current = &skill.section(s);
            }
            continue;
        }
        if (in_strategy) {
            skill.strategy += line + "\n";
            continue;
        }
        std::smatch m;
        if (current && std::regex_match(line, m, entry_re)) {
            PreferenceEntry e;
            e.attribute = m[1].str();
            e.tier = tier_from_string(m[2].str());
            e.source = source_from_string(m[3].str());
            e.is_protected = m[4].str().find("[protected]") != std::string::npos;
            current->push_back(e);
        }
    }
    return skill;
}

std::vector<std::string> bracket_ids(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    static const std::regex id_re(R"(^\s*(?:\d+\.\s*)?\[([^\]]+)\])");
    while (std::getline(in, line)) {
        std::smatch m;
        if (std::regex_search(line, m, id_re)) out.push_back(m[1].str());
    }
    return out;
}

class Simulator {
public:
    Simulator(const Dataset& data, DomainParserProfile profile) : data_(data), profile_(std::move(profile)) {}

    std::string operator()(const LlmRequest& r) const {
        switch (r.template_name) {
            case TemplateName::synth: return synth(r.bindings);
            case TemplateName::extract: return extract(r.bindings);
            case TemplateName::list: return list(r.bindings);
            case TemplateName::point: return point(r.bindings);
            case TemplateName::cot_incremental: return cot(r.bindings);
            case TemplateName::cot_full_replacement: return replacement(r.bindings);
            case TemplateName::global_skill: break;
        }
        throw BackendError("simulator has no responder for " + std::string(to_string(r.template_name)));
    }

private:
    std::vector<std::string> signals(const std::string& id) const {
        std::vector<std::string> out;
        for (const auto& s : parse_item_signals(data_.catalog.at(id), profile_)) out.push_back(s.attribute);
        return out;
    }

    static std::size_t overlap(const std::vector<std::string>& attrs, const std::string& text) {
        const auto norm = normalize_for_matching(text);
        std::size_t n = 0;
        for (const auto& a : attrs) n += contains_keyword(norm, normalize_for_matching(a));
        return n;
    }

    std::string category_of(const std::string& id) const {
        return to_lower(data_.catalog.at(id).metadata.at("categories"));
    }

    std::string synth(const Bindings& b) const {
        const auto rows = json::parse(b.at("neighbor_table_json"));
        std::map<std::string, std::vector<std::string>> by_city, by_cat;
        for (const auto& row : rows) {
            const auto node = row.at("id").get<std::string>();
            if (node.rfind("item:", 0) != 0) continue;
            const auto& item = data_.catalog.at(node.substr(5));
            by_city[item.metadata.at("city")].push_back(node);
            by_cat[item.metadata.at("categories")].push_back(node);
        }
        auto top = [](const std::map<std::string, std::vector<std::string>>& m) {
            const std::pair<const std::string, std::vector<std::string>>* best = nullptr;
            for (const auto& kv : m) {
                if (!best || kv.second.size() > best->second.size()) best = &kv;
            }
            return best;
        };
        json facets = json::array();
        if (const auto* c = top(by_city))
            facets.push_back({{"facet", "Often in the " + c->first + " area"}, {"confidence", 0.8}, {"supporting_neighbors", c->second}});
        if (const auto* c = top(by_cat))
            facets.push_back({{"facet", "Leans toward " + c->first}, {"confidence", 0.6}, {"supporting_neighbors", c->second}});
        facets.push_back({{"facet", "Occasionally goes out late"}, {"confidence", 0.2}, {"supporting_neighbors", json::array()}});
        return json{{"facets", facets}}.dump();
    }

    std::string extract(const Bindings& b) const {
        const auto skill = parse_skill_markdown(b.at("full_skill"), b.at("user_id"));
        return extract_slim_deterministic(skill, std::stoul(b.at("budget"))).render();
    }

    struct Score {
        std::size_t instruction = 0, slim = 0, facets = 0;
    };

    Score score(const std::string& id, const Bindings& b) const {
        const auto attrs = signals(id);
        Score s;
        s.instruction = contains_keyword(normalize_for_matching(b.at("instruction")), category_of(id));
        const auto& slim = b.at("slim_skill");
        s.slim = slim == "(none)" ? 0 : overlap(attrs, slim);
        s.facets = overlap(attrs, b.at("formatted_facets"));
        return s;
    }

    std::string list(const Bindings& b) const {
        const auto ids = bracket_ids(b.at("formatted_candidates"));
        std::vector<std::pair<std::size_t, std::size_t>> keyed;  // (score, position)
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto s = score(ids[i], b);
            keyed.emplace_back(s.instruction * 100 + s.slim * 10 + s.facets, i);
        }
        std::stable_sort(keyed.begin(), keyed.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
        json ranking = json::array();
        for (const auto& [sc, i] : keyed) {
            std::string why = sc >= 100 ? "matches the request" : "weaker fit for the request";
            if (sc % 100 >= 10) why += "; fits the profile";
            ranking.push_back({{"item_id", ids[i]}, {"rationale", why}});
        }
        return json{{"ranking", ranking}}.dump();
    }

    std::string point(const Bindings& b) const {
        const auto ids = bracket_ids(b.at("candidate"));
        if (ids.empty()) return "Score: 5";
        // Coarse scale on purpose: most candidates land on the same score.
        return json{{"score", score(ids.front(), b).instruction ? 7 : 3}}.dump();
    }

    std::string cot(const Bindings& b) const {
        const auto skill = parse_skill_markdown(b.at("current_skill"), b.at("user_id"));
        const auto pos = bracket_ids(b.at("positive_item"));
        const auto unchosen = bracket_ids(b.at("unchosen_items"));
        json reinforced = json::array(), discovered = json::array(), weakened = json::array();
        std::set<std::string> positive_attrs;
        for (const auto& a : signals(pos.front())) {
            positive_attrs.insert(a);
            if (skill.find(a))
                reinforced.push_back({{"attribute", a}, {"evidence", "the chosen venue has it"}});
            else
                discovered.push_back({{"attribute", a}, {"reason", "seen in the chosen venue"}});
        }
        if (!unchosen.empty()) {
            const auto near_miss = unchosen.back();
            const auto cat = category_of(near_miss);
            if (skill.find(cat) && !positive_attrs.count(cat))
                weakened.push_back({{"attribute", cat}, {"reason", "the closest alternative was passed over"}});
        }
        return json{{"analysis", "compared the chosen venue with the near misses"},
                    {"incremental_update",
                     {{"new_preferences", discovered}, {"reinforced", reinforced}, {"weakened", weakened}}}}
            .dump();
    }

    std::string replacement(const Bindings& b) const {
        const auto pos = bracket_ids(b.at("positive_item"));
        json core = json::array();
        for (const auto& a : signals(pos.front())) core.push_back({{"attribute", a}, {"confidence", "medium"}, {"source", "emerging"}});
        return json{{"core_preferences", core},
                    {"behavioral_patterns", json::array()},
                    {"ranking_criteria", json::array()},
                    {"strategy", "Style: recent-choice follower\nTie Breaker: closest match to the latest choice"}}
            .dump();
    }

    const Dataset& data_;
    DomainParserProfile profile_;
};

// ---------------------------------------------------------------------------
// Case datasets (reconstructed from the published case studies)
// ---------------------------------------------------------------------------

struct CaseItem {
    std::string id, title, description;
    json metadata = json::object();
};

json item_json(const CaseItem& c) {
    json j{{"item_id", c.id}, {"title", c.title}, {"description", c.description}};
    if (!c.metadata.empty()) j["metadata"] = c.metadata;
    return j;
}

json ranking_with_first(const std::string& first, const std::vector<CaseItem>& items, const std::set<std::string>& skip) {
    json ranking = json::array();
    ranking.push_back({{"item_id", first}, {"rationale", "best fit"}});
    for (const auto& it : items) {
        if (it.id == first || skip.count(it.id)) continue;
        ranking.push_back({{"item_id", it.id}, {"rationale", "less aligned"}});
    }
    return json{{"ranking", ranking}};
}

struct CaseSpec {
    std::string name;
    std::string user = "user-0";
    std::vector<CaseItem> items;
    std::vector<std::string> history, warmup, test;
    std::vector<std::string> instructions;  // one per warmup + test event
    std::string slim_response;
    std::vector<json> cot_responses;  // one per warmup round
    json facets;
};

void write_case(const fs::path& dir, const CaseSpec& c) {
    fs::create_directories(dir);
    std::vector<json> items;
    for (const auto& it : c.items) items.push_back(item_json(it));
    std::vector<json> interactions, instructions;
    std::int64_t ts = 1600000000;
    std::size_t k = 0;
    auto add = [&](const std::vector<std::string>& ids, const char* split, bool instruct) {
        for (const auto& id : ids) {
            ts += 3600;
            interactions.push_back({{"user_id", c.user}, {"item_id", id}, {"ts", ts}, {"split", split}});
            if (instruct) instructions.push_back({{"user_id", c.user}, {"ts", ts}, {"text", c.instructions.at(k++)}});
        }
    };
    add(c.history, "history", false);
    add(c.warmup, "warmup", true);
    add(c.test, "test", true);
    write_jsonl(dir / "items.jsonl", items);
    write_jsonl(dir / "interactions.jsonl", interactions);
    write_jsonl(dir / "instructions.jsonl", instructions);
    write_file_atomic(dir / "manifest.json", dump_pretty(json{{"items", items.size()},
                                                              {"interactions", interactions.size()},
                                                              {"instructions", instructions.size()},
                                                              {"users", 1}}));

    std::set<std::string> interacted(c.history.begin(), c.history.end());
    interacted.insert(c.warmup.begin(), c.warmup.end());
    interacted.insert(c.test.begin(), c.test.end());
    const json who{{"user_id", c.user}};
    std::vector<json> script;
    script.push_back({{"template", "synth"}, {"match", who}, {"response", c.facets.dump()}});
    script.push_back({{"template", "extract"}, {"match", who}, {"response", c.slim_response}});
    for (std::size_t r = 0; r < c.warmup.size(); ++r) {
        auto skip = interacted;
        skip.erase(c.warmup[r]);
        const int seq = static_cast<int>(r + 1);
        script.push_back({{"template", "list"}, {"match", who}, {"seq", seq},
                          {"response", ranking_with_first(c.warmup[r], c.items, skip).dump()}});
        script.push_back({{"template", "cot_incremental"}, {"match", who}, {"seq", seq},
                          {"response", c.cot_responses.at(r).dump()}});
    }
    for (std::size_t j = 0; j < c.test.size(); ++j) {
        auto skip = interacted;
        skip.erase(c.test[j]);
        script.push_back({{"template", "list"}, {"match", who}, {"seq", static_cast<int>(test_round(j))},
                          {"response", ranking_with_first(c.test[j], c.items, skip).dump()}});
    }
    write_jsonl(dir / "oracle.jsonl", script);
}

json venue(const std::string& cats, double stars, const std::string& price = "$$", const std::string& amb = "casual",
           const std::string& city = "Las Vegas") {
    return json{{"categories", cats}, {"stars", stars}, {"price", price}, {"ambience", amb}, {"city", city}};
}

CaseSpec yelp_case() {
    CaseSpec c;
    c.name = "yelp";
    const std::vector<std::string> names = {"Desert Grill", "Strip Side Diner", "Neon Noodle", "Silver Spoon Bistro",
                                            "Canyon Tacos", "Fremont Kitchen", "Sunset Plates"};
    for (std::size_t i = 0; i < names.size(); ++i) {
        char id[24];
        std::snprintf(id, sizeof id, "y%02zu", i + 1);
        c.items.push_back({id, names[i], "Neighborhood restaurant.", venue("Restaurants", i == 3 ? 4.5 : 3.5)});
        c.history.push_back(id);
    }
    c.items.push_back({"y08", "Smoke & Leaf Lounge", "Cigar lounge with a walk-in humidor.",
                       venue("Premium Tobacco Products", 3.0)});
    c.history.push_back("y08");
    c.items.push_back({"y09", "Garden Table", "Seasonal plates with strong reviews.", venue("Restaurants", 4.5)});
    c.items.push_back({"y10", "Saffron House", "North Indian curries and tandoor.", venue("Restaurants, Indian", 4.0)});
    c.items.push_back({"y11", "Copper Pot", "Comfort food kitchen.", venue("Restaurants", 4.0)});
    c.warmup = {"y09", "y10"};
    c.test = {"y11"};
    const std::vector<std::pair<std::string, json>> others = {
        {"Velvet Room", venue("Nightlife, Bars", 3.5, "$$$", "trendy")},
        {"Mirage Spa", venue("Beauty & Spas", 4.5, "$$$$", "classy")},
        {"Glow Bowling", venue("Active Life", 3.0, "$$", "casual", "Henderson")},
        {"Sweet Crumb", venue("Bakeries", 4.0, "$", "casual")},
        {"Pixel Arcade", venue("Arts & Entertainment", 3.5, "$", "trendy")},
        {"Blue Agave Bar", venue("Bars", 3.0, "$$", "casual", "Henderson")},
        {"Crystal Nails", venue("Beauty & Spas", 4.0, "$$", "classy")},
        {"Tee Time Golf", venue("Active Life", 4.5, "$$$", "classy", "Henderson")},
        {"Daily Grind", venue("Coffee & Tea", 3.5, "$", "casual")},
    };
    for (std::size_t i = 0; i < others.size(); ++i) {
        char id[24];
        std::snprintf(id, sizeof id, "y%02zu", i + 12);
        c.items.push_back({id, others[i].first, "Local business.", others[i].second});
    }
    c.instructions = {"Somewhere well reviewed for dinner with friends.",
                      "I feel like trying a new cuisine tonight.",
                      "A relaxed place to eat near home."};
    c.slim_response = "likes: Restaurants, Food, $$ price range, casual ambience";
    c.facets = json{{"facets", {{{"facet", "Dines out on the Las Vegas Strip"}, {"confidence", 0.8}}}}};
    c.cot_responses = {
        json{{"analysis", "The chosen restaurant is rated 4.5 while the skipped ones are rated lower."},
             {"incremental_update",
              {{"new_preferences", json::array()},
               {"reinforced", {{{"attribute", "high-rated venues (4+ stars)"}, {"evidence", "picked a 4.5-star venue"}}}},
               {"weakened", json::array()}}}},
        json{{"analysis", "A 4-star Indian restaurant won over bars and spas; the earlier cigar lounge visit hints at tobacco interest."},
             {"incremental_update",
              {{"new_preferences",
                {{{"attribute", "Indian cuisine"}, {"reason", "chose an Indian restaurant"}},
                 {{"attribute", "tobacco shops"}, {"reason", "history includes a cigar lounge"}}}},
               {"reinforced", {{{"attribute", "high-rated venues (4+ stars)"}, {"evidence", "another 4+ star pick"}}}},
               {"weakened", json::array()}}}},
    };
    return c;
}

CaseSpec books_case() {
    CaseSpec c;
    c.name = "books";
    c.items = {
        {"b01", "The Silent Harbor",
         "['A detective mystery set in a fishing town.', 'A romance blossoms between the inspector and a baker.']"},
        {"b02", "Crown of Embers", "['A mystery unfolds in a kingdom of dragons and wizards.']"},
        {"b03", "The Last Keeper", "['An uplifting whodunit about an old keeper who solves one final case.']"},
        {"b04", "Collected Letters", "['Paperback edition.', 'ISBN 978-0-00-000000-0.', 'Used: Good condition.']"},
        {"b05", "Murder at the Manor", "['A classic detective story in an English country house.']"},
        {"b06", "Sunny Side Up", "['A feel-good and predictable narrative about a small bakery.']"},
    };
    const std::vector<std::pair<std::string, std::string>> others = {
        {"Star Drift", "['A space opera aboard a failing starship.']"},
        {"The Quiet War", "['A history of the world war told through letters.']"},
        {"Iron Will", "['A memoir of a long life in the mines.']"},
        {"Night Terrors", "['A horror novel about a haunted lighthouse.']"},
        {"Lead Boldly", "['Practical leadership lessons for managers.']"},
        {"Verses of Rain", "['A collection of poems about the sea.']"},
        {"The Agent", "['A thriller of espionage and betrayal.']"},
        {"Growing Up Fast", "['A young adult novel about a teenager moving cities.']"},
        {"Small Habits", "['A self-help guide to building habits.']"},
    };
    for (std::size_t i = 0; i < others.size(); ++i) {
        char id[24];
        std::snprintf(id, sizeof id, "b%02zu", i + 7);
        c.items.push_back({id, others[i].first, others[i].second});
    }
    c.history = {"b01", "b02", "b03", "b04"};
    c.warmup = {"b05"};
    c.test = {"b06"};
    c.instructions = {"Another clever mystery, please.",
                      "I'd like a feel-good and predictable narrative this time."};
    c.slim_response = "likes: mystery, romance, fantasy | style: complex world explorer";
    c.facets = json{{"facets", {{{"facet", "Reads mysteries in series"}, {"confidence", 0.7}}}}};
    c.cot_responses = {json{{"analysis", "Another detective story was chosen."},
                            {"incremental_update",
                             {{"reinforced", {{{"attribute", "mystery"}, {"evidence", "detective story chosen"}}}}}}}};
    return c;
}

CaseSpec movietv_case() {
    CaseSpec c;
    c.name = "movietv";
    c.items = {
        {"m01", "Rocket Rangers", "['An action packed sci-fi ride through outer space.']"},
        {"m02", "Paper Heroes", "['An animated tale that is funny and heartwarming.']"},
        {"m03", "Street Rhythm", "['A hilarious and inspiring tale of a dance crew.']"},
        {"m04", "Borrowed Time",
         "['A funny, uplifting look at retirement.', 'Two old friends reunite for one last road trip.', "
         "'Directed by Fate, the critics joked. Used: Good - horror sticker on the case.']"},
        {"m05", "Night Shift", "['Explosive action on the night shift.']"},
        {"m06", "Quiet Meadow", "['A gentle tale about a lighthouse.']"},
        {"m07", "Tape Archive", "['VHS tape in VG+ condition.']"},
        {"m08", "Boxed Set", "['Product dimensions: 7.5 x 5.4 inches.']"},
        {"m09", "Laugh Track", "['A funny ensemble piece about a late-night show.']"},
        {"m10", "Orbit", "['A sci-fi story of a lone astronaut.']"},
    };
    const std::vector<std::pair<std::string, std::string>> others = {
        {"Dust Riders", "['A western about an outlaw on the frontier.']"},
        {"The Haunting Hour", "['A horror film with a zombie outbreak.']"},
        {"Court of Kings", "['A drama of royal intrigue.']"},
        {"Big Heist", "['A crime caper about a mafia heist.']"},
        {"Song of Summer", "['A musical with broadway numbers.']"},
        {"Frontline", "['A war film following soldiers on the battlefield.']"},
        {"Deep Blue", "['A documentary about ocean life.']"},
        {"Love Letters", "['A romance between pen pals.']"},
        {"Who Did It", "['A mystery with a sharp detective.']"},
    };
    for (std::size_t i = 0; i < others.size(); ++i) {
        char id[24];
        std::snprintf(id, sizeof id, "m%02zu", i + 11);
        c.items.push_back({id, others[i].first, others[i].second});
    }
    c.history = {"m01", "m02", "m03", "m04", "m05", "m06", "m07", "m08"};
    c.warmup = {"m09"};
    c.test = {"m10"};
    c.instructions = {"Something light to laugh at.", "A thoughtful space movie."};
    c.slim_response = "likes: action, animation, sci-fi, funny tone | style: genre variety seeker";
    c.facets = json{{"facets", {{{"facet", "Watches comedies on weekends"}, {"confidence", 0.7}}}}};
    c.cot_responses = {json{{"analysis", "A comedy was chosen over darker titles."},
                            {"incremental_update",
                             {{"reinforced", {{{"attribute", "funny tone"}, {"evidence", "comedy chosen"}}}}}}}};
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Regenerate test fixtures"};
    std::string out = "tests/fixtures";
    std::size_t users = 50;
    app.add_option("--out", out, "fixture root");
    app.add_option("--users", users, "synthetic users");
    CLI11_PARSE(app, argc, argv);

    try {
        const fs::path root = out;
        const auto bundle_dir = root / "synth50";
        fs::create_directories(bundle_dir);
        const auto bundle = make_bundle(1920, users);
        write_jsonl(bundle_dir / "items.jsonl", bundle.items);
        write_jsonl(bundle_dir / "interactions.jsonl", bundle.interactions);
        write_jsonl(bundle_dir / "instructions.jsonl", bundle.instructions);
        write_file_atomic(bundle_dir / "manifest.json",
                          dump_pretty(json{{"items", bundle.items.size()},
                                           {"interactions", bundle.interactions.size()},
                                           {"instructions", bundle.instructions.size()},
                                           {"users", users}}));

        const auto data = ingest(bundle_dir);
        EvalConfig base;
        const auto profile = DomainParserProfile::load(base.resolved_data_dir(), Domain::structured);
        const Simulator sim(data, profile);
        auto recorder = std::make_shared<RecordingBackend>(std::make_shared<FunctionBackend>(
            "simulator", [sim](const LlmRequest& r) { return sim(r); }));
        Gateway recording(recorder, TemplateLibrary::load(base.resolved_data_dir() / "templates"));

        const auto scratch = fs::temp_directory_path() / "skillrec_fixturegen";
        fs::remove_all(scratch);
        // rq4 is recorded twice: at the default tau and after three rounds.
        struct Recorded {
            std::string matrix;
            EvalConfig config;
        };
        std::map<std::string, Recorded> runs;
        for (const char* matrix : {"rq3", "rq4", "tau", "inject"}) runs[matrix] = Recorded{matrix, base};
        runs["rq4_tau3"] = Recorded{"rq4", base};
        runs["rq4_tau3"].config.tau = 3;

        std::map<std::string, json> recorded;
        for (const auto& [label, run] : runs) {
            recorded[label] = run_ablation(data, run.config, run.matrix, recording, scratch / "record" / label);
            std::cout << label << ":\n" << read_file(scratch / "record" / label / "ablation.md") << "\n";
        }
        recorder->write(bundle_dir / "oracle.jsonl");

        // Replay every matrix from the script; the summaries must agree.
        Gateway replay(OracleBackend::from_file(bundle_dir / "oracle.jsonl"),
                       TemplateLibrary::load(base.resolved_data_dir() / "templates"));
        json golden = json::object();
        for (const auto& [label, summary] : recorded) {
            const auto& run = runs.at(label);
            const auto again = run_ablation(data, run.config, run.matrix, replay, scratch / "replay" / label);
            if (again != summary) throw std::runtime_error("replay of " + label + " diverged from the recording");
            json conditions = json::array();
            for (const auto& c : summary.at("conditions"))
                conditions.push_back({{"name", c.at("name")}, {"metrics", c.at("metrics")}, {"candidate_digest", c.at("candidate_digest")}});
            golden[label] = conditions;
        }
        write_file_atomic(bundle_dir / "golden_metrics.json", dump_pretty(golden));
        fs::remove_all(scratch);

        for (const auto& c : {yelp_case(), books_case(), movietv_case()}) write_case(root / "cases" / c.name, c);
        std::cout << "fixtures written to " << root.string() << " (" << recorder->records().size()
                  << " oracle records)\n";
    } catch (const std::exception& e) {
        std::cerr << "fixturegen: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
