#include "skillrec/statinit.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "skillrec/errors.hpp"

namespace skillrec {

std::string_view to_string(Domain d) {
    switch (d) {
        case Domain::structured: return "structured";
        case Domain::books: return "books";
        case Domain::movietv: return "movietv";
    }
    return "structured";
}

Domain domain_from_string(std::string_view s) {
    const auto v = to_lower(s);
    if (v == "structured" || v == "yelp") return Domain::structured;
    if (v == "books" || v == "goodreads") return Domain::books;
    if (v == "movietv" || v == "movies") return Domain::movietv;
    throw ConfigError("unknown domain profile '" + std::string(s) + "'");
}

std::string_view to_string(Dimension d) {
    switch (d) {
        case Dimension::category: return "category";
        case Dimension::price: return "price";
        case Dimension::city: return "city";
        case Dimension::ambience: return "ambience";
        case Dimension::meal: return "meal";
        case Dimension::rating: return "rating";
        case Dimension::genre: return "genre";
        case Dimension::creator: return "creator";
        case Dimension::mood: return "mood";
    }
    return "category";
}

DomainParserProfile DomainParserProfile::from_json(const json& j) {
    DomainParserProfile p;
    p.domain = domain_from_string(j.at("domain").get<std::string>());
    auto read_classes = [](const json& arr) {
        std::vector<LexiconClass> out;
        for (const auto& c : arr) {
            LexiconClass lc{c.at("label").get<std::string>(), {}};
            for (const auto& kw : c.at("keywords")) lc.keywords.push_back(normalize_for_matching(kw.get<std::string>()));
            out.push_back(std::move(lc));
        }
        return out;
    };
    if (j.contains("genres")) p.genres = read_classes(j["genres"]);
    if (j.contains("moods")) p.moods = read_classes(j["moods"]);
    p.creator_cues = j.value("creator_cues", std::vector<std::string>{});
    p.creator_label_prefix = j.value("creator_label_prefix", std::string{});
    for (const auto& pat : j.value("noise_patterns", std::vector<std::string>{})) {
        try {
            p.noise_patterns.emplace_back(pat, std::regex::ECMAScript | std::regex::icase);
        } catch (const std::regex_error& e) {
            throw ConfigError("bad noise pattern '" + pat + "': " + e.what());
        }
        p.noise_sources.push_back(pat);
    }
    p.item_noun = j.value("item_noun", p.item_noun);
    p.tie_breaker = j.value("tie_breaker", std::string{});
    p.exploration = j.value("exploration", std::string{});
    p.style_fallback = j.value("style_fallback", p.style_fallback);
    return p;
}

DomainParserProfile DomainParserProfile::load(const std::filesystem::path& data_dir, Domain domain) {
    const auto path = data_dir / "lexicons" / (std::string(to_string(domain)) + ".json");
    if (!std::filesystem::exists(path)) throw ConfigError("missing lexicon file " + path.string());
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

namespace {

// Parses a quoted string starting at text[i] (quote char included).
std::optional<std::string> parse_quoted(std::string_view text, std::size_t& i) {
    const char quote = text[i];
    std::string out;
    for (++i; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '\\' && i + 1 < text.size()) {
            const char n = text[++i];
            switch (n) {
                case 'n': out.push_back('\n'); break;
                case 't': out.push_back('\t'); break;
                default: out.push_back(n); break;
            }
            continue;
        }
        if (c == quote) {
            ++i;
            return out;
        }
        out.push_back(c);
    }
    return std::nullopt;
}

void skip_space(std::string_view text, std::size_t& i) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
}

bool is_bare_scalar(std::string_view t) {
    static const std::regex number_re(R"([-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)");
    if (t == "None" || t == "null" || t == "True" || t == "False" || t == "true" || t == "false") return true;
    return std::regex_match(t.begin(), t.end(), number_re);
}

bool parse_list(std::string_view text, std::size_t& i, std::vector<std::string>& out, int depth) {
    if (depth > 8 || i >= text.size() || text[i] != '[') return false;
    ++i;
    skip_space(text, i);
    if (i < text.size() && text[i] == ']') {
        ++i;
        return true;
    }
    for (;;) {
        skip_space(text, i);
        if (i >= text.size()) return false;
        const char c = text[i];
        if (c == '\'' || c == '"') {
            auto s = parse_quoted(text, i);
            if (!s) return false;
            out.push_back(std::move(*s));
        } else if (c == '[') {
            if (!parse_list(text, i, out, depth + 1)) return false;
        } else {
            // Bare scalars (numbers, None, booleans) are skipped; any other
            // bare word means this is prose, not a list literal.
            const auto start = i;
            while (i < text.size() && text[i] != ',' && text[i] != ']') ++i;
            if (!is_bare_scalar(trim(text.substr(start, i - start)))) return false;
        }
        skip_space(text, i);
        if (i >= text.size()) return false;
        if (text[i] == ',') {
            ++i;
            skip_space(text, i);
            if (i < text.size() && text[i] == ']') {
                ++i;
                return true;
            }
            continue;
        }
        if (text[i] == ']') {
            ++i;
            return true;
        }
        return false;
    }
}

std::string cue_pattern(std::string_view cue) {
    std::string out;
    for (char c : cue) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            out += '[';
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            out += ']';
        } else if (c == ' ') {
            out += "\\s+";
        } else {
            out += '\\';
            out += c;
        }
    }
    return out;
}

std::string strip_trailing_punct(std::string s) {
    while (!s.empty() && (s.back() == '.' || s.back() == ',' || s.back() == '\'' || s.back() == '-')) s.pop_back();
    return s;
}

}  // namespace

std::optional<std::vector<std::string>> flatten_list_literal(std::string_view text) {
    const auto t = trim(text);
    if (t.size() < 2 || t.front() != '[' || t.back() != ']') return std::nullopt;
    std::vector<std::string> out;
    std::size_t i = 0;
    if (!parse_list(t, i, out, 0)) return std::nullopt;
    skip_space(t, i);
    if (i != t.size()) return std::nullopt;
    return out;
}

std::vector<std::string> description_paragraphs(std::string_view description) {
    std::vector<std::string> out;
    if (auto items = flatten_list_literal(description)) {
        for (auto& s : *items) {
            auto t = trim(s);
            if (!t.empty()) out.push_back(std::move(t));
        }
        return out;
    }
    std::istringstream in{std::string(description)};
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

std::string filter_noise(std::string_view text, const DomainParserProfile& profile) {
    if (profile.noise_patterns.empty()) return std::string(text);
    std::string out;
    std::string segment;
    auto flush = [&]() {
        const auto t = trim(segment);
        segment.clear();
        if (t.empty()) return;
        for (const auto& re : profile.noise_patterns) {
            if (std::regex_search(t, re)) return;
        }
        if (!out.empty()) out += ' ';
        out += t;
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        segment.push_back(c);
        const bool boundary = c == '!' || c == '?' || c == ';' || c == '\n' ||
                              (c == '.' && (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]))));
        if (boundary) flush();
    }
    flush();
    return out;
}

std::string normalize_for_matching(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool space = true;
    for (unsigned char c : text) {
        if (std::isalnum(c) || c == '-' || c == '\'' || c == '+' || c == '$') {
            out.push_back(static_cast<char>(std::tolower(c)));
            space = false;
        } else if (!space) {
            out.push_back(' ');
            space = true;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

bool contains_keyword(std::string_view normalized_text, std::string_view keyword) {
    if (keyword.empty()) return false;
    std::size_t pos = 0;
    while ((pos = normalized_text.find(keyword, pos)) != std::string_view::npos) {
        const bool left_ok = pos == 0 || normalized_text[pos - 1] == ' ';
        const auto end = pos + keyword.size();
        const bool right_ok = end == normalized_text.size() || normalized_text[end] == ' ';
        if (left_ok && right_ok) return true;
        ++pos;
    }
    return false;
}

std::vector<std::string> extract_creators(std::string_view text, const DomainParserProfile& profile) {
    std::vector<std::string> out;
    const std::string haystack(text);
    for (const auto& cue : profile.creator_cues) {
        const std::regex re("(?:^|[^A-Za-z])" + cue_pattern(cue) +
                            R"(\s+((?:[A-Z]\.|[A-Z][A-Za-z'-]*)(?:\s+(?:[A-Z]\.|[A-Z][A-Za-z'-]*)){0,2}))");
        for (auto it = std::sregex_iterator(haystack.begin(), haystack.end(), re); it != std::sregex_iterator(); ++it) {
            auto name = strip_trailing_punct(trim((*it)[1].str()));
            if (name.empty()) continue;
            if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Signal extraction
// ---------------------------------------------------------------------------

namespace {

void add_signal(std::vector<Signal>& out, std::string_view raw, Dimension dim, std::size_t order) {
    std::string attr;
    try {
        attr = normalize_attribute(raw);
    } catch (const DataError&) {
        return;
    }
    for (const auto& s : out) {
        if (s.attribute == attr) return;
    }
    out.push_back(Signal{std::move(attr), dim, order});
}

std::vector<std::string> split_list_field(const std::string& v) {
    std::vector<std::string> out;
    for (auto& part : split(v, ',')) {
        auto t = trim(part);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

std::vector<Signal> structured_signals(const Item& item) {
    std::vector<Signal> out;
    auto field = [&](const char* key) -> std::string {
        auto it = item.metadata.find(key);
        return it == item.metadata.end() ? std::string{} : trim(it->second);
    };
    for (const auto& c : split_list_field(field("categories"))) add_signal(out, c, Dimension::category, 0);
    if (auto price = field("price"); !price.empty()) add_signal(out, price + " price range", Dimension::price, 0);
    if (auto city = field("city"); !city.empty()) add_signal(out, city + " area", Dimension::city, 0);
    for (const auto& a : split_list_field(field("ambience"))) add_signal(out, a + " ambience", Dimension::ambience, 0);
    for (const auto& m : split_list_field(field("meal"))) add_signal(out, m + " spots", Dimension::meal, 0);
    if (auto stars = field("stars"); !stars.empty()) {
        try {
            if (std::stod(stars) >= 4.0) add_signal(out, "high-rated venues (4+ stars)", Dimension::rating, 0);
        } catch (const std::exception&) {
        }
    }
    return out;
}

std::vector<Signal> free_text_signals(const Item& item, const DomainParserProfile& profile) {
    std::vector<Signal> out;
    const auto paragraphs = description_paragraphs(item.description);

    std::string body = item.title;
    for (const auto& p : paragraphs) {
        const auto kept = filter_noise(p, profile);
        if (!kept.empty()) body += "\n" + kept;
    }
    const auto normalized = normalize_for_matching(body);
    for (std::size_t i = 0; i < profile.genres.size(); ++i) {
        for (const auto& kw : profile.genres[i].keywords) {
            if (contains_keyword(normalized, kw)) {
                add_signal(out, profile.genres[i].label, Dimension::genre, i);
                break;
            }
        }
    }
    for (std::size_t i = 0; i < profile.moods.size(); ++i) {
        for (const auto& kw : profile.moods[i].keywords) {
            if (contains_keyword(normalized, kw)) {
                add_signal(out, profile.moods[i].label, Dimension::mood, i);
                break;
            }
        }
    }

    if (!profile.creator_cues.empty()) {
        std::string window = item.title;
        if (!paragraphs.empty()) window += "\n" + paragraphs.front().substr(0, kCreatorWindowChars);
        for (const auto& name : extract_creators(window, profile))
            add_signal(out, profile.creator_label_prefix + name, Dimension::creator, 0);
    }
    return out;
}

int dimension_rank(Dimension d) { return static_cast<int>(d); }

}  // namespace

std::vector<Signal> parse_item_signals(const Item& item, const DomainParserProfile& profile) {
    if (profile.domain == Domain::structured) return structured_signals(item);
    return free_text_signals(item, profile);
}

// ---------------------------------------------------------------------------
// StatInit
// ---------------------------------------------------------------------------

namespace {

struct Tally {
    Signal signal;
    int count = 0;
};

std::vector<std::string> top_labels(const std::vector<Tally>& tallies, Dimension dim, std::size_t n) {
    std::vector<std::string> out;
    for (const auto& t : tallies) {
        if (t.signal.dimension != dim) continue;
        out.push_back(t.signal.attribute);
        if (out.size() == n) break;
    }
    return out;
}

const Tally* top_tally(const std::vector<Tally>& tallies, Dimension dim) {
    for (const auto& t : tallies) {
        if (t.signal.dimension == dim) return &t;
    }
    return nullptr;
}

std::string build_strategy(const std::vector<Tally>& tallies, int found, const DomainParserProfile& profile) {
    std::ostringstream s;
    if (profile.domain == Domain::structured) {
        const auto cats = top_labels(tallies, Dimension::category, 3);
        const auto* price = top_tally(tallies, Dimension::price);
        const auto* city = top_tally(tallies, Dimension::city);
        const auto* ambience = top_tally(tallies, Dimension::ambience);
        std::string style = profile.style_fallback;
        if (ambience) {
            const auto word = ambience->signal.attribute.substr(0, ambience->signal.attribute.rfind(" ambience"));
            const bool local = city && city->count * 2 >= found;
            style = word + (local ? " neighborhood regular" : " explorer");
        }
        s << "Style: " << style << "\n";
        s << "Must Include: " << (cats.empty() ? profile.item_noun + " matching recent visits" : join(cats, ", "));
        if (price) s << " at " << price->signal.attribute;
        s << "\n";
        s << "Tie Breaker: " << profile.tie_breaker;
        if (city) s << " near " << city->signal.attribute;
        s << "\n";
        s << "Exploration: " << profile.exploration << "\n";
        return s.str();
    }
    const auto genres = top_labels(tallies, Dimension::genre, 3);
    std::size_t distinct_genres = 0;
    for (const auto& t : tallies) distinct_genres += t.signal.dimension == Dimension::genre;
    std::string style = profile.style_fallback;
    if (distinct_genres >= 3) {
        style = "genre variety seeker";
    } else if (!genres.empty()) {
        style = genres.front() + " devotee";
    }
    s << "Style: " << style << "\n";
    s << "Must Include: "
      << (genres.empty() ? profile.item_noun + " matching recent interactions"
                         : profile.item_noun + " in core genres: " + join(genres, ", "))
      << "\n";
    s << "Tie Breaker: " << profile.tie_breaker << "\n";
    s << "Exploration: " << profile.exploration << "\n";
    return s.str();
}

}  // namespace

PolicySkill stat_init(const std::string& user_id, const std::vector<InteractionRecord>& history,
                      const std::map<std::string, Item>& catalog, const DomainParserProfile& profile,
                      const StatInitConfig& config) {
    if (history.empty()) throw DataError("stat_init: empty history for " + user_id + " (use global_init)");
    int found = 0;
    int missing = 0;
    std::map<std::string, Tally> by_attr;
    for (const auto& rec : history) {
        auto it = catalog.find(rec.item_id);
        if (it == catalog.end()) {
            ++missing;
            continue;
        }
        ++found;
        for (auto& sig : parse_item_signals(it->second, profile)) {
            auto [t, inserted] = by_attr.try_emplace(sig.attribute, Tally{sig, 0});
            ++t->second.count;
        }
    }
    if (static_cast<double>(missing) > config.max_missing_share * static_cast<double>(history.size()))
        throw DataError("stat_init: " + std::to_string(missing) + " of " + std::to_string(history.size()) +
                        " history items missing from catalog for " + user_id);

    std::vector<Tally> tallies;
    for (auto& [_, t] : by_attr) {
        if (t.signal.dimension == Dimension::creator && t.count < config.creator_min_count) continue;
        tallies.push_back(t);
    }
    std::sort(tallies.begin(), tallies.end(), [](const Tally& a, const Tally& b) {
        if (a.signal.dimension != b.signal.dimension)
            return dimension_rank(a.signal.dimension) < dimension_rank(b.signal.dimension);
        if (a.count != b.count) return a.count > b.count;
        if (a.signal.order != b.signal.order) return a.signal.order < b.signal.order;
        return a.signal.attribute < b.signal.attribute;
    });

    PolicySkill skill;
    skill.user_id = user_id;
    skill.origin = Origin::statinit;
    skill.revision = 0;
    for (const auto& t : tallies) {
        const double share = found ? static_cast<double>(t.count) / found : 0.0;
        Tier tier = Tier::low;
        if (t.count >= config.min_support) {
            if (share >= config.high_cut) {
                tier = Tier::high;
            } else if (share >= config.medium_cut) {
                tier = Tier::medium;
            }
        }
        PreferenceEntry e;
        e.attribute = t.signal.attribute;
        e.tier = tier;
        e.source = Source::confirmed;
        e.is_protected = tier == Tier::high;
        skill.core_preferences.push_back(std::move(e));
    }
    skill.strategy = build_strategy(tallies, found, profile);
    return skill;
}

PolicySkill global_init(const std::string& user_id, Domain domain, const std::filesystem::path& data_dir,
                        Gateway* gateway) {
    const auto path = data_dir / "global_skills" / (std::string(to_string(domain)) + ".json");
    PolicySkill skill;
    if (std::filesystem::exists(path)) {
        try {
            skill = json::parse(read_file(path)).get<PolicySkill>();
        } catch (const json::exception& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
    } else if (gateway) {
        Bindings b{{"domain", std::string(to_string(domain))}};
        skill = gateway->complete_parsed(TemplateName::global_skill, b, 0, parse_policy_skill);
    } else {
        throw ConfigError("no global skill template for domain '" + std::string(to_string(domain)) +
                          "' and no gateway to generate one");
    }
    skill.user_id = user_id;
    skill.origin = Origin::global_template;
    skill.revision = 0;
    for (auto s : kAllSections) {
        for (auto& e : skill.section(s)) {
            e.is_protected = false;
            e.contradiction_count = 0;
            e.last_updated_round = 0;
        }
    }
    return skill;
}

namespace {

PolicySkill init_one(const UserHistory& u, const std::map<std::string, Item>& catalog,
                     const DomainParserProfile& profile, const PolicySkill& global, const StatInitConfig& config) {
    if (u.history.empty()) {
        PolicySkill s = global;
        s.user_id = u.user_id;
        return s;
    }
    return stat_init(u.user_id, u.history, catalog, profile, config);
}

}  // namespace

std::vector<PolicySkill> initialize_skills_serial(const std::vector<UserHistory>& users,
                                                  const std::map<std::string, Item>& catalog,
                                                  const DomainParserProfile& profile, const PolicySkill& global,
                                                  const StatInitConfig& config) {
    std::vector<PolicySkill> out;
    out.reserve(users.size());
    for (const auto& u : users) out.push_back(init_one(u, catalog, profile, global, config));
    return out;
}

std::vector<PolicySkill> initialize_skills_parallel(const std::vector<UserHistory>& users,
                                                    const std::map<std::string, Item>& catalog,
                                                    const DomainParserProfile& profile, const PolicySkill& global,
                                                    const StatInitConfig& config, int jobs) {
    std::vector<PolicySkill> out(users.size());
    std::vector<std::string> errors(users.size());
    const auto n = static_cast<std::ptrdiff_t>(users.size());
#ifdef _OPENMP
    const int threads = jobs > 0 ? jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
#else
    (void)jobs;
#endif
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        try {
            out[static_cast<std::size_t>(i)] =
                init_one(users[static_cast<std::size_t>(i)], catalog, profile, global, config);
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(i)] = e.what();
        }
    }
    for (const auto& e : errors) {
        if (!e.empty()) throw DataError(e);
    }
    return out;
}

}  // namespace skillrec
