#include "skillrec/memory_backbone.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>

#include "skillrec/errors.hpp"

namespace skillrec {

std::string user_node(std::string_view user_id) { return "user:" + std::string(user_id); }
std::string item_node(std::string_view item_id) { return "item:" + std::string(item_id); }

SemanticGraph::SemanticGraph(const SemanticGraph& other) {
    std::shared_lock lock(other.mu_);
    adjacency_ = other.adjacency_;
}

SemanticGraph& SemanticGraph::operator=(const SemanticGraph& other) {
    if (this == &other) return *this;
    std::scoped_lock lock(mu_);
    std::shared_lock other_lock(other.mu_);
    adjacency_ = other.adjacency_;
    return *this;
}

void SemanticGraph::add_node(const std::string& node) {
    std::unique_lock lock(mu_);
    adjacency_.try_emplace(node);
}

bool SemanticGraph::has_node(const std::string& node) const {
    std::shared_lock lock(mu_);
    return adjacency_.count(node) != 0;
}

void SemanticGraph::record_interaction(const std::string& a, const std::string& b, std::int64_t ts) {
    if (a == b) throw DataError("self-loop on " + a);
    std::unique_lock lock(mu_);
    auto bump = [&](const std::string& from, const std::string& to) {
        auto& edges = adjacency_[from];
        auto [it, inserted] = edges.try_emplace(to, EdgeWeight{1, ts});
        if (!inserted) {
            ++it->second.frequency;
            it->second.last_timestamp = std::max(it->second.last_timestamp, ts);
        }
    };
    bump(a, b);
    bump(b, a);
}

std::map<std::string, EdgeWeight> SemanticGraph::neighbors_of(const std::string& node) const {
    std::shared_lock lock(mu_);
    auto it = adjacency_.find(node);
    if (it == adjacency_.end()) throw DataError("unknown graph node " + node);
    return it->second;
}

std::optional<EdgeWeight> SemanticGraph::edge(const std::string& a, const std::string& b) const {
    std::shared_lock lock(mu_);
    auto it = adjacency_.find(a);
    if (it == adjacency_.end()) return std::nullopt;
    auto e = it->second.find(b);
    if (e == it->second.end()) return std::nullopt;
    return e->second;
}

std::size_t SemanticGraph::node_count() const {
    std::shared_lock lock(mu_);
    return adjacency_.size();
}

std::size_t SemanticGraph::edge_count() const {
    std::shared_lock lock(mu_);
    std::size_t n = 0;
    for (const auto& [_, edges] : adjacency_) n += edges.size();
    return n / 2;
}

void SemanticGraph::save_jsonl(const std::filesystem::path& path) const {
    std::shared_lock lock(mu_);
    std::string out;
    for (const auto& [node, _] : adjacency_) out += json{{"node", node}}.dump() + "\n";
    for (const auto& [a, edges] : adjacency_) {
        for (const auto& [b, w] : edges) {
            if (a < b)
                out += json{{"a", a}, {"b", b}, {"frequency", w.frequency}, {"last_ts", w.last_timestamp}}.dump() +
                       "\n";
        }
    }
    write_file_atomic(path, out);
}

SemanticGraph SemanticGraph::load_jsonl(const std::filesystem::path& path) {
    SemanticGraph g;
    for (const auto& rec : read_jsonl(path)) {
        if (rec.contains("node")) {
            g.adjacency_.try_emplace(rec.at("node").get<std::string>());
            continue;
        }
        const auto a = rec.at("a").get<std::string>();
        const auto b = rec.at("b").get<std::string>();
        EdgeWeight w{rec.at("frequency").get<std::int64_t>(), rec.at("last_ts").get<std::int64_t>()};
        if (w.frequency < 1) throw DataError("edge " + a + "-" + b + " has frequency < 1");
        g.adjacency_[a][b] = w;
        g.adjacency_[b][a] = w;
    }
    return g;
}

bool SemanticGraph::operator==(const SemanticGraph& other) const {
    if (this == &other) return true;
    std::shared_lock a(mu_);
    std::shared_lock b(other.mu_);
    return adjacency_ == other.adjacency_;
}

void save_memories_jsonl(const std::vector<UserMemory>& memories, const std::filesystem::path& path) {
    std::string out;
    for (const auto& m : memories) out += json{{"user_id", m.user_id}, {"bullets", m.bullets}}.dump() + "\n";
    write_file_atomic(path, out);
}

std::vector<UserMemory> load_memories_jsonl(const std::filesystem::path& path) {
    std::vector<UserMemory> out;
    for (const auto& rec : read_jsonl(path)) {
        out.push_back(UserMemory{rec.at("user_id").get<std::string>(),
                                 rec.value("bullets", std::vector<std::string>{})});
    }
    return out;
}

double neighbor_score(const EdgeWeight& w, std::int64_t now, const PruneConfig& config) {
    const double dt = static_cast<double>(std::max<std::int64_t>(0, now - w.last_timestamp));
    const double recency = config.half_life > 0 ? std::exp(-dt / config.half_life) : 0.0;
    return config.recency_weight * recency + config.frequency_weight * std::log1p(static_cast<double>(w.frequency));
}

std::vector<Neighbor> domain_prune(const SemanticGraph& graph, const std::string& user_id, std::size_t k,
                                   std::int64_t now, const PruneConfig& config) {
    const auto node = user_node(user_id);
    if (!graph.has_node(node)) throw DataError("unknown user " + user_id);
    std::vector<Neighbor> scored;
    for (const auto& [other, w] : graph.neighbors_of(node)) {
        scored.push_back(Neighbor{other, neighbor_score(w, now, config), w});
    }
    const auto take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                      [](const Neighbor& a, const Neighbor& b) {
                          if (a.score != b.score) return a.score > b.score;
                          return a.node < b.node;
                      });
    scored.resize(take);
    return scored;
}

std::vector<Facet> quality_filter(const std::vector<Facet>& facets, double threshold, std::size_t cap) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("quality threshold must be in [0,1]");
    std::vector<Facet> out;
    for (const auto& f : facets) {
        if (out.size() >= cap) break;
        if (f.confidence >= threshold) out.push_back(f);
    }
    return out;
}

namespace {

std::string metadata_summary(const Item& item) {
    std::vector<std::string> parts;
    for (const auto& [k, v] : item.metadata) parts.push_back(k + "=" + v);
    return join(parts, "; ");
}

}  // namespace

std::string memory_bullet(const Item& item, std::int64_t ts) {
    std::string out = "t=" + std::to_string(ts) + " chose " + item.title + " [" + item.item_id + "]";
    const auto meta = metadata_summary(item);
    if (!meta.empty()) out += " {" + meta + "}";
    return out;
}

std::string neighbor_table_json(const std::vector<Neighbor>& neighbors, const std::map<std::string, Item>& catalog) {
    json rows = json::array();
    for (const auto& n : neighbors) {
        json row{{"id", n.node}, {"frequency", n.weight.frequency}, {"last_ts", n.weight.last_timestamp}};
        if (n.node.rfind("item:", 0) == 0) {
            if (auto it = catalog.find(n.node.substr(5)); it != catalog.end()) {
                row["title"] = it->second.title;
                const auto meta = metadata_summary(it->second);
                if (!meta.empty()) row["signals"] = meta;
            }
        }
        rows.push_back(std::move(row));
    }
    return rows.dump();
}

std::string format_memory_bullets(const UserMemory& memory) {
    if (memory.bullets.empty()) return "- (no recorded interactions)";
    std::string out;
    for (const auto& b : memory.bullets) out += "- " + b + "\n";
    out.pop_back();
    return out;
}

std::vector<Facet> synthesize_facets(Gateway& gateway, const UserMemory& memory,
                                     const std::vector<Neighbor>& neighbors,
                                     const std::map<std::string, Item>& catalog, const FacetConfig& config,
                                     int sequence, CallStats* stats) {
    Bindings b{{"user_id", memory.user_id},
               {"user_mem_bullets", format_memory_bullets(memory)},
               {"neighbor_table_json", neighbor_table_json(neighbors, catalog)},
               {"n_facets", std::to_string(config.n_facets)}};
    auto facets = gateway.complete_parsed(TemplateName::synth, b, sequence, parse_facets, stats);
    return quality_filter(facets, config.quality_threshold, config.n_facets);
}

void propagate(const std::string& chosen_item, UserMemory& memory, const std::vector<Neighbor>& /*neighbors*/,
               SemanticGraph& graph, const std::map<std::string, Item>& catalog, std::int64_t ts) {
    auto it = catalog.find(chosen_item);
    if (it == catalog.end()) throw DataError("propagate: unknown item " + chosen_item);
    memory.bullets.push_back(memory_bullet(it->second, ts));
    graph.record_interaction(user_node(memory.user_id), item_node(chosen_item), ts);
}

std::vector<Facet> GraphRetriever::retrieve(Gateway& gateway, const UserMemory& memory, std::int64_t now,
                                            int sequence, CallStats* stats) {
    const auto neighbors = domain_prune(graph_, memory.user_id, k_, now, prune_);
    return synthesize_facets(gateway, memory, neighbors, catalog_, facets_, sequence, stats);
}

void GraphRetriever::observe(const std::string& chosen_item, UserMemory& memory, std::int64_t ts) {
    propagate(chosen_item, memory, {}, graph_, catalog_, ts);
}

}  // namespace skillrec
