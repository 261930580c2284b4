#pragma once

// Simplified collaborative-memory layer: a user/item semantic graph with
// recency- and frequency-weighted edges, neighbor curation, facet
// synthesis through the gateway, and post-interaction propagation.
//
// This is a stand-in behind the Retriever interface; a faithful port of a
// richer memory agent can replace it without touching the skill layer.

#include <cstdint>
#include <filesystem>
#include <map>
#include <shared_mutex>
#include <string>
#include <vector>

#include "skillrec/datamodel.hpp"
#include "skillrec/llm_gateway.hpp"

namespace skillrec {

std::string user_node(std::string_view user_id);
std::string item_node(std::string_view item_id);

struct EdgeWeight {
    std::int64_t frequency = 1;
    std::int64_t last_timestamp = 0;
    bool operator==(const EdgeWeight&) const = default;
};

// Undirected graph over typed node ids ("user:<id>", "item:<id>").
// Shared reads, exclusive writes.
class SemanticGraph {
public:
    SemanticGraph() = default;
    SemanticGraph(const SemanticGraph& other);
    SemanticGraph& operator=(const SemanticGraph& other);

    void add_node(const std::string& node);
    bool has_node(const std::string& node) const;
    // Creates the edge with frequency 1, or increments it; refreshes the
    // timestamp to max(old, ts). Both endpoints are added if absent.
    void record_interaction(const std::string& a, const std::string& b, std::int64_t ts);

    std::map<std::string, EdgeWeight> neighbors_of(const std::string& node) const;
    std::optional<EdgeWeight> edge(const std::string& a, const std::string& b) const;
    std::size_t node_count() const;
    std::size_t edge_count() const;

    // JSONL: {"node": id} lines then {"a","b","frequency","last_ts"} lines.
    void save_jsonl(const std::filesystem::path& path) const;
    static SemanticGraph load_jsonl(const std::filesystem::path& path);

    bool operator==(const SemanticGraph& other) const;

private:
    mutable std::shared_mutex mu_;
    std::map<std::string, std::map<std::string, EdgeWeight>> adjacency_;
};

struct UserMemory {
    std::string user_id;
    std::vector<std::string> bullets;  // append-only
    bool operator==(const UserMemory&) const = default;
};

void save_memories_jsonl(const std::vector<UserMemory>& memories, const std::filesystem::path& path);
std::vector<UserMemory> load_memories_jsonl(const std::filesystem::path& path);

struct PruneConfig {
    double recency_weight = 1.0;    // alpha
    double frequency_weight = 1.0;  // beta
    double half_life = 2592000.0;   // decay scale, timestamp units
};

struct Neighbor {
    std::string node;
    double score = 0.0;
    EdgeWeight weight;
};

// Top-k neighbors by alpha*exp(-dt/half_life) + beta*log(1+frequency),
// dt = max(0, now - last_timestamp); ties broken by node id ascending.
// Throws DataError for an unknown user.
std::vector<Neighbor> domain_prune(const SemanticGraph& graph, const std::string& user_id, std::size_t k,
                                   std::int64_t now, const PruneConfig& config = {});

double neighbor_score(const EdgeWeight& w, std::int64_t now, const PruneConfig& config);

// Retains facets with confidence >= threshold (order preserved), then caps
// at `cap`.
std::vector<Facet> quality_filter(const std::vector<Facet>& facets, double threshold, std::size_t cap);

struct FacetConfig {
    std::size_t n_facets = 5;
    double quality_threshold = 0.3;
};

// Compact neighbor rows rendered as a JSON array for the synthesis prompt.
std::string neighbor_table_json(const std::vector<Neighbor>& neighbors, const std::map<std::string, Item>& catalog);
std::string format_memory_bullets(const UserMemory& memory);

// Renders the synthesis prompt, parses the facet list and applies the
// quality filter. Gateway and parse failures propagate.
std::vector<Facet> synthesize_facets(Gateway& gateway, const UserMemory& memory,
                                     const std::vector<Neighbor>& neighbors,
                                     const std::map<std::string, Item>& catalog, const FacetConfig& config,
                                     int sequence, CallStats* stats = nullptr);

// Appends an event bullet to the user's memory and records the user-item
// edge. Neighbor memories are not rewritten. Throws DataError for an item
// missing from the catalog.
void propagate(const std::string& chosen_item, UserMemory& memory, const std::vector<Neighbor>& neighbors,
               SemanticGraph& graph, const std::map<std::string, Item>& catalog, std::int64_t ts);

std::string memory_bullet(const Item& item, std::int64_t ts);

// Retrieval seam between the memory layer and the skill pipeline.
class Retriever {
public:
    virtual ~Retriever() = default;
    virtual std::vector<Facet> retrieve(Gateway& gateway, const UserMemory& memory, std::int64_t now,
                                        int sequence, CallStats* stats) = 0;
    virtual void observe(const std::string& chosen_item, UserMemory& memory, std::int64_t ts) = 0;
};

class GraphRetriever : public Retriever {
public:
    GraphRetriever(SemanticGraph& graph, const std::map<std::string, Item>& catalog, std::size_t k,
                   PruneConfig prune, FacetConfig facets)
        : graph_(graph), catalog_(catalog), k_(k), prune_(prune), facets_(facets) {}

    std::vector<Facet> retrieve(Gateway& gateway, const UserMemory& memory, std::int64_t now, int sequence,
                                CallStats* stats) override;
    void observe(const std::string& chosen_item, UserMemory& memory, std::int64_t ts) override;

private:
    SemanticGraph& graph_;
    const std::map<std::string, Item>& catalog_;
    std::size_t k_;
    PruneConfig prune_;
    FacetConfig facets_;
};

}  // namespace skillrec
