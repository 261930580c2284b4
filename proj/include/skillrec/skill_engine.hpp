#pragma once

// The policy layer: per-user skill store, slim extraction, contrastive
// evolution (incremental diff or full replacement) and the tiered merge.

#include <array>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "skillrec/datamodel.hpp"
#include "skillrec/llm_gateway.hpp"

namespace skillrec {

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

enum class SaveResult { saved, rejected_frozen };

// Layout under `root`:
//   users/<user_id>/skill.json
//   users/<user_id>/skill.md
//   users/<user_id>/history/skill.r<N>.json   (last `history_depth` revisions)
//   users/<user_id>/frozen                    (marker; saves become no-ops)
class SkillStore {
public:
    explicit SkillStore(std::filesystem::path root, int history_depth = 5);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path user_dir(const std::string& user_id) const;

    bool exists(const std::string& user_id) const;
    // Throws NotInitialized when the user has no skill.
    PolicySkill load(const std::string& user_id) const;
    SaveResult save(const PolicySkill& skill);

    void freeze(const std::string& user_id);
    void unfreeze(const std::string& user_id);
    bool is_frozen(const std::string& user_id) const;

    // Retained revision numbers, ascending.
    std::vector<int> revisions(const std::string& user_id) const;
    PolicySkill load_revision(const std::string& user_id, int revision) const;

    std::vector<std::string> users() const;

    // FNV-1a over (relative path, bytes) of every file, in path order.
    std::string content_hash() const;
    std::string user_content_hash(const std::string& user_id) const;

private:
    std::mutex& lock_for(const std::string& user_id) const;

    std::filesystem::path root_;
    int history_depth_;
    mutable std::array<std::mutex, 64> locks_;
};

std::string directory_hash(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Slim extraction and injection
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultInjectBudget = 30;
inline constexpr std::size_t kMaxLikes = 3;

// Injection-eligible entries (tier >= medium) ordered by tier desc, then
// last_updated_round desc, then section/position.
std::vector<const PreferenceEntry*> slim_candidates(const PolicySkill& skill);

// Fits a slim into `budget` whitespace tokens: drop likes beyond two, then
// the style, then the second like, then trailing words of the last like.
// A budget too small for "likes: x" yields an empty, degraded slim.
SlimSkill truncate_slim(SlimSkill slim, std::size_t budget);

// Rule-based extraction; never calls a model.
SlimSkill extract_slim_deterministic(const PolicySkill& skill, std::size_t budget = kDefaultInjectBudget);

struct SlimResult {
    SlimSkill slim;
    bool from_model = false;
    bool fell_back = false;  // model output unusable, rule-based slim used
};

// With a gateway the extract template is rendered and the model's slim is
// used (truncated to min(budget, 50)); parse failures fall back to the
// rule-based path. Without a gateway the rule-based path runs directly.
SlimResult extract_slim(const PolicySkill& skill, std::size_t budget, Gateway* gateway, int sequence = 0,
                        CallStats* stats = nullptr);

// Text placed into the ranking prompt. Up to 50 tokens this is the slim
// itself; larger budgets append further skill lines until the budget is
// reached (the injection-length sweep).
std::string render_injection(const PolicySkill& skill, const SlimSkill& slim, std::size_t budget);

// ---------------------------------------------------------------------------
// Evolution
// ---------------------------------------------------------------------------

// Every ranked id except `positive`, from last-ranked to first-ranked.
// Throws DataError when `positive` is not in the ranking.
std::vector<std::string> build_contrastive_input(const RankedList& ranking, const std::string& positive);

std::string format_item_for_prompt(const Item& item, std::size_t description_chars = 240);
std::string format_facets(const std::vector<Facet>& facets, std::size_t per_facet_chars = 200);

struct EvolveInput {
    const PolicySkill* skill = nullptr;
    const Item* positive = nullptr;
    std::vector<const Item*> unchosen;  // contrastive order
    std::vector<Facet> facets;
    int sequence = 0;
};

struct EvolveResult {
    SkillDiff diff;
    std::vector<std::string> violations;  // stripped or reclassified directives
};

// True for labels phrased as avoidance rules ("avoid x", "no x", ...).
bool is_avoidance_rule(std::string_view normalized_attribute);

// Enforces the diff rules against `skill`: normalizes labels, strips
// avoidance rules, strips weakens without a reason or without a matching
// entry, and turns unknown reinforced attributes into discoveries.
EvolveResult sanitize_diff(const PolicySkill& skill, SkillDiff diff);

EvolveResult evolve_incremental(Gateway& gateway, const EvolveInput& input, CallStats* stats = nullptr);

// The returned skill replaces the old one wholesale: revision + 1, origin
// kept, nothing protected.
PolicySkill evolve_full_replacement(Gateway& gateway, const EvolveInput& input, int round,
                                    CallStats* stats = nullptr);

struct MergeOptions {
    int protection_threshold = kDefaultProtectionThreshold;
};

// Applies a validated diff:
//   reinforced  -> promote one tier, reset contradictions
//   discovered  -> append at low/emerging (an existing label counts as a
//                  reinforce); routed by section tag
//   weakened    -> protected entries below the threshold only count the
//                  contradiction; otherwise demote one tier and reset
// Entries are never removed; revision + 1. Throws ProtocolError when a
// label appears in more than one list.
PolicySkill merge(const PolicySkill& skill, const SkillDiff& diff, int round, const MergeOptions& options = {});

}  // namespace skillrec
