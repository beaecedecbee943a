#pragma once

#include <deque>
#include <map>
#include <set>
#include <vector>

#include "invasim/allocator.hpp"

namespace invasim {

struct DispatchRule {
    ClaimId claim = 0;
    std::vector<int> cores;  // core indices on this tile, ascending
    SupplyPolicy oversupply = SupplyPolicy::Reject;
    SupplyPolicy undersupply = SupplyPolicy::Reject;
};

// Claim tag carried by an i-let incarnation; claim 0 is the wildcard.
struct ILetTag {
    ClaimId claim = 0;

    static ILetTag wildcard() { return {}; }
    static ILetTag for_claim(ClaimId c) { return {c}; }
    bool is_wildcard() const { return claim == 0; }
    auto operator<=>(const ILetTag&) const = default;
};

// Per-tile rule-based i-let dispatcher state.
struct CiCState {
    int tile = 0;
    std::map<ClaimId, DispatchRule> rules;
    std::vector<std::deque<IletId>> queues;  // per-core pending FIFO

    struct CoreSlot {
        std::optional<IletId> occupant;  // popped for start or executing
        bool started = false;
    };
    std::vector<CoreSlot> slots;

    struct StalledIlet {
        IletId ilet = 0;
        std::uint64_t order = 0;  // global stall sequence, preserved across retries
    };
    std::deque<StalledIlet> stalled;
    std::set<int> masked;

    CiCState() = default;
    CiCState(int tile_index, int core_count)
        : tile(tile_index), queues(core_count), slots(core_count) {}

    int core_count() const { return static_cast<int>(queues.size()); }
    // Occupancy proxy used as the "shortest queue" criterion: pending work
    // plus the slot occupant (starting or executing).
    int load(int core) const {
        return static_cast<int>(queues[core].size()) + (slots[core].occupant ? 1 : 0);
    }
};

// Installs (or replaces, on expand/retreat) the dispatching rule of a claim.
inline void install_rule(CiCState& cic, const DispatchRule& rule) {
    if (rule.cores.empty()) {
        throw std::invalid_argument("install_rule: empty core set");
    }
    if (!std::is_sorted(rule.cores.begin(), rule.cores.end())) {
        throw std::invalid_argument("install_rule: core set must be ascending");
    }
    for (int c : rule.cores) {
        if (c < 0 || c >= cic.core_count()) {
            throw std::invalid_argument("install_rule: core " + std::to_string(c) +
                                        " outside tile " + std::to_string(cic.tile));
        }
    }
    cic.rules[rule.claim] = rule;
}

inline void remove_rule(CiCState& cic, ClaimId claim) { cic.rules.erase(claim); }

struct DispatchDecision {
    enum class Kind { Dispatched, Stalled, Reroute };
    Kind kind = Kind::Stalled;
    int core = -1;
    bool oversupply_grant = false;       // chosen core is a spare outside the rule
    bool undersupply_violation = false;  // stalled with undersupply = Reject
};

// Pure dispatch decision for one incoming i-let. Wildcards pick the least
// loaded unmasked core of the whole tile; tagged i-lets are confined to their
// rule's cores (claim filtering precedes any load comparison), optionally
// widened to spare free cores of a tile held exclusively by the same
// application when the rule tolerates oversupply. Ties go to the lowest core
// index.
inline DispatchDecision decide_dispatch(const CiCState& cic, const Machine& machine,
                                        const AgentState& agent, ILetTag tag, AppId app) {
    auto pick = [&](const std::vector<int>& candidates) {
        int best = -1;
        int best_load = 0;
        for (int c : candidates) {
            const int l = cic.load(c);
            if (best < 0 || l < best_load) {
                best = c;
                best_load = l;
            }
        }
        return best;
    };

    if (tag.is_wildcard()) {
        std::vector<int> candidates;
        for (int c = 0; c < cic.core_count(); ++c) {
            if (!cic.masked.count(c)) {
                candidates.push_back(c);
            }
        }
        if (candidates.empty()) {
            return {DispatchDecision::Kind::Stalled, -1, false, false};
        }
        return {DispatchDecision::Kind::Dispatched, pick(candidates), false, false};
    }

    auto it = cic.rules.find(tag.claim);
    if (it == cic.rules.end()) {
        throw std::logic_error("dispatch fault: no rule for claim " + std::to_string(tag.claim) +
                               " on tile " + std::to_string(cic.tile));
    }
    const DispatchRule& rule = it->second;

    std::vector<int> candidates;
    for (int c : rule.cores) {
        if (!cic.masked.count(c)) {
            candidates.push_back(c);
        }
    }
    if (rule.oversupply == SupplyPolicy::Tolerate &&
        tile_exclusively_held_by(machine, agent, cic.tile, app)) {
        for (const Core& core : machine.tiles[cic.tile].cores) {
            if (core.free() && !core.masked && !cic.masked.count(core.id.core)) {
                candidates.push_back(core.id.core);
            }
        }
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    }

    if (candidates.empty()) {
        if (rule.undersupply == SupplyPolicy::Tolerate) {
            return {DispatchDecision::Kind::Reroute, -1, false, false};
        }
        return {DispatchDecision::Kind::Stalled, -1, false, true};
    }
    const int core = pick(candidates);
    const bool grant = !std::binary_search(rule.cores.begin(), rule.cores.end(), core);
    return {DispatchDecision::Kind::Dispatched, core, grant, false};
}

// Excludes the core from dispatching and drains its pending queue; the caller
// re-runs dispatch for each returned i-let in order. A currently executing
// occupant is left to finish.
inline std::vector<IletId> mask_core(CiCState& cic, int core) {
    if (core < 0 || core >= cic.core_count()) {
        throw std::out_of_range("mask_core: core out of range");
    }
    cic.masked.insert(core);
    std::vector<IletId> displaced(cic.queues[core].begin(), cic.queues[core].end());
    cic.queues[core].clear();
    return displaced;
}

inline void unmask_core(CiCState& cic, int core) {
    if (core < 0 || core >= cic.core_count()) {
        throw std::out_of_range("unmask_core: core out of range");
    }
    cic.masked.erase(core);
}

}  // namespace invasim
