#pragma once

#include <map>
#include <set>
#include <variant>
#include <vector>

#include "invasim/constraints.hpp"
#include "invasim/topology.hpp"

namespace invasim {

struct Claim {
    ClaimId id = 0;
    AppId owner = 0;
    std::vector<CoreId> slots;  // sorted ascending
    ConstraintSet constraints;
    Time created_at = 0;

    bool empty() const { return slots.empty(); }
    std::vector<int> tiles() const {
        std::vector<int> out;
        for (const CoreId& s : slots) {
            if (out.empty() || out.back() != s.tile) {
                out.push_back(s.tile);
            }
        }
        return out;
    }
    int cores_on_tile(int tile) const {
        int n = 0;
        for (const CoreId& s : slots) {
            n += (s.tile == tile) ? 1 : 0;
        }
        return n;
    }
    bool holds(CoreId id) const {
        return std::binary_search(slots.begin(), slots.end(), id);
    }
};

enum class RejectReason { Infeasible, Scarcity, Conflict };

inline const char* to_string(RejectReason r) {
    switch (r) {
        case RejectReason::Infeasible: return "infeasible";
        case RejectReason::Scarcity: return "scarcity";
        case RejectReason::Conflict: return "conflict";
    }
    return "?";
}

struct Rejection {
    RejectReason reason;
};

// Fine-grained allocation state above the tile pool: which tiles the agent
// holds and which claims occupy them.
struct AgentState {
    std::set<int> held_tiles;
    std::map<ClaimId, Claim> claims;
    ClaimId next_claim_id = 1;

    const Claim* find_claim(ClaimId id) const {
        auto it = claims.find(id);
        return it == claims.end() ? nullptr : &it->second;
    }
    Claim* find_claim(ClaimId id) {
        auto it = claims.find(id);
        return it == claims.end() ? nullptr : &it->second;
    }
    // Claims with at least one slot on the tile, ascending by id.
    std::vector<ClaimId> residents(int tile) const {
        std::vector<ClaimId> out;
        for (const auto& [id, claim] : claims) {
            if (claim.cores_on_tile(tile) > 0) {
                out.push_back(id);
            }
        }
        return out;
    }
    // Per-tile occupancy view: claim id -> core indices on that tile.
    std::map<ClaimId, std::vector<int>> occupancy(int tile) const {
        std::map<ClaimId, std::vector<int>> out;
        for (const auto& [id, claim] : claims) {
            for (const CoreId& s : claim.slots) {
                if (s.tile == tile) {
                    out[id].push_back(s.core);
                }
            }
        }
        return out;
    }
};

struct AcquireResult {
    bool ok = false;
    std::vector<int> tiles;  // acquired tile indices (empty on shortage)
};

// Coarse-grained level: transfers n pool tiles (lowest indices first) to the
// agent. All-or-nothing; a pool smaller than n yields a shortage and no
// transfer.
inline AcquireResult octopos_acquire(Machine& machine, AgentState& agent, int n) {
    if (n < 1) {
        throw std::invalid_argument("octopos_acquire: tile count must be >= 1");
    }
    std::vector<int> pool;
    for (const Tile& t : machine.tiles) {
        if (t.owner == TileOwner::Pool) {
            pool.push_back(t.id);
        }
    }
    if (static_cast<int>(pool.size()) < n) {
        return {};
    }
    AcquireResult result;
    result.ok = true;
    for (int i = 0; i < n; ++i) {
        machine.tiles[pool[i]].owner = TileOwner::Agent;
        agent.held_tiles.insert(pool[i]);
        result.tiles.push_back(pool[i]);
    }
    return result;
}

struct InvadeSuccess {
    ClaimId claim = 0;
    std::vector<int> acquired_tiles;  // tiles newly transferred from the pool
    std::vector<CoreId> added_slots;
};

using InvadeResult = std::variant<InvadeSuccess, Rejection>;

inline bool invade_ok(const InvadeResult& r) { return std::holds_alternative<InvadeSuccess>(r); }

namespace detail {

// A claim whose sharing scope does not admit spatial co-residency keeps its
// tiles to itself; its unused cores are internal fragmentation.
inline bool monopolizes_tile(Sharing s) { return !spatial_shareable(s); }

struct TileAvail {
    int tile = 0;
    bool self = false;  // already part of the expanding claim
    std::vector<int> cores;  // available core indices, ascending
};

// Whether a claim with sharing mode `s` may place slots on `tile`.
inline bool tile_admits(const Machine& machine, const AgentState& agent, int tile, Sharing s,
                        ClaimId self) {
    std::vector<ClaimId> residents = agent.residents(tile);
    std::erase(residents, self);
    if (residents.empty()) {
        return true;
    }
    if (!spatial_shareable(s)) {
        return false;
    }
    for (ClaimId r : residents) {
        if (!spatial_shareable(agent.find_claim(r)->constraints.sharing)) {
            return false;
        }
    }
    (void)machine;
    return true;
}

// Cores of `tile` a claim with sharing mode `s` could take right now: free
// unmasked cores, plus occupied cores whose every holder admits time-sharing
// when `s` does too.
inline std::vector<int> available_cores(const Machine& machine, const AgentState& agent, int tile,
                                        Sharing s, ClaimId self) {
    std::vector<int> out;
    for (const Core& core : machine.tiles[tile].cores) {
        if (core.masked) {
            continue;
        }
        if (core.free()) {
            out.push_back(core.id.core);
            continue;
        }
        if (!temporal_shareable(s) || core.held_by(self)) {
            continue;
        }
        bool ok = true;
        for (ClaimId h : core.holders) {
            if (!temporal_shareable(agent.find_claim(h)->constraints.sharing)) {
                ok = false;
                break;
            }
        }
        if (ok) {
            out.push_back(core.id.core);
        }
    }
    return out;
}

struct PlacementPlan {
    std::vector<CoreId> slots;        // new slots to take
    std::vector<int> acquired_tiles;  // pool tiles that must be transferred
};

// Shared placement search for invade and expand. `existing_tiles` is empty
// for a fresh invade. Selection: the smallest merged tile footprint that
// reaches the grant target, lower tile indices first, lower core indices
// within a tile; grant target is min(cores_max, achievable) and must be at
// least cores_min.
inline std::variant<PlacementPlan, Rejection> plan_placement(const Machine& machine,
                                                             const AgentState& agent,
                                                             const ConstraintSet& cs,
                                                             Sharing sharing, ClaimId self,
                                                             const std::vector<int>& existing_tiles) {
    const int cap = cs.placement.tile_cap(machine.tile_count());
    const int existing = static_cast<int>(existing_tiles.size());
    if (existing > cap) {
        // Requested placement is narrower than the claim's current footprint.
        return Rejection{RejectReason::Infeasible};
    }

    std::vector<TileAvail> self_avail;
    std::vector<TileAvail> other_avail;
    for (int t = 0; t < machine.tile_count(); ++t) {
        const bool is_self =
            std::find(existing_tiles.begin(), existing_tiles.end(), t) != existing_tiles.end();
        if (!is_self && !tile_admits(machine, agent, t, sharing, self)) {
            continue;
        }
        std::vector<int> cores = available_cores(machine, agent, t, sharing, self);
        if (cores.empty()) {
            continue;
        }
        (is_self ? self_avail : other_avail).push_back(TileAvail{t, is_self, std::move(cores)});
    }

    int base = 0;
    for (const TileAvail& a : self_avail) {
        base += static_cast<int>(a.cores.size());
    }

    // Best achievable core count under the tile cap: self tiles are free of
    // cost, then the largest `cap - existing` other tiles.
    std::vector<int> other_sizes;
    for (const TileAvail& a : other_avail) {
        other_sizes.push_back(static_cast<int>(a.cores.size()));
    }
    std::sort(other_sizes.rbegin(), other_sizes.rend());
    int achievable = base;
    for (int i = 0; i < static_cast<int>(other_sizes.size()) && i < cap - existing; ++i) {
        achievable += other_sizes[i];
    }

    if (achievable < cs.cores_min) {
        // Conflict when ignoring sharing compatibility would have helped,
        // scarcity when the cores simply are not there.
        int hypothetical = base;
        std::vector<int> free_sizes;
        for (int t = 0; t < machine.tile_count(); ++t) {
            if (std::find(existing_tiles.begin(), existing_tiles.end(), t) != existing_tiles.end()) {
                continue;
            }
            int n = 0;
            for (const Core& core : machine.tiles[t].cores) {
                n += (!core.masked && core.free()) ? 1 : 0;
            }
            if (n > 0) {
                free_sizes.push_back(n);
            }
        }
        std::sort(free_sizes.rbegin(), free_sizes.rend());
        for (int i = 0; i < static_cast<int>(free_sizes.size()) && i < cap - existing; ++i) {
            hypothetical += free_sizes[i];
        }
        return Rejection{hypothetical >= cs.cores_min ? RejectReason::Conflict
                                                      : RejectReason::Scarcity};
    }

    const int target = std::min(cs.cores_max, achievable);

    // Smallest set of additional tiles whose availability reaches the target;
    // k-subsets are scanned in lexicographic tile order.
    std::vector<const TileAvail*> chosen;
    for (const TileAvail& a : self_avail) {
        chosen.push_back(&a);
    }
    if (base < target) {
        const int n_other = static_cast<int>(other_avail.size());
        bool found = false;
        for (int k = 1; k <= std::min(cap - existing, n_other) && !found; ++k) {
            std::vector<int> idx(k);
            for (int i = 0; i < k; ++i) {
                idx[i] = i;
            }
            while (true) {
                int sum = base;
                for (int i : idx) {
                    sum += static_cast<int>(other_avail[i].cores.size());
                }
                if (sum >= target) {
                    for (int i : idx) {
                        chosen.push_back(&other_avail[i]);
                    }
                    found = true;
                    break;
                }
                // next combination
                int i = k - 1;
                while (i >= 0 && idx[i] == n_other - k + i) {
                    --i;
                }
                if (i < 0) {
                    break;
                }
                ++idx[i];
                for (int j = i + 1; j < k; ++j) {
                    idx[j] = idx[j - 1] + 1;
                }
            }
        }
        if (!found) {
            throw std::logic_error("plan_placement: achievable target not reached");
        }
    }

    std::sort(chosen.begin(), chosen.end(),
              [](const TileAvail* a, const TileAvail* b) { return a->tile < b->tile; });

    PlacementPlan plan;
    int remaining = target;
    for (const TileAvail* a : chosen) {
        for (int core : a->cores) {
            if (remaining == 0) {
                break;
            }
            plan.slots.push_back(CoreId{a->tile, core});
            --remaining;
        }
        if (remaining == 0) {
            break;
        }
    }
    if (remaining != 0) {
        throw std::logic_error("plan_placement: target not filled");
    }
    for (const CoreId& s : plan.slots) {
        if (machine.tiles[s.tile].owner == TileOwner::Pool &&
            (plan.acquired_tiles.empty() || plan.acquired_tiles.back() != s.tile)) {
            plan.acquired_tiles.push_back(s.tile);
        }
    }
    return plan;
}

inline void commit_plan(Machine& machine, AgentState& agent, Claim& claim,
                        const PlacementPlan& plan) {
    for (int t : plan.acquired_tiles) {
        machine.tiles[t].owner = TileOwner::Agent;
        agent.held_tiles.insert(t);
    }
    for (const CoreId& s : plan.slots) {
        machine.core(s).add_holder(claim.id);
        claim.slots.insert(std::lower_bound(claim.slots.begin(), claim.slots.end(), s), s);
    }
}

}  // namespace detail

inline void check_allocation_consistency(const Machine& machine, const AgentState& agent);

// Constructs a claim for `app` under `cs`. Exclusive (and temporal-only
// shareable) requests only consider virgin tiles; spatially shareable
// requests may join tiles whose residents are all spatially shareable.
// Grants the maximum feasible size within [cores_min, cores_max].
inline InvadeResult invade(AgentState& agent, Machine& machine, AppId app,
                           const ConstraintSet& cs, Time now) {
    require_valid(cs);
    for (const auto& [id, claim] : agent.claims) {
        if (claim.owner == app) {
            throw std::logic_error("invade: application " + std::to_string(app) +
                                   " already holds claim " + std::to_string(id));
        }
    }
    if (!static_feasible(cs, machine)) {
        return Rejection{RejectReason::Infeasible};
    }
    auto planned = detail::plan_placement(machine, agent, cs, cs.sharing, 0, {});
    if (std::holds_alternative<Rejection>(planned)) {
        return std::get<Rejection>(planned);
    }
    const auto& plan = std::get<detail::PlacementPlan>(planned);

    Claim claim;
    claim.id = agent.next_claim_id++;
    claim.owner = app;
    claim.constraints = cs;
    claim.created_at = now;
    detail::commit_plan(machine, agent, claim, plan);

    InvadeSuccess success;
    success.claim = claim.id;
    success.acquired_tiles = plan.acquired_tiles;
    success.added_slots = plan.slots;
    agent.claims.emplace(claim.id, std::move(claim));
    check_allocation_consistency(machine, agent);
    return success;
}

// Adds cores to a live claim. cs.cores_min/cores_max give the additional
// demand; cs.placement constrains the merged slot set; the claim keeps its
// original sharing and supply modes.
inline InvadeResult expand(AgentState& agent, Machine& machine, ClaimId claim_id,
                           const ConstraintSet& cs, Time now) {
    require_valid(cs);
    Claim* claim = agent.find_claim(claim_id);
    if (claim == nullptr) {
        throw std::invalid_argument("expand: claim " + std::to_string(claim_id) + " is not live");
    }
    auto planned = detail::plan_placement(machine, agent, cs, claim->constraints.sharing, claim_id,
                                          claim->tiles());
    if (std::holds_alternative<Rejection>(planned)) {
        return std::get<Rejection>(planned);
    }
    const auto& plan = std::get<detail::PlacementPlan>(planned);
    detail::commit_plan(machine, agent, *claim, plan);
    claim->constraints.placement = cs.placement;
    claim->constraints.cores_max =
        std::max(claim->constraints.cores_max, static_cast<int>(claim->slots.size()));
    (void)now;

    InvadeSuccess success;
    success.claim = claim_id;
    success.acquired_tiles = plan.acquired_tiles;
    success.added_slots = plan.slots;
    check_allocation_consistency(machine, agent);
    return success;
}

struct RetreatResult {
    std::vector<CoreId> released;     // in release order
    std::vector<int> released_tiles;  // tiles returned to the pool, ascending
    bool retired = false;             // claim became empty and its id is dead
};

// Releases `amount` cores (all when nullopt): tiles with the fewest claim
// cores first (lowest index on ties), higher core indices first within a
// tile. Fully freed tiles with no other occupants return to the pool.
inline RetreatResult retreat(AgentState& agent, Machine& machine, ClaimId claim_id,
                             std::optional<int> amount, Time now) {
    (void)now;
    Claim* claim = agent.find_claim(claim_id);
    if (claim == nullptr) {
        throw std::invalid_argument("retreat: claim " + std::to_string(claim_id) + " is not live");
    }
    const int held = static_cast<int>(claim->slots.size());
    int n = amount.value_or(held);
    if (n < 0) {
        throw std::invalid_argument("retreat: negative amount");
    }
    if (n > held) {
        throw std::out_of_range("retreat: releasing " + std::to_string(n) + " of " +
                                std::to_string(held) + " cores");
    }

    std::vector<int> tiles = claim->tiles();
    std::sort(tiles.begin(), tiles.end(), [&](int a, int b) {
        const int ca = claim->cores_on_tile(a);
        const int cb = claim->cores_on_tile(b);
        return ca != cb ? ca < cb : a < b;
    });

    RetreatResult result;
    for (int tile : tiles) {
        if (n == 0) {
            break;
        }
        std::vector<int> cores;
        for (const CoreId& s : claim->slots) {
            if (s.tile == tile) {
                cores.push_back(s.core);
            }
        }
        for (auto it = cores.rbegin(); it != cores.rend() && n > 0; ++it, --n) {
            const CoreId id{tile, *it};
            machine.core(id).remove_holder(claim_id);
            claim->slots.erase(std::lower_bound(claim->slots.begin(), claim->slots.end(), id));
            result.released.push_back(id);
        }
    }

    // Return emptied tiles to the pool.
    std::set<int> touched;
    for (const CoreId& id : result.released) {
        touched.insert(id.tile);
    }
    for (int tile : touched) {
        bool occupied = false;
        for (const Core& core : machine.tiles[tile].cores) {
            if (!core.free()) {
                occupied = true;
                break;
            }
        }
        if (!occupied) {
            machine.tiles[tile].owner = TileOwner::Pool;
            agent.held_tiles.erase(tile);
            result.released_tiles.push_back(tile);
        }
    }

    if (claim->empty()) {
        agent.claims.erase(claim_id);
        result.retired = true;
    }
    check_allocation_consistency(machine, agent);
    return result;
}

// Tile hosts at least one core of `app`'s claims and nothing of anybody else.
inline bool tile_exclusively_held_by(const Machine& machine, const AgentState& agent, int tile,
                                     AppId app) {
    bool any = false;
    for (const Core& core : machine.tiles[tile].cores) {
        for (ClaimId h : core.holders) {
            if (agent.find_claim(h)->owner != app) {
                return false;
            }
            any = true;
        }
    }
    return any;
}

// Spare cores on tiles monopolized by a single (non-spatially-shareable)
// claim; the internal-fragmentation count at this instant.
inline int internal_fragmentation_cores(const Machine& machine, const AgentState& agent) {
    int total = 0;
    for (const Tile& tile : machine.tiles) {
        std::vector<ClaimId> residents = agent.residents(tile.id);
        if (residents.empty()) {
            continue;
        }
        bool monopolized = true;
        for (ClaimId r : residents) {
            if (!detail::monopolizes_tile(agent.find_claim(r)->constraints.sharing)) {
                monopolized = false;
                break;
            }
        }
        if (!monopolized) {
            continue;
        }
        int allocated = 0;
        for (const Core& core : tile.cores) {
            allocated += core.free() ? 0 : 1;
        }
        total += static_cast<int>(tile.cores.size()) - allocated;
    }
    return total;
}

inline void check_allocation_consistency(const Machine& machine, const AgentState& agent) {
    check_machine(machine);
    // Claim slots and core holders must mirror each other.
    for (const auto& [id, claim] : agent.claims) {
        if (claim.id != id || claim.slots.empty()) {
            throw std::logic_error("agent: malformed claim record");
        }
        for (const CoreId& s : claim.slots) {
            if (!machine.valid_core(s) || !machine.core(s).held_by(id)) {
                throw std::logic_error("agent: claim slot not backed by core holder");
            }
        }
    }
    for (const Tile& tile : machine.tiles) {
        for (const Core& core : tile.cores) {
            for (ClaimId h : core.holders) {
                const Claim* claim = agent.find_claim(h);
                if (claim == nullptr || !claim->holds(core.id)) {
                    throw std::logic_error("agent: core holder without claim slot");
                }
            }
            if (core.holders.size() > 1) {
                for (ClaimId h : core.holders) {
                    if (!temporal_shareable(agent.find_claim(h)->constraints.sharing)) {
                        throw std::logic_error("agent: time-shared core with non-temporal claim");
                    }
                }
            }
        }
    }
    // Tile-level isolation: a claim that does not share spatially never
    // cohabits a tile with another application's claim.
    for (const auto& [id, claim] : agent.claims) {
        if (spatial_shareable(claim.constraints.sharing)) {
            continue;
        }
        for (int tile : claim.tiles()) {
            for (ClaimId r : agent.residents(tile)) {
                if (agent.find_claim(r)->owner != claim.owner) {
                    throw std::logic_error("agent: exclusivity violated on tile " +
                                           std::to_string(tile));
                }
            }
        }
    }
    // Placement compliance.
    for (const auto& [id, claim] : agent.claims) {
        const int cap = claim.constraints.placement.tile_cap(machine.tile_count());
        if (static_cast<int>(claim.tiles().size()) > cap) {
            throw std::logic_error("agent: claim violates its placement constraint");
        }
    }
    // Tile ownership matches occupancy; pool + held = all tiles.
    for (const Tile& tile : machine.tiles) {
        bool occupied = false;
        for (const Core& core : tile.cores) {
            occupied = occupied || !core.free();
        }
        const bool held = agent.held_tiles.count(tile.id) > 0;
        if (held != (tile.owner == TileOwner::Agent)) {
            throw std::logic_error("agent: held_tiles and tile owner disagree");
        }
        if (occupied && !held) {
            throw std::logic_error("agent: occupied tile not held");
        }
        if (!occupied && held) {
            throw std::logic_error("agent: held tile with no occupancy");
        }
    }
}

}  // namespace invasim
