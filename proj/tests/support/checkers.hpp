#pragma once

// Trace-level validity checkers shared by the unit and acceptance suites.
// They reconstruct claim and mask state purely from the emitted records.

#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "invasim/trace.hpp"

namespace invasim::testing {

struct ClaimTimeline {
    AppId owner = 0;
    std::string sharing;
    std::string oversupply;
    std::set<CoreId> slots;
};

struct TraceCheckResult {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

// Isolation: every execution of an i-let tagged with claim c happens on a
// core of c, or was an oversupply grant on a tile exclusively held by c's
// owner with oversupply tolerated. Also: no execution starts on a masked
// core, and per-core starts respect dispatch FIFO order.
inline TraceCheckResult check_trace(const std::vector<TraceRecord>& trace) {
    TraceCheckResult result;
    std::map<ClaimId, ClaimTimeline> claims;
    std::set<std::tuple<IletId, int, int>> grants;
    std::set<CoreId> masked;
    std::map<CoreId, std::vector<IletId>> queues;  // dispatch order per core
    std::map<IletId, CoreId> pending;              // last dispatched core per i-let

    auto owner_of_tile = [&](int tile) -> std::vector<AppId> {
        std::vector<AppId> owners;
        for (const auto& [id, view] : claims) {
            for (const CoreId& s : view.slots) {
                if (s.tile == tile) {
                    owners.push_back(view.owner);
                    break;
                }
            }
        }
        return owners;
    };

    for (const TraceRecord& rec : trace) {
        switch (rec.kind) {
            case RecordKind::InvadeOk: {
                const auto claim = static_cast<ClaimId>(rec.get_int("claim"));
                ClaimTimeline& view = claims[claim];
                view.owner = static_cast<AppId>(rec.get_int("app"));
                view.sharing = rec.get("sharing");
                view.oversupply = rec.get("oversupply");
                view.slots.clear();
                for (const CoreId& s : parse_slot_list(rec.get("slots"))) {
                    view.slots.insert(s);
                }
                break;
            }
            case RecordKind::Retreat: {
                const auto claim = static_cast<ClaimId>(rec.get_int("claim"));
                auto it = claims.find(claim);
                if (it == claims.end()) {
                    result.violations.push_back("retreat of unknown claim " +
                                                std::to_string(claim));
                    break;
                }
                std::vector<CoreId> remaining = parse_slot_list(rec.get("slots"));
                it->second.slots = std::set<CoreId>(remaining.begin(), remaining.end());
                if (it->second.slots.empty()) {
                    claims.erase(it);
                }
                break;
            }
            case RecordKind::Mask:
                masked.insert(CoreId{static_cast<int>(rec.get_int("tile")),
                                     static_cast<int>(rec.get_int("core"))});
                break;
            case RecordKind::Unmask:
                masked.erase(CoreId{static_cast<int>(rec.get_int("tile")),
                                    static_cast<int>(rec.get_int("core"))});
                break;
            case RecordKind::OversupplyGrant: {
                const auto claim = static_cast<ClaimId>(rec.get_int("claim"));
                const int tile = static_cast<int>(rec.get_int("tile"));
                auto it = claims.find(claim);
                if (it == claims.end()) {
                    result.violations.push_back("oversupply grant for unknown claim");
                    break;
                }
                if (it->second.oversupply != "tolerate") {
                    result.violations.push_back("oversupply grant for a rejecting claim " +
                                                std::to_string(claim));
                }
                const std::vector<AppId> owners = owner_of_tile(tile);
                for (AppId o : owners) {
                    if (o != it->second.owner) {
                        result.violations.push_back(
                            "oversupply grant on tile not exclusively held, claim " +
                            std::to_string(claim));
                        break;
                    }
                }
                grants.insert({static_cast<IletId>(rec.get_int("ilet")), tile,
                               static_cast<int>(rec.get_int("core"))});
                break;
            }
            case RecordKind::Dispatch: {
                const auto ilet = static_cast<IletId>(rec.get_int("ilet"));
                const CoreId core{static_cast<int>(rec.get_int("tile")),
                                  static_cast<int>(rec.get_int("core"))};
                auto prev = pending.find(ilet);
                if (prev != pending.end()) {
                    // re-dispatch (mask redistribution): drop the stale entry
                    auto& q = queues[prev->second];
                    std::erase(q, ilet);
                }
                pending[ilet] = core;
                queues[core].push_back(ilet);
                break;
            }
            case RecordKind::ExecStart: {
                const auto ilet = static_cast<IletId>(rec.get_int("ilet"));
                const CoreId core{static_cast<int>(rec.get_int("tile")),
                                  static_cast<int>(rec.get_int("core"))};
                if (masked.count(core)) {
                    result.violations.push_back("exec_start on masked core " + to_string(core) +
                                                " at t=" + std::to_string(rec.time));
                }
                auto& q = queues[core];
                if (q.empty() || q.front() != ilet) {
                    result.violations.push_back("per-core FIFO violated on " + to_string(core) +
                                                " for i-let " + std::to_string(ilet));
                } else {
                    q.erase(q.begin());
                }
                pending.erase(ilet);

                const std::string& tag = rec.get("tag");
                if (tag == "wildcard") {
                    break;
                }
                const auto claim = static_cast<ClaimId>(std::stoul(tag));
                auto it = claims.find(claim);
                const bool in_claim = it != claims.end() && it->second.slots.count(core) > 0;
                if (in_claim) {
                    break;
                }
                auto grant = grants.find({ilet, core.tile, core.core});
                if (grant != grants.end()) {
                    grants.erase(grant);
                } else {
                    result.violations.push_back("i-let " + std::to_string(ilet) + " of claim " +
                                                std::to_string(claim) + " executed outside its "
                                                "cores on " + to_string(core));
                }
                break;
            }
            default:
                break;
        }
    }
    return result;
}

// For all-exclusive corpora: no tile ever hosts claims of two applications.
inline TraceCheckResult check_tile_isolation(const std::vector<TraceRecord>& trace) {
    TraceCheckResult result;
    std::map<ClaimId, std::pair<AppId, std::set<int>>> claim_tiles;
    for (const TraceRecord& rec : trace) {
        if (rec.kind == RecordKind::InvadeOk) {
            const auto claim = static_cast<ClaimId>(rec.get_int("claim"));
            auto& entry = claim_tiles[claim];
            entry.first = static_cast<AppId>(rec.get_int("app"));
            entry.second.clear();
            for (const CoreId& s : parse_slot_list(rec.get("slots"))) {
                entry.second.insert(s.tile);
            }
        } else if (rec.kind == RecordKind::Retreat) {
            const auto claim = static_cast<ClaimId>(rec.get_int("claim"));
            auto it = claim_tiles.find(claim);
            if (it == claim_tiles.end()) {
                continue;
            }
            it->second.second.clear();
            for (const CoreId& s : parse_slot_list(rec.get("slots"))) {
                it->second.second.insert(s.tile);
            }
            if (it->second.second.empty()) {
                claim_tiles.erase(it);
            }
        } else {
            continue;
        }
        std::map<int, std::set<AppId>> owners_per_tile;
        for (const auto& [claim, entry] : claim_tiles) {
            for (int t : entry.second) {
                owners_per_tile[t].insert(entry.first);
            }
        }
        for (const auto& [tile, owners] : owners_per_tile) {
            if (owners.size() > 1) {
                result.violations.push_back("tile " + std::to_string(tile) +
                                            " shared by two applications at t=" +
                                            std::to_string(rec.time));
            }
        }
    }
    return result;
}

// Per-i-let stage events must move strictly forward.
inline TraceCheckResult check_stage_order(const std::vector<TraceRecord>& trace) {
    TraceCheckResult result;
    const std::vector<std::string> order = {"instance", "incarnation", "execution", "done"};
    std::map<IletId, int> stage;
    for (const TraceRecord& rec : trace) {
        if (rec.kind != RecordKind::IletStage) {
            continue;
        }
        const auto ilet = static_cast<IletId>(rec.get_int("ilet"));
        const std::string& name = rec.get("stage");
        int index = -1;
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (order[i] == name) {
                index = static_cast<int>(i);
            }
        }
        auto it = stage.find(ilet);
        const int prev = it == stage.end() ? -1 : it->second;
        if (index <= prev) {
            result.violations.push_back("i-let " + std::to_string(ilet) +
                                        " stage moved backwards to " + name);
        }
        stage[ilet] = index;
    }
    return result;
}

// Executions per core, from exec_start records.
inline std::map<CoreId, int> exec_counts(const std::vector<TraceRecord>& trace) {
    std::map<CoreId, int> counts;
    for (const TraceRecord& rec : trace) {
        if (rec.kind == RecordKind::ExecStart) {
            counts[CoreId{static_cast<int>(rec.get_int("tile")),
                          static_cast<int>(rec.get_int("core"))}] += 1;
        }
    }
    return counts;
}

}  // namespace invasim::testing
