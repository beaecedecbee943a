#pragma once

#include <charconv>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "invasim/trace.hpp"

namespace invasim {

struct Metrics {
    int total_cores = 0;
    int cores_per_tile = 0;
    Time horizon = 0;
    std::vector<std::int64_t> core_busy;   // per flat core index, time units
    std::vector<double> core_utilization;  // busy / horizon
    std::int64_t frag_core_time = 0;       // time-integral of fragmented spare cores
    double internal_fragmentation = 0.0;   // frag_core_time / (horizon * total cores)
    std::map<AppId, Time> makespan;        // first invade attempt to exit, completed apps
    int undersupply_violations = 0;
    int oversupply_grants = 0;
    int isolation_breaches = 0;  // must be 0 in every valid run

    bool operator==(const Metrics&) const = default;
};

namespace detail {

struct ClaimView {
    AppId owner = 0;
    bool spatial = false;  // sharing admits tile co-residency
    std::set<CoreId> slots;
};

// Fragmented spare cores right now: tiles occupied solely by claims that do
// not share spatially contribute (cores_per_tile - occupied).
inline int frag_cores_now(const std::map<ClaimId, ClaimView>& claims, int tiles,
                          int cores_per_tile) {
    int total = 0;
    for (int t = 0; t < tiles; ++t) {
        std::set<int> occupied;
        bool any = false;
        bool monopolized = true;
        for (const auto& [id, view] : claims) {
            for (const CoreId& s : view.slots) {
                if (s.tile == t) {
                    any = true;
                    occupied.insert(s.core);
                    monopolized = monopolized && !view.spatial;
                }
            }
        }
        if (any && monopolized) {
            total += cores_per_tile - static_cast<int>(occupied.size());
        }
    }
    return total;
}

inline double format_safe_div(std::int64_t num, std::int64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace detail

// Recomputes all metrics purely from an emitted trace. Throws
// std::runtime_error on a malformed trace.
inline Metrics compute_metrics(std::span<const TraceRecord> trace) {
    Metrics m;
    if (trace.empty()) {
        return m;
    }
    if (trace.front().kind != RecordKind::RunBegin) {
        throw std::runtime_error("trace: first record must be run_begin");
    }
    if (trace.back().kind != RecordKind::RunEnd) {
        throw std::runtime_error("trace: last record must be run_end");
    }
    const int tiles = static_cast<int>(trace.front().get_int("tiles"));
    m.cores_per_tile = static_cast<int>(trace.front().get_int("cores_per_tile"));
    m.total_cores = tiles * m.cores_per_tile;
    m.horizon = trace.back().time;
    m.core_busy.assign(m.total_cores, 0);

    std::map<ClaimId, detail::ClaimView> claims;
    std::map<IletId, std::pair<Time, int>> open_exec;  // ilet -> (start, flat core)
    std::set<std::tuple<IletId, int, int>> grants;     // (ilet, tile, core) pending
    std::map<AppId, Time> first_invade;
    std::map<AppId, Time> exit_time;
    std::int64_t frag_now = 0;
    Time frag_since = 0;

    Time prev_time = -1;
    std::uint64_t prev_seq = 0;
    auto flat = [&](int tile, int core) { return tile * m.cores_per_tile + core; };

    for (const TraceRecord& rec : trace) {
        if (rec.time < prev_time || (rec.time == prev_time && rec.seq <= prev_seq &&
                                     !(rec.kind == RecordKind::RunBegin))) {
            throw std::runtime_error("trace: records out of (time, seq) order");
        }
        prev_time = rec.time;
        prev_seq = rec.seq;

        switch (rec.kind) {
            case RecordKind::InvadeOk: {
                m.frag_core_time += frag_now * (rec.time - frag_since);
                frag_since = rec.time;
                const auto app = static_cast<AppId>(rec.get_int("app"));
                const auto claim = static_cast<ClaimId>(rec.get_int("claim"));
                if (!first_invade.count(app)) {
                    first_invade[app] = rec.time;
                }
                detail::ClaimView& view = claims[claim];
                view.owner = app;
                const std::string& sharing = rec.get("sharing");
                view.spatial = sharing == "spatial" || sharing == "both";
                view.slots.clear();
                for (const CoreId& s : parse_slot_list(rec.get("slots"))) {
                    view.slots.insert(s);
                }
                frag_now = detail::frag_cores_now(claims, tiles, m.cores_per_tile);
                break;
            }
            case RecordKind::InvadeRejected: {
                const auto app = static_cast<AppId>(rec.get_int("app"));
                if (!first_invade.count(app)) {
                    first_invade[app] = rec.time;
                }
                break;
            }
            case RecordKind::Retreat: {
                m.frag_core_time += frag_now * (rec.time - frag_since);
                frag_since = rec.time;
                const auto claim = static_cast<ClaimId>(rec.get_int("claim"));
                auto it = claims.find(claim);
                if (it == claims.end()) {
                    throw std::runtime_error("trace: retreat of unknown claim");
                }
                std::vector<CoreId> remaining = parse_slot_list(rec.get("slots"));
                it->second.slots = std::set<CoreId>(remaining.begin(), remaining.end());
                if (it->second.slots.empty()) {
                    claims.erase(it);
                }
                frag_now = detail::frag_cores_now(claims, tiles, m.cores_per_tile);
                break;
            }
            case RecordKind::PhaseChange: {
                if (rec.get("to") == std::string("exited")) {
                    exit_time[static_cast<AppId>(rec.get_int("app"))] = rec.time;
                }
                break;
            }
            case RecordKind::AppAborted: {
                exit_time[static_cast<AppId>(rec.get_int("app"))] = rec.time;
                break;
            }
            case RecordKind::OversupplyGrant: {
                m.oversupply_grants += 1;
                grants.insert({static_cast<IletId>(rec.get_int("ilet")),
                               static_cast<int>(rec.get_int("tile")),
                               static_cast<int>(rec.get_int("core"))});
                break;
            }
            case RecordKind::UndersupplyViolation: {
                m.undersupply_violations += 1;
                break;
            }
            case RecordKind::ExecStart: {
                const auto ilet = static_cast<IletId>(rec.get_int("ilet"));
                const int tile = static_cast<int>(rec.get_int("tile"));
                const int core = static_cast<int>(rec.get_int("core"));
                if (open_exec.count(ilet)) {
                    throw std::runtime_error("trace: nested exec_start for one i-let");
                }
                open_exec[ilet] = {rec.time, flat(tile, core)};
                const std::string& tag = rec.get("tag");
                if (tag != "wildcard") {
                    const auto claim = static_cast<ClaimId>(std::stoll(tag));
                    auto it = claims.find(claim);
                    const bool in_claim =
                        it != claims.end() && it->second.slots.count(CoreId{tile, core}) > 0;
                    if (!in_claim) {
                        auto grant = grants.find({ilet, tile, core});
                        if (grant != grants.end()) {
                            grants.erase(grant);
                        } else {
                            m.isolation_breaches += 1;
                        }
                    }
                }
                break;
            }
            case RecordKind::ExecEnd: {
                const auto ilet = static_cast<IletId>(rec.get_int("ilet"));
                auto it = open_exec.find(ilet);
                if (it == open_exec.end()) {
                    throw std::runtime_error("trace: exec_end without exec_start");
                }
                m.core_busy[it->second.second] += rec.time - it->second.first;
                open_exec.erase(it);
                break;
            }
            default:
                break;
        }
    }

    // Close out the observation window.
    m.frag_core_time += frag_now * (m.horizon - frag_since);
    for (const auto& [ilet, exec] : open_exec) {
        m.core_busy[exec.second] += m.horizon - exec.first;
    }
    m.core_utilization.resize(m.total_cores);
    for (int i = 0; i < m.total_cores; ++i) {
        m.core_utilization[i] = detail::format_safe_div(m.core_busy[i], m.horizon);
    }
    m.internal_fragmentation =
        detail::format_safe_div(m.frag_core_time, m.horizon * m.total_cores);
    for (const auto& [app, t0] : first_invade) {
        auto it = exit_time.find(app);
        if (it != exit_time.end()) {
            m.makespan[app] = it->second - t0;
        }
    }
    return m;
}

namespace detail {

inline std::string format_metric_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 6);
    if (ec != std::errc{}) {
        return "0.000000";
    }
    return std::string(buf, ptr);
}

}  // namespace detail

// Tabular summary: a header row, one row per core, one per app, one aggregate.
inline std::string metrics_table(const Metrics& m) {
    std::string out =
        "kind\tid\tutilization\tbusy_time\tmakespan\tinternal_fragmentation\t"
        "undersupply_violations\toversupply_grants\tisolation_breaches\n";
    for (int i = 0; i < m.total_cores; ++i) {
        const CoreId id{m.cores_per_tile == 0 ? 0 : i / m.cores_per_tile,
                        m.cores_per_tile == 0 ? 0 : i % m.cores_per_tile};
        out += "core\t" + to_string(id) + "\t" + detail::format_metric_double(m.core_utilization[i]) +
               "\t" + std::to_string(m.core_busy[i]) + "\t-\t-\t-\t-\t-\n";
    }
    for (const auto& [app, span] : m.makespan) {
        out += "app\t" + std::to_string(app) + "\t-\t-\t" + std::to_string(span) + "\t-\t-\t-\t-\n";
    }
    out += "aggregate\t-\t-\t-\t-\t" + detail::format_metric_double(m.internal_fragmentation) +
           "\t" + std::to_string(m.undersupply_violations) + "\t" +
           std::to_string(m.oversupply_grants) + "\t" + std::to_string(m.isolation_breaches) +
           "\n";
    return out;
}

}  // namespace invasim
