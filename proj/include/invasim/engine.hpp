#pragma once

#include <queue>
#include <random>
#include <tuple>

#include "invasim/allocator.hpp"
#include "invasim/cic.hpp"
#include "invasim/lifecycle.hpp"
#include "invasim/metrics.hpp"
#include "invasim/scenario.hpp"
#include "invasim/temp_model.hpp"
#include "invasim/trace.hpp"

namespace invasim {

enum class EventKind {
    InvadeReq,
    InfectReq,
    RetreatReq,
    Arrival,
    ExecStart,
    ExecEnd,
    TempTick,
    Mask,
    Unmask,
};

struct RunResult {
    std::vector<TraceRecord> trace;
    Metrics metrics;
    bool deadlock = false;
    std::vector<AppId> blocked_apps;
    bool truncated = false;  // stopped at the horizon cap
};

// Deterministic discrete-event simulation of one scenario. Events are
// processed in (time, seq) order with seq assigned at scheduling time; the
// seeded RNG is consulted only for scripted duration ranges, so identical
// (scenario, seed) pairs produce byte-identical traces.
class Simulation {
  public:
    Simulation(Scenario scenario, std::uint64_t seed, std::optional<Time> horizon = std::nullopt)
        : scenario_(std::move(scenario)),
          cap_(horizon),
          seed_(seed),
          machine_(build_machine(scenario_.topology)),
          temp_(scenario_.temp),
          rng_(seed) {
        require_valid(temp_);
        for (int t = 0; t < machine_.tile_count(); ++t) {
            cics_.emplace_back(t, machine_.cores_per_tile());
        }
        const int n = machine_.total_cores();
        executing_.assign(n, 0);
        exec_began_.assign(n, 0);
        last_exec_end_.assign(n, -1);
        busy_.assign(n, 0);
        for (const AppScript& app : scenario_.apps) {
            AppRt rt;
            rt.state.app = app.id;
            rt.script = &app;
            apps_.emplace(app.id, rt);
        }
    }

    RunResult run() {
        RunResult result;
        if (scenario_.apps.empty() || (cap_ && *cap_ <= 0)) {
            return result;  // empty trace, zero metrics
        }

        emit(RecordKind::RunBegin)
            .with("tiles", scenario_.topology.tiles)
            .with("cores_per_tile", scenario_.topology.cores_per_tile)
            .with("noc_hop_latency", static_cast<std::int64_t>(scenario_.topology.noc_hop_latency))
            .with("seed", seed_);
        for (const AppScript& app : scenario_.apps) {
            schedule_action(app.id, app.arrival);
        }

        while (!queue_.empty()) {
            Event ev = queue_.top();
            if (cap_ && ev.time >= *cap_) {
                truncated_ = true;
                break;
            }
            queue_.pop();
            now_ = ev.time;
            switch (ev.kind) {
                case EventKind::InvadeReq: on_invade_req(ev.app); break;
                case EventKind::InfectReq: on_infect_req(ev.app); break;
                case EventKind::RetreatReq: on_retreat_req(ev.app); break;
                case EventKind::Arrival: on_arrival(ev.ilet, ev.tile); break;
                case EventKind::ExecStart: on_exec_start(ev.ilet, ev.tile, ev.core); break;
                case EventKind::ExecEnd: on_exec_end(ev.ilet, ev.tile, ev.core); break;
                case EventKind::TempTick: on_temp_tick(); break;
                case EventKind::Mask: on_mask(ev.tile, ev.core); break;
                case EventKind::Unmask: on_unmask(ev.tile, ev.core); break;
            }
        }

        const Time horizon = truncated_ ? *cap_ : now_;
        now_ = horizon;

        if (!truncated_) {
            for (const auto& [id, rt] : apps_) {
                if (!rt.aborted && phase(rt.state) != AppPhase::Exited &&
                    (rt.waiting_invade || rt.team.has_value() ||
                     rt.state.script_pos < rt.script->script.size())) {
                    result.blocked_apps.push_back(id);
                }
            }
        }
        result.deadlock = !result.blocked_apps.empty();
        if (result.deadlock) {
            std::string list;
            for (AppId id : result.blocked_apps) {
                if (!list.empty()) {
                    list += ',';
                }
                list += std::to_string(id);
            }
            emit(RecordKind::Deadlock).with("apps", list);
        }
        emit(RecordKind::RunEnd)
            .with("reason", truncated_       ? std::string("horizon")
                            : result.deadlock ? std::string("deadlock")
                                              : std::string("quiescence"));

        // Close the observation window for the online accumulators.
        frag_integral_ += frag_now_ * (horizon - frag_since_);
        Metrics m;
        m.total_cores = machine_.total_cores();
        m.cores_per_tile = machine_.cores_per_tile();
        m.horizon = horizon;
        m.core_busy = busy_;
        for (int g = 0; g < m.total_cores; ++g) {
            if (executing_[g]) {
                m.core_busy[g] += horizon - exec_began_[g];
            }
        }
        m.core_utilization.resize(m.total_cores);
        for (int g = 0; g < m.total_cores; ++g) {
            m.core_utilization[g] =
                horizon == 0 ? 0.0 : static_cast<double>(m.core_busy[g]) / static_cast<double>(horizon);
        }
        m.frag_core_time = frag_integral_;
        m.internal_fragmentation =
            horizon == 0 ? 0.0
                         : static_cast<double>(frag_integral_) /
                               static_cast<double>(horizon * m.total_cores);
        m.undersupply_violations = undersupply_violations_;
        m.oversupply_grants = oversupply_grants_;
        m.isolation_breaches = isolation_breaches_;
        for (const auto& [app, t0] : first_invade_) {
            auto it = exit_time_.find(app);
            if (it != exit_time_.end()) {
                m.makespan[app] = it->second - t0;
            }
        }

        // Dual-path check: the trace must reproduce the online accumulation.
        Metrics recomputed = compute_metrics(trace_);
        if (!(recomputed == m)) {
            throw std::logic_error("metrics/trace disagreement");
        }

        result.trace = std::move(trace_);
        result.metrics = std::move(m);
        result.truncated = truncated_;
        return result;
    }

  private:
    struct Event {
        Time time = 0;
        std::uint64_t seq = 0;
        EventKind kind = EventKind::TempTick;
        AppId app = 0;
        IletId ilet = 0;
        int tile = -1;
        int core = -1;
    };
    struct EventAfter {
        bool operator()(const Event& a, const Event& b) const {
            return a.time != b.time ? a.time > b.time : a.seq > b.seq;
        }
    };

    struct AppRt {
        AppState state;
        const AppScript* script = nullptr;
        bool aborted = false;
        bool waiting_invade = false;
        std::optional<int> team;  // in-flight team index
    };

    struct PendingInvade {
        AppId app = 0;
        Time requested = 0;
        std::uint64_t order = 0;
        ConstraintSet cs;
        bool resize = false;
    };

    // --- scheduling and trace plumbing -------------------------------------

    void schedule(Time t, EventKind kind, AppId app = 0, IletId ilet = 0, int tile = -1,
                  int core = -1) {
        queue_.push(Event{t, event_seq_++, kind, app, ilet, tile, core});
    }

    TraceRecord& emit(RecordKind kind) {
        trace_.emplace_back(now_, record_seq_++, kind);
        return trace_.back();
    }

    static std::string tag_value(const ILetTag& tag) {
        return tag.is_wildcard() ? "wildcard" : std::to_string(tag.claim);
    }

    int flat(int tile, int core) const { return tile * machine_.cores_per_tile() + core; }

    Time sample_uniform(Time lo, Time hi) {
        const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
        if (range <= 1) {
            return lo;
        }
        // Rejection keeps the draw unbiased; mt19937_64 output is standardized,
        // so the sequence is identical on every platform.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
        std::uint64_t x = rng_();
        while (x >= limit) {
            x = rng_();
        }
        return lo + static_cast<Time>(x % range);
    }

    // Advance the fragmentation integral to `now_` and re-count. Mirrors one
    // allocation record on the trace-reader side, so call exactly once per
    // invade_ok / retreat record.
    void frag_checkpoint() {
        frag_integral_ += frag_now_ * (now_ - frag_since_);
        frag_since_ = now_;
        frag_now_ = internal_fragmentation_cores(machine_, agent_);
    }

    void schedule_action(AppId app, Time t) {
        AppRt& rt = apps_.at(app);
        if (rt.aborted || rt.state.script_pos >= rt.script->script.size()) {
            return;
        }
        const ScriptAction& action = rt.script->script[rt.state.script_pos];
        if (std::holds_alternative<InvadeAction>(action)) {
            invade_reqs_at_[t] += 1;
            schedule(t, EventKind::InvadeReq, app);
        } else if (std::holds_alternative<InfectAction>(action)) {
            schedule(t, EventKind::InfectReq, app);
        } else {
            schedule(t, EventKind::RetreatReq, app);
        }
    }

    void note_first_invade(AppId app) {
        if (!first_invade_.count(app)) {
            first_invade_[app] = now_;
        }
    }

    void abort_app(AppId app, const std::string& reason) {
        AppRt& rt = apps_.at(app);
        emit(RecordKind::AppAborted).with("app", app).with("reason", reason);
        rt.aborted = true;
        rt.waiting_invade = false;
        if (!exit_time_.count(app)) {
            exit_time_[app] = now_;
        }
        std::erase_if(pending_, [&](const PendingInvade& p) { return p.app == app; });
        if (rt.state.claim) {
            force_release(app, *rt.state.claim);
            rt.state.claim.reset();
        }
    }

    // Runtime reclamation of an aborted application's claim.
    void force_release(AppId app, ClaimId claim_id) {
        const Claim* claim = agent_.find_claim(claim_id);
        if (claim == nullptr) {
            return;
        }
        assert_claim_quiescent(claim_id);
        std::vector<int> tiles = claim->tiles();
        RetreatResult res = retreat(agent_, machine_, claim_id, std::nullopt, now_);
        emit(RecordKind::Retreat)
            .with("app", app)
            .with("claim", claim_id)
            .with("released", format_slot_list(res.released))
            .with("slots", std::string("-"));
        frag_checkpoint();
        for (int t : tiles) {
            remove_rule(cics_[t], claim_id);
        }
        for (int t : res.released_tiles) {
            emit(RecordKind::TileReleased).with("tile", t);
        }
        drain_invades();
    }

    void assert_claim_quiescent(ClaimId claim_id) const {
        for (const auto& [id, ilet] : ilets_) {
            if (ilet.tag && ilet.tag->claim == claim_id && ilet.stage != IletStage::Done) {
                throw std::logic_error("retreat ordering violated: i-let " + std::to_string(id) +
                                       " of claim " + std::to_string(claim_id) + " still live");
            }
        }
    }

    // --- invade path --------------------------------------------------------

    void on_invade_req(AppId app) {
        auto at = invade_reqs_at_.find(now_);
        if (at != invade_reqs_at_.end() && --at->second == 0) {
            invade_reqs_at_.erase(at);
        }
        handle_invade_request(app);
        // Serve the batch once all simultaneous requests are visible, so the
        // benefit arbitration sees its contenders.
        if (!invade_reqs_at_.count(now_)) {
            drain_invades();
        }
    }

    void handle_invade_request(AppId app) {
        AppRt& rt = apps_.at(app);
        if (rt.aborted) {
            return;
        }
        const auto& action = std::get<InvadeAction>(rt.script->script[rt.state.script_pos]);

        if (!statechart::next(rt.state.node, AppAction::Invade)) {
            abort_app(app, "statechart_violation_invade");
            return;
        }
        const bool resize = rt.state.node == statechart::Node::Infect;

        ConstraintSet cs = action.parsed;
        if (!action.candidates.empty()) {
            std::vector<ConstraintSet> refined;
            for (const CandidateSpec& cand : action.candidates) {
                refined.push_back(cand.parsed);
            }
            auto selected = select_candidate(refined, machine_);
            if (!selected) {
                abort_app(app, "no_feasible_candidate");
                return;
            }
            emit(RecordKind::CandidateSelected)
                .with("app", app)
                .with("index", static_cast<std::int64_t>(*selected));
            cs = refined[*selected];
        }

        if (!static_feasible(cs, machine_)) {
            note_first_invade(app);
            emit(RecordKind::InvadeRejected)
                .with("app", app)
                .with("reason", std::string(to_string(RejectReason::Infeasible)));
            abort_app(app, "infeasible_constraints");
            return;
        }

        note_first_invade(app);
        rt.waiting_invade = true;
        pending_.push_back(PendingInvade{app, now_, pending_order_++, cs, resize});
    }

    // Serves pending invades: arrival order first, simultaneous requests by
    // benefit per requested core (higher first), application id on ties.
    void drain_invades() {
        if (draining_) {
            redrain_ = true;  // resources were freed mid-drain; run another pass
            return;
        }
        if (pending_.empty()) {
            return;
        }
        draining_ = true;
        do {
            redrain_ = false;
            std::vector<PendingInvade> batch = std::move(pending_);
            pending_.clear();
            std::sort(batch.begin(), batch.end(), [](const PendingInvade& a, const PendingInvade& b) {
                if (a.requested != b.requested) {
                    return a.requested < b.requested;
                }
                const double ba = a.cs.benefit / static_cast<double>(a.cs.cores_min);
                const double bb = b.cs.benefit / static_cast<double>(b.cs.cores_min);
                if (ba != bb) {
                    return ba > bb;
                }
                if (a.app != b.app) {
                    return a.app < b.app;
                }
                return a.order < b.order;
            });

            for (PendingInvade& req : batch) {
                if (apps_.at(req.app).aborted) {
                    continue;
                }
                InvadeResult result =
                    req.resize ? expand(agent_, machine_, *apps_.at(req.app).state.claim, req.cs, now_)
                               : invade(agent_, machine_, req.app, req.cs, now_);
                if (const auto* rejection = std::get_if<Rejection>(&result)) {
                    emit(RecordKind::InvadeRejected)
                        .with("app", req.app)
                        .with("reason", std::string(to_string(rejection->reason)));
                    if (rejection->reason == RejectReason::Infeasible) {
                        // A resize whose placement is narrower than the claim's
                        // current footprint can never succeed.
                        abort_app(req.app, "infeasible_resize");
                    } else {
                        pending_.push_back(std::move(req));
                    }
                    continue;
                }
                apply_invade_success(req.app, std::get<InvadeSuccess>(result));
            }
        } while (redrain_ && !pending_.empty());
        draining_ = false;
    }

    void apply_invade_success(AppId app, const InvadeSuccess& success) {
        AppRt& rt = apps_.at(app);
        rt.waiting_invade = false;
        const AppPhase before = phase(rt.state);
        step(rt.state, AppAction::Invade, true);
        rt.state.claim = success.claim;

        for (int t : success.acquired_tiles) {
            emit(RecordKind::TileAcquired).with("tile", t);
        }
        const Claim& claim = *agent_.find_claim(success.claim);
        const char* sharing = claim.constraints.sharing == Sharing::Exclusive ? "exclusive"
                              : claim.constraints.sharing == Sharing::SpatialShareable ? "spatial"
                              : claim.constraints.sharing == Sharing::TemporalShareable
                                  ? "temporal"
                                  : "both";
        emit(RecordKind::InvadeOk)
            .with("app", app)
            .with("claim", claim.id)
            .with("slots", format_slot_list(claim.slots))
            .with("sharing", std::string(sharing))
            .with("oversupply", std::string(claim.constraints.oversupply == SupplyPolicy::Tolerate
                                                ? "tolerate"
                                                : "reject"))
            .with("undersupply", std::string(claim.constraints.undersupply == SupplyPolicy::Tolerate
                                                 ? "tolerate"
                                                 : "reject"));
        frag_checkpoint();
        emit(RecordKind::PhaseChange)
            .with("app", app)
            .with("from", std::string(to_string(before)))
            .with("to", std::string(to_string(phase(rt.state))));

        for (int t : claim.tiles()) {
            DispatchRule rule;
            rule.claim = claim.id;
            for (const CoreId& s : claim.slots) {
                if (s.tile == t) {
                    rule.cores.push_back(s.core);
                }
            }
            rule.oversupply = claim.constraints.oversupply;
            rule.undersupply = claim.constraints.undersupply;
            install_rule(cics_[t], rule);
        }

        rt.state.script_pos += 1;
        schedule_action(app, now_);
    }

    // --- infect path --------------------------------------------------------

    void on_infect_req(AppId app) {
        AppRt& rt = apps_.at(app);
        if (rt.aborted) {
            return;
        }
        const auto& action = std::get<InfectAction>(rt.script->script[rt.state.script_pos]);
        if (!statechart::next(rt.state.node, AppAction::Infect)) {
            abort_app(app, "statechart_violation_infect");
            return;
        }
        if (action.ilets.empty()) {
            emit(RecordKind::Warning).with("app", app).with("reason", std::string("empty_team"));
            rt.state.script_pos += 1;
            schedule_action(app, now_);
            return;
        }

        const AppPhase before = phase(rt.state);
        step(rt.state, AppAction::Infect, true);
        if (before != AppPhase::Infected) {
            emit(RecordKind::PhaseChange)
                .with("app", app)
                .with("from", std::string(to_string(before)))
                .with("to", std::string(to_string(AppPhase::Infected)));
        }

        const ClaimId claim_id = *rt.state.claim;
        const Claim& claim = *agent_.find_claim(claim_id);

        Team team;
        team.id = static_cast<int>(teams_.size());
        team.app = app;
        team.claim = claim_id;
        emit(RecordKind::TeamAssembled)
            .with("app", app)
            .with("team", team.id)
            .with("claim", claim_id)
            .with("size", static_cast<std::int64_t>(action.ilets.size()));
        for (const IletSpec& spec : action.ilets) {
            ILet ilet;
            ilet.id = next_ilet_++;
            ilet.app = app;
            ilet.team = team.id;
            ilet.entry = spec.entry;
            ilet.wildcard_requested = spec.wildcard;
            ilet.duration = spec.duration ? *spec.duration
                                          : sample_uniform(spec.duration_range->first,
                                                           spec.duration_range->second);
            advance_stage(ilet, IletStage::Instance);
            emit(RecordKind::IletStage)
                .with("ilet", ilet.id)
                .with("stage", std::string(to_string(IletStage::Instance)));
            team.ilets.push_back(ilet.id);
            ilets_.emplace(ilet.id, std::move(ilet));
        }

        // Tile apportionment proportional to the claim's per-tile core counts.
        const std::vector<int> tiles = claim.tiles();
        std::vector<int> weights;
        for (int t : tiles) {
            weights.push_back(claim.cores_on_tile(t));
        }
        const std::vector<int> counts =
            apportion_largest_remainder(static_cast<int>(team.ilets.size()), weights);
        const int origin = tiles.front();

        std::size_t next = 0;
        for (std::size_t ti = 0; ti < tiles.size(); ++ti) {
            for (int k = 0; k < counts[ti]; ++k) {
                ILet& ilet = ilets_.at(team.ilets[next++]);
                ilet.tag = ilet.wildcard_requested ? ILetTag::wildcard()
                                                   : ILetTag::for_claim(claim_id);
                ilet.deployed_tile = tiles[ti];
                advance_stage(ilet, IletStage::Incarnation);
                emit(RecordKind::IletStage)
                    .with("ilet", ilet.id)
                    .with("stage", std::string(to_string(IletStage::Incarnation)));
                const Time delay = tiles[ti] == origin ? 0 : machine_.noc_hop_latency;
                schedule(now_ + delay, EventKind::Arrival, app, ilet.id, tiles[ti]);
            }
        }

        rt.team = team.id;
        teams_.push_back(std::move(team));
    }

    // --- dispatch path ------------------------------------------------------

    void on_arrival(IletId ilet_id, int tile) {
        ILet& ilet = ilets_.at(ilet_id);
        ilet.deployed_tile = tile;
        dispatch_at(tile, ilet_id);
    }

    void dispatch_at(int tile, IletId ilet_id) {
        ILet& ilet = ilets_.at(ilet_id);
        CiCState& cic = cics_[tile];
        const DispatchDecision decision =
            decide_dispatch(cic, machine_, agent_, *ilet.tag, ilet.app);
        switch (decision.kind) {
            case DispatchDecision::Kind::Dispatched: {
                emit(RecordKind::Dispatch)
                    .with("ilet", ilet_id)
                    .with("tile", tile)
                    .with("core", decision.core)
                    .with("tag", tag_value(*ilet.tag));
                if (decision.oversupply_grant) {
                    emit(RecordKind::OversupplyGrant)
                        .with("claim", ilet.tag->claim)
                        .with("ilet", ilet_id)
                        .with("tile", tile)
                        .with("core", decision.core);
                    oversupply_grants_ += 1;
                    grants_pending_.insert({ilet_id, tile, decision.core});
                }
                cic.queues[decision.core].push_back(ilet_id);
                try_start(tile, decision.core);
                break;
            }
            case DispatchDecision::Kind::Stalled: {
                cic.stalled.push_back({ilet_id, stall_seq_++});
                emit(RecordKind::Stall).with("ilet", ilet_id).with("tile", tile);
                if (decision.undersupply_violation) {
                    emit(RecordKind::UndersupplyViolation)
                        .with("claim", ilet.tag->claim)
                        .with("ilet", ilet_id)
                        .with("tile", tile);
                    undersupply_violations_ += 1;
                }
                break;
            }
            case DispatchDecision::Kind::Reroute: {
                const int target = reroute_target(ilet.tag->claim, tile);
                if (target >= 0) {
                    schedule(now_ + machine_.noc_hop_latency, EventKind::Arrival, ilet.app,
                             ilet_id, target);
                } else {
                    // Undersupply is tolerated but no tile of the claim has an
                    // eligible core; wait for an unmask.
                    cic.stalled.push_back({ilet_id, stall_seq_++});
                    emit(RecordKind::Stall).with("ilet", ilet_id).with("tile", tile);
                }
                break;
            }
        }
    }

    int reroute_target(ClaimId claim_id, int exclude_tile) const {
        const Claim* claim = agent_.find_claim(claim_id);
        if (claim == nullptr) {
            return -1;
        }
        for (int t : claim->tiles()) {
            if (t == exclude_tile) {
                continue;
            }
            auto rule = cics_[t].rules.find(claim_id);
            if (rule == cics_[t].rules.end()) {
                continue;
            }
            for (int c : rule->second.cores) {
                if (!cics_[t].masked.count(c)) {
                    return t;
                }
            }
        }
        return -1;
    }

    void try_start(int tile, int core) {
        CiCState& cic = cics_[tile];
        CiCState::CoreSlot& slot = cic.slots[core];
        if (slot.occupant || cic.masked.count(core) || cic.queues[core].empty()) {
            return;
        }
        slot.occupant = cic.queues[core].front();
        slot.started = false;
        cic.queues[core].pop_front();
        schedule(now_, EventKind::ExecStart, 0, *slot.occupant, tile, core);
    }

    void on_exec_start(IletId ilet_id, int tile, int core) {
        CiCState& cic = cics_[tile];
        CiCState::CoreSlot& slot = cic.slots[core];
        if (!slot.occupant || *slot.occupant != ilet_id) {
            throw std::logic_error("exec_start: core slot occupant mismatch");
        }
        ILet& ilet = ilets_.at(ilet_id);
        if (cic.masked.count(core)) {
            // The core was masked between the start decision and this event;
            // put the i-let back through the dispatcher.
            slot.occupant.reset();
            dispatch_at(tile, ilet_id);
            return;
        }
        slot.started = true;
        const int g = flat(tile, core);
        executing_[g] = 1;
        exec_began_[g] = now_;
        machine_.core(CoreId{tile, core}).busy_until = now_ + ilet.duration;
        advance_stage(ilet, IletStage::Execution);
        emit(RecordKind::ExecStart)
            .with("ilet", ilet_id)
            .with("tile", tile)
            .with("core", core)
            .with("tag", tag_value(*ilet.tag));
        emit(RecordKind::IletStage)
            .with("ilet", ilet_id)
            .with("stage", std::string(to_string(IletStage::Execution)));
        if (!ilet.tag->is_wildcard()) {
            const Claim* claim = agent_.find_claim(ilet.tag->claim);
            const bool in_claim = claim != nullptr && claim->holds(CoreId{tile, core});
            if (!in_claim) {
                auto grant = grants_pending_.find({ilet_id, tile, core});
                if (grant != grants_pending_.end()) {
                    grants_pending_.erase(grant);
                } else {
                    isolation_breaches_ += 1;
                }
            }
        }
        ensure_tick();
        schedule(now_ + ilet.duration, EventKind::ExecEnd, ilet.app, ilet_id, tile, core);
    }

    void on_exec_end(IletId ilet_id, int tile, int core) {
        ILet& ilet = ilets_.at(ilet_id);
        CiCState& cic = cics_[tile];
        CiCState::CoreSlot& slot = cic.slots[core];
        const int g = flat(tile, core);
        executing_[g] = 0;
        last_exec_end_[g] = now_;
        busy_[g] += now_ - exec_began_[g];
        machine_.core(CoreId{tile, core}).busy_until.reset();
        slot.occupant.reset();
        slot.started = false;
        emit(RecordKind::ExecEnd).with("ilet", ilet_id).with("tile", tile).with("core", core);
        advance_stage(ilet, IletStage::Done);
        emit(RecordKind::IletStage)
            .with("ilet", ilet_id)
            .with("stage", std::string(to_string(IletStage::Done)));

        Team& team = teams_[ilet.team];
        if (on_execution_complete(team)) {
            emit(RecordKind::TeamComplete).with("app", team.app).with("team", team.id);
            AppRt& rt = apps_.at(team.app);
            rt.team.reset();
            rt.state.script_pos += 1;
            schedule_action(team.app, now_);
        }
        try_start(tile, core);
    }

    // --- retreat path -------------------------------------------------------

    void on_retreat_req(AppId app) {
        AppRt& rt = apps_.at(app);
        if (rt.aborted) {
            return;
        }
        const auto& action = std::get<RetreatAction>(rt.script->script[rt.state.script_pos]);
        if (!statechart::next(rt.state.node, AppAction::Retreat)) {
            abort_app(app, "statechart_violation_retreat");
            return;
        }
        const ClaimId claim_id = *rt.state.claim;
        assert_claim_quiescent(claim_id);

        const Claim* claim = agent_.find_claim(claim_id);
        std::vector<int> tiles_before = claim->tiles();
        RetreatResult res;
        try {
            res = retreat(agent_, machine_, claim_id, action.amount, now_);
        } catch (const std::out_of_range&) {
            abort_app(app, "retreat_range_error");
            return;
        }

        const AppPhase before = phase(rt.state);
        step(rt.state, AppAction::Retreat, !res.retired);
        claim = agent_.find_claim(claim_id);

        emit(RecordKind::Retreat)
            .with("app", app)
            .with("claim", claim_id)
            .with("released", format_slot_list(res.released))
            .with("slots", claim == nullptr ? std::string("-") : format_slot_list(claim->slots));
        frag_checkpoint();

        std::set<int> touched;
        for (const CoreId& id : res.released) {
            touched.insert(id.tile);
        }
        for (int t : touched) {
            if (claim == nullptr || claim->cores_on_tile(t) == 0) {
                remove_rule(cics_[t], claim_id);
            } else {
                DispatchRule rule;
                rule.claim = claim_id;
                for (const CoreId& s : claim->slots) {
                    if (s.tile == t) {
                        rule.cores.push_back(s.core);
                    }
                }
                rule.oversupply = claim->constraints.oversupply;
                rule.undersupply = claim->constraints.undersupply;
                install_rule(cics_[t], rule);
            }
        }
        for (int t : res.released_tiles) {
            emit(RecordKind::TileReleased).with("tile", t);
        }
        emit(RecordKind::PhaseChange)
            .with("app", app)
            .with("from", std::string(to_string(before)))
            .with("to", std::string(to_string(phase(rt.state))));

        if (res.retired) {
            rt.state.claim.reset();
            exit_time_[app] = now_;
            rt.state.script_pos += 1;
            if (rt.state.script_pos < rt.script->script.size()) {
                emit(RecordKind::Warning)
                    .with("app", app)
                    .with("reason", std::string("script_abandoned_after_exit"));
                rt.state.script_pos = rt.script->script.size();
            }
        } else {
            rt.state.script_pos += 1;
            schedule_action(app, now_);
        }
        drain_invades();
    }

    // --- thermal path -------------------------------------------------------

    void ensure_tick() {
        if (tick_scheduled_) {
            return;
        }
        const Time next = (now_ / temp_.tick + 1) * temp_.tick;
        schedule(next, EventKind::TempTick);
        tick_scheduled_ = true;
    }

    bool tick_needed() const {
        for (int g = 0; g < machine_.total_cores(); ++g) {
            if (executing_[g]) {
                return true;
            }
        }
        if (temp_.cool_rate <= 0.0) {
            return false;
        }
        for (const Tile& tile : machine_.tiles) {
            for (const Core& core : tile.cores) {
                if (core.temperature > 0.0) {
                    return true;
                }
            }
        }
        return false;
    }

    void on_temp_tick() {
        tick_scheduled_ = false;
        std::vector<char> busy(machine_.total_cores(), 0);
        for (int g = 0; g < machine_.total_cores(); ++g) {
            busy[g] = executing_[g] || last_exec_end_[g] > now_ - temp_.tick;
        }
        const TempStepResult result = temp_step(machine_, temp_, busy);
        for (const CoreId& id : result.mask) {
            schedule(now_, EventKind::Mask, 0, 0, id.tile, id.core);
        }
        for (const CoreId& id : result.unmask) {
            schedule(now_, EventKind::Unmask, 0, 0, id.tile, id.core);
        }
        if (tick_needed()) {
            schedule(now_ + temp_.tick, EventKind::TempTick);
            tick_scheduled_ = true;
        }
    }

    void on_mask(int tile, int core) {
        machine_.core(CoreId{tile, core}).masked = true;
        std::vector<IletId> displaced = mask_core(cics_[tile], core);
        emit(RecordKind::Mask).with("tile", tile).with("core", core);
        for (IletId ilet : displaced) {
            dispatch_at(tile, ilet);
        }
    }

    void on_unmask(int tile, int core) {
        machine_.core(CoreId{tile, core}).masked = false;
        unmask_core(cics_[tile], core);
        emit(RecordKind::Unmask).with("tile", tile).with("core", core);
        retry_stalled();
        drain_invades();
    }

    // Re-dispatch stalled i-lets whose claims regained a candidate core, in
    // global stall order.
    void retry_stalled() {
        std::vector<std::tuple<std::uint64_t, int, IletId>> entries;
        for (const CiCState& cic : cics_) {
            for (const CiCState::StalledIlet& s : cic.stalled) {
                entries.emplace_back(s.order, cic.tile, s.ilet);
            }
        }
        std::sort(entries.begin(), entries.end());
        for (const auto& [order, tile, ilet_id] : entries) {
            ILet& ilet = ilets_.at(ilet_id);
            CiCState& cic = cics_[tile];
            const DispatchDecision decision =
                decide_dispatch(cic, machine_, agent_, *ilet.tag, ilet.app);
            auto unstall = [&]() {
                std::erase_if(cic.stalled,
                              [&](const CiCState::StalledIlet& s) { return s.ilet == ilet_id; });
            };
            switch (decision.kind) {
                case DispatchDecision::Kind::Dispatched: {
                    unstall();
                    emit(RecordKind::Dispatch)
                        .with("ilet", ilet_id)
                        .with("tile", tile)
                        .with("core", decision.core)
                        .with("tag", tag_value(*ilet.tag));
                    if (decision.oversupply_grant) {
                        emit(RecordKind::OversupplyGrant)
                            .with("claim", ilet.tag->claim)
                            .with("ilet", ilet_id)
                            .with("tile", tile)
                            .with("core", decision.core);
                        oversupply_grants_ += 1;
                        grants_pending_.insert({ilet_id, tile, decision.core});
                    }
                    cic.queues[decision.core].push_back(ilet_id);
                    try_start(tile, decision.core);
                    break;
                }
                case DispatchDecision::Kind::Reroute: {
                    const int target = reroute_target(ilet.tag->claim, tile);
                    if (target >= 0) {
                        unstall();
                        schedule(now_ + machine_.noc_hop_latency, EventKind::Arrival, ilet.app,
                                 ilet_id, target);
                    }
                    break;
                }
                case DispatchDecision::Kind::Stalled:
                    break;  // keep waiting, original stall order preserved
            }
        }
    }

    // --- state --------------------------------------------------------------

    Scenario scenario_;
    std::optional<Time> cap_;
    std::uint64_t seed_ = 0;
    Machine machine_;
    AgentState agent_;
    std::vector<CiCState> cics_;
    TempModel temp_ = {};
    std::mt19937_64 rng_;

    std::map<AppId, AppRt> apps_;
    std::map<IletId, ILet> ilets_;
    std::vector<Team> teams_;
    IletId next_ilet_ = 1;

    std::priority_queue<Event, std::vector<Event>, EventAfter> queue_;
    std::uint64_t event_seq_ = 1;
    std::uint64_t record_seq_ = 0;
    Time now_ = 0;
    bool truncated_ = false;

    std::map<Time, int> invade_reqs_at_;
    std::vector<PendingInvade> pending_;
    std::uint64_t pending_order_ = 0;
    bool draining_ = false;
    bool redrain_ = false;
    std::uint64_t stall_seq_ = 0;

    std::vector<char> executing_;
    std::vector<Time> exec_began_;
    std::vector<Time> last_exec_end_;
    bool tick_scheduled_ = false;

    std::vector<TraceRecord> trace_;
    std::vector<std::int64_t> busy_;
    std::int64_t frag_now_ = 0;
    Time frag_since_ = 0;
    std::int64_t frag_integral_ = 0;
    int oversupply_grants_ = 0;
    int undersupply_violations_ = 0;
    int isolation_breaches_ = 0;
    std::set<std::tuple<IletId, int, int>> grants_pending_;
    std::map<AppId, Time> first_invade_;
    std::map<AppId, Time> exit_time_;
};

inline RunResult run_scenario(const Scenario& scenario, std::uint64_t seed,
                              std::optional<Time> horizon = std::nullopt) {
    Simulation sim(scenario, seed, horizon);
    return sim.run();
}

}  // namespace invasim
