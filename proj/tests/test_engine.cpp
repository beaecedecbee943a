#include <catch2/catch_amalgamated.hpp>

#include "invasim/engine.hpp"
#include "support/checkers.hpp"
#include "support/generators.hpp"

using namespace invasim;

namespace {

ConstraintSet cs_of(const std::string& text) {
    ParseResult r = parse_constraints(text);
    REQUIRE(parse_ok(r));
    return std::get<ConstraintSet>(r);
}

InvadeAction invade_action(const std::string& text) {
    InvadeAction a;
    a.constraints = text;
    a.parsed = cs_of(text);
    return a;
}

InfectAction infect_action(std::vector<Time> durations, bool wildcard = false) {
    InfectAction a;
    for (Time d : durations) {
        IletSpec spec;
        spec.duration = d;
        spec.wildcard = wildcard;
        a.ilets.push_back(spec);
    }
    return a;
}

RetreatAction retreat_all() { return RetreatAction{std::nullopt}; }

std::vector<const TraceRecord*> records_of(const RunResult& r, RecordKind kind) {
    std::vector<const TraceRecord*> out;
    for (const TraceRecord& rec : r.trace) {
        if (rec.kind == kind) {
            out.push_back(&rec);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("an empty scenario produces an empty trace and zero metrics", "[engine]") {
    Scenario scenario;
    scenario.topology = {2, 4, 1};
    const RunResult r = run_scenario(scenario, 1);
    REQUIRE(r.trace.empty());
    REQUIRE(r.metrics == Metrics{});
    REQUIRE_FALSE(r.deadlock);
}

TEST_CASE("single-app schedule matches the hand computation", "[engine]") {
    Scenario scenario;
    scenario.topology = {1, 4, 1};
    AppScript app;
    app.id = 1;
    app.arrival = 0;
    app.script = {invade_action("cores(1)"), infect_action({10}), retreat_all()};
    scenario.apps = {app};

    const RunResult r = run_scenario(scenario, 0);
    REQUIRE_FALSE(r.deadlock);

    // invade, deploy and start at t=0; end at 10; retreat at 10
    REQUIRE(records_of(r, RecordKind::InvadeOk).size() == 1);
    REQUIRE(records_of(r, RecordKind::InvadeOk)[0]->time == 0);
    REQUIRE(records_of(r, RecordKind::ExecStart).size() == 1);
    REQUIRE(records_of(r, RecordKind::ExecStart)[0]->time == 0);
    REQUIRE(records_of(r, RecordKind::ExecEnd)[0]->time == 10);
    REQUIRE(records_of(r, RecordKind::Retreat)[0]->time == 10);
    REQUIRE(records_of(r, RecordKind::TileReleased).size() == 1);

    // the core heats to 10 by t=10 and cools at 2/tick: quiescent at t=15
    REQUIRE(r.metrics.horizon == 15);
    REQUIRE(r.metrics.core_busy[0] == 10);
    REQUIRE(r.metrics.core_utilization[0] == 10.0 / 15.0);
    REQUIRE(r.metrics.makespan.at(1) == 10);
    // 3 spare cores on the exclusively held tile for 10 time units
    REQUIRE(r.metrics.frag_core_time == 30);
    REQUIRE(r.metrics.internal_fragmentation == 30.0 / (15.0 * 4.0));
    REQUIRE(r.metrics.isolation_breaches == 0);

    const auto checked = testing::check_trace(r.trace);
    CAPTURE(checked.violations);
    REQUIRE(checked.ok());
}

TEST_CASE("identical scenario and seed replay byte for byte", "[engine]") {
    for (std::uint64_t i = 0; i < 3; ++i) {
        const Scenario scenario = testing::random_scenario(900 + i);
        const RunResult a = run_scenario(scenario, 42);
        const RunResult b = run_scenario(scenario, 42);
        REQUIRE(serialize_trace(a.trace) == serialize_trace(b.trace));
        REQUIRE(a.metrics == b.metrics);
    }
}

TEST_CASE("duration ranges depend on the seed", "[engine]") {
    Scenario scenario;
    scenario.topology = {1, 2, 1};
    AppScript app;
    app.id = 1;
    app.arrival = 0;
    InfectAction infect;
    IletSpec spec;
    spec.duration_range = {1, 1000};
    infect.ilets = {spec};
    app.script = {invade_action("cores(1)"), infect, retreat_all()};
    scenario.apps = {app};

    const RunResult a = run_scenario(scenario, 1);
    const RunResult b = run_scenario(scenario, 2);
    REQUIRE(serialize_trace(a.trace) != serialize_trace(b.trace));
}

TEST_CASE("temp_step follows the linear hysteresis model", "[engine]") {
    Machine m = build_machine({1, 1, 1});
    TempModel model;  // heat 1, cool 2, t_high 100, t_low 50, tick 1

    // busy from temperature 0: mask lands exactly on tick 100
    int mask_tick = -1;
    for (int tick = 1; tick <= 120 && mask_tick < 0; ++tick) {
        const TempStepResult r = temp_step(m, model, {1});
        if (!r.mask.empty()) {
            mask_tick = tick;
            m.core({0, 0}).masked = true;
        }
    }
    REQUIRE(mask_tick == 100);
    REQUIRE(m.core({0, 0}).temperature == 100.0);

    // idle cooling from 100 at 2/tick: unmask 25 ticks later
    int unmask_tick = -1;
    for (int tick = 1; tick <= 60 && unmask_tick < 0; ++tick) {
        const TempStepResult r = temp_step(m, model, {0});
        if (!r.unmask.empty()) {
            unmask_tick = tick;
            m.core({0, 0}).masked = false;
        }
    }
    REQUIRE(unmask_tick == 25);
    REQUIRE(m.core({0, 0}).temperature == 50.0);

    // cool the rest of the way; the floor holds at zero
    for (int tick = 0; tick < 30; ++tick) {
        temp_step(m, model, {0});
    }
    REQUIRE(m.core({0, 0}).temperature == 0.0);
    const TempStepResult r = temp_step(m, model, {0});
    REQUIRE(m.core({0, 0}).temperature == 0.0);
    REQUIRE(r.mask.empty());
    REQUIRE(r.unmask.empty());
}

TEST_CASE("a saturating workload masks at 100 and unmasks 25 ticks after idle", "[engine]") {
    Scenario scenario;
    scenario.topology = {1, 2, 1};
    AppScript app;
    app.id = 1;
    app.arrival = 0;
    app.script = {invade_action("cores(1)"), infect_action({100}), retreat_all()};
    scenario.apps = {app};

    const RunResult r = run_scenario(scenario, 0);
    const auto masks = records_of(r, RecordKind::Mask);
    const auto unmasks = records_of(r, RecordKind::Unmask);
    REQUIRE(masks.size() == 1);
    REQUIRE(unmasks.size() == 1);
    REQUIRE(masks[0]->time == 100);
    REQUIRE(unmasks[0]->time == 125);  // idle at 100, cooling 100 -> 50 at 2/tick

    // no exec_start between mask and unmask
    bool in_masked_window = false;
    for (const TraceRecord& rec : r.trace) {
        if (rec.kind == RecordKind::Mask) {
            in_masked_window = true;
        } else if (rec.kind == RecordKind::Unmask) {
            in_masked_window = false;
        } else if (rec.kind == RecordKind::ExecStart) {
            REQUIRE_FALSE(in_masked_window);
        }
    }
}

TEST_CASE("work queued behind a masked core waits for the unmask", "[engine]") {
    Scenario scenario;
    scenario.topology = {1, 2, 1};
    AppScript app;
    app.id = 1;
    app.arrival = 0;
    app.script = {invade_action("cores(1) & undersupply(tolerate)"),
                  infect_action({100, 50}), retreat_all()};
    scenario.apps = {app};

    const RunResult r = run_scenario(scenario, 0);
    REQUIRE_FALSE(r.deadlock);
    const auto checked = testing::check_trace(r.trace);
    CAPTURE(checked.violations);
    REQUIRE(checked.ok());
    REQUIRE(records_of(r, RecordKind::ExecEnd).size() == 2);
    REQUIRE(r.metrics.undersupply_violations == 0);
}

TEST_CASE("undersupply reject records a violation and stalls", "[engine]") {
    Scenario scenario;
    scenario.topology = {2, 1, 1};
    scenario.temp = {1.0, 2.0, 10.0, 4.0, 1};
    AppScript app;
    app.id = 1;
    app.arrival = 0;
    app.script = {invade_action("cores(2)"), infect_action({12, 12}),
                  infect_action({2, 2}), retreat_all()};
    scenario.apps = {app};

    const RunResult r = run_scenario(scenario, 0);
    REQUIRE_FALSE(r.deadlock);
    REQUIRE(r.metrics.undersupply_violations >= 1);
    REQUIRE(records_of(r, RecordKind::Stall).size() >= 1);
    REQUIRE(records_of(r, RecordKind::ExecEnd).size() == 4);
    const auto checked = testing::check_trace(r.trace);
    CAPTURE(checked.violations);
    REQUIRE(checked.ok());
}

TEST_CASE("undersupply tolerate reroutes to the claim's other tile", "[engine]") {
    Scenario scenario;
    scenario.topology = {2, 1, 1};
    scenario.temp = {1.0, 2.0, 10.0, 4.0, 1};
    AppScript app;
    app.id = 1;
    app.arrival = 0;
    app.script = {invade_action("cores(2) & undersupply(tolerate)"), infect_action({12, 12}),
                  infect_action({2, 2}), retreat_all()};
    scenario.apps = {app};

    const RunResult r = run_scenario(scenario, 0);
    REQUIRE_FALSE(r.deadlock);
    REQUIRE(r.metrics.undersupply_violations == 0);
    REQUIRE(records_of(r, RecordKind::ExecEnd).size() == 4);
    const auto checked = testing::check_trace(r.trace);
    CAPTURE(checked.violations);
    REQUIRE(checked.ok());
}

TEST_CASE("oversupply grants spill onto spare cores and are traced", "[engine]") {
    Scenario scenario;
    scenario.topology = {1, 4, 1};
    AppScript app;
    app.id = 1;
    app.arrival = 0;
    app.script = {invade_action("cores(2) & sametile & oversupply(tolerate)"),
                  infect_action({10, 10, 10, 10}), retreat_all()};
    scenario.apps = {app};

    const RunResult r = run_scenario(scenario, 0);
    REQUIRE(r.metrics.oversupply_grants >= 2);
    REQUIRE(r.metrics.isolation_breaches == 0);
    // the four equal i-lets finish together by spilling onto the spares
    for (const TraceRecord* rec : records_of(r, RecordKind::ExecEnd)) {
        REQUIRE(rec->time == 10);
    }
    const auto checked = testing::check_trace(r.trace);
    CAPTURE(checked.violations);
    REQUIRE(checked.ok());
}

TEST_CASE("a waiting invade is granted once resources free up", "[engine]") {
    Scenario scenario;
    scenario.topology = {1, 4, 1};
    AppScript first;
    first.id = 1;
    first.arrival = 0;
    first.script = {invade_action("cores(4)"), infect_action({5}), retreat_all()};
    AppScript second;
    second.id = 2;
    second.arrival = 1;
    second.script = {invade_action("cores(2)"), infect_action({3}), retreat_all()};
    scenario.apps = {first, second};

    const RunResult r = run_scenario(scenario, 0);
    REQUIRE_FALSE(r.deadlock);
    bool rejected_at_1 = false;
    bool granted_at_5 = false;
    for (const TraceRecord& rec : r.trace) {
        if (rec.kind == RecordKind::InvadeRejected && rec.get_int("app") == 2) {
            REQUIRE(rec.get("reason") == "scarcity");
            rejected_at_1 = rejected_at_1 || rec.time == 1;
        }
        if (rec.kind == RecordKind::InvadeOk && rec.get_int("app") == 2) {
            granted_at_5 = rec.time == 5;
        }
    }
    REQUIRE(rejected_at_1);
    REQUIRE(granted_at_5);
    // makespan counts from the first attempt, not the grant
    REQUIRE(r.metrics.makespan.at(2) == (5 + 3) - 1);
}

TEST_CASE("simultaneous contention is arbitrated by benefit per core", "[engine]") {
    Scenario scenario;
    scenario.topology = {1, 4, 1};
    AppScript low;
    low.id = 1;
    low.arrival = 0;
    low.script = {invade_action("cores(3) & benefit(1)"), infect_action({4}), retreat_all()};
    AppScript high;
    high.id = 2;
    high.arrival = 0;
    high.script = {invade_action("cores(3) & benefit(9)"), infect_action({4}), retreat_all()};
    scenario.apps = {low, high};

    const RunResult r = run_scenario(scenario, 0);
    REQUIRE_FALSE(r.deadlock);
    // app 2 offers 3 benefit per requested core against app 1's 1/3
    std::vector<std::pair<Time, AppId>> grants;
    for (const TraceRecord& rec : r.trace) {
        if (rec.kind == RecordKind::InvadeOk) {
            grants.emplace_back(rec.time, static_cast<AppId>(rec.get_int("app")));
        }
    }
    REQUIRE(grants.size() == 2);
    REQUIRE(grants[0] == std::pair<Time, AppId>{0, 2});
    REQUIRE(grants[1].second == 1);  // served after the winner retreats

    // equal benefits fall back to the lower application id
    Scenario tie = scenario;
    std::get<InvadeAction>(tie.apps[0].script[0]) = invade_action("cores(3) & benefit(9)");
    const RunResult t = run_scenario(tie, 0);
    for (const TraceRecord& rec : t.trace) {
        if (rec.kind == RecordKind::InvadeOk) {
            REQUIRE(rec.get_int("app") == 1);
            break;
        }
    }
}

TEST_CASE("retreating more than granted aborts the application", "[engine]") {
    Scenario scenario;
    scenario.topology = {1, 4, 1};
    AppScript app;
    app.id = 1;
    app.arrival = 0;
    RetreatAction too_many;
    too_many.amount = 9;
    app.script = {invade_action("cores(2)"), infect_action({1}), too_many};
    scenario.apps = {app};

    const RunResult r = run_scenario(scenario, 0);
    const auto aborted = records_of(r, RecordKind::AppAborted);
    REQUIRE(aborted.size() == 1);
    REQUIRE(aborted[0]->get("reason") == "retreat_range_error");
    // the runtime reclaims the aborted application's claim
    REQUIRE(records_of(r, RecordKind::TileReleased).size() == 1);
    REQUIRE_FALSE(r.deadlock);
}

TEST_CASE("a time-shared core interleaves the two claims FIFO", "[engine]") {
    Scenario scenario;
    scenario.topology = {1, 1, 1};
    AppScript first;
    first.id = 1;
    first.arrival = 0;
    first.script = {invade_action("cores(1) & shareable(both)"), infect_action({5}),
                    retreat_all()};
    AppScript second;
    second.id = 2;
    second.arrival = 0;
    second.script = {invade_action("cores(1) & shareable(both)"), infect_action({3}),
                     retreat_all()};
    scenario.apps = {first, second};

    const RunResult r = run_scenario(scenario, 0);
    REQUIRE_FALSE(r.deadlock);
    const auto starts = records_of(r, RecordKind::ExecStart);
    REQUIRE(starts.size() == 2);
    REQUIRE(starts[0]->time == 0);
    REQUIRE(starts[1]->time == 5);  // queued behind the first claim's i-let
    REQUIRE(r.metrics.core_busy[0] == 8);
    const auto checked = testing::check_trace(r.trace);
    CAPTURE(checked.violations);
    REQUIRE(checked.ok());
}

TEST_CASE("blocked applications are reported as a deadlock", "[engine]") {
    Scenario scenario;
    scenario.topology = {1, 4, 1};
    AppScript hog;
    hog.id = 1;
    hog.arrival = 0;
    hog.script = {invade_action("cores(4)"), infect_action({5})};  // never retreats
    AppScript starved;
    starved.id = 2;
    starved.arrival = 0;
    starved.script = {invade_action("cores(1)"), infect_action({1}), retreat_all()};
    scenario.apps = {hog, starved};

    const RunResult r = run_scenario(scenario, 0);
    REQUIRE(r.deadlock);
    REQUIRE(r.blocked_apps == std::vector<AppId>{2});
    const auto deadlocks = records_of(r, RecordKind::Deadlock);
    REQUIRE(deadlocks.size() == 1);
    REQUIRE(deadlocks[0]->get("apps") == "2");
}

TEST_CASE("infeasible constraints abort the application", "[engine]") {
    Scenario scenario;
    scenario.topology = {2, 4, 1};
    AppScript app;
    app.id = 1;
    app.arrival = 0;
    app.script = {invade_action("cores(5) & sametile"), infect_action({1}), retreat_all()};
    scenario.apps = {app};

    const RunResult r = run_scenario(scenario, 0);
    REQUIRE_FALSE(r.deadlock);
    REQUIRE(records_of(r, RecordKind::AppAborted).size() == 1);
    const auto rejected = records_of(r, RecordKind::InvadeRejected);
    REQUIRE(rejected.size() == 1);
    REQUIRE(rejected[0]->get("reason") == "infeasible");
}

TEST_CASE("candidates fall through to the first feasible refinement", "[engine]") {
    Scenario scenario;
    scenario.topology = {2, 4, 1};
    AppScript app;
    app.id = 1;
    app.arrival = 0;
    InvadeAction inv = invade_action("cores(1)");
    CandidateSpec big;
    big.constraints = "cores(8) & sametile";
    big.parsed = cs_of(big.constraints);
    CandidateSpec small;
    small.constraints = "cores(4) & sametile";
    small.parsed = cs_of(small.constraints);
    inv.candidates = {big, small};
    app.script = {inv, infect_action({2}), retreat_all()};
    scenario.apps = {app};

    const RunResult r = run_scenario(scenario, 0);
    const auto selected = records_of(r, RecordKind::CandidateSelected);
    REQUIRE(selected.size() == 1);
    REQUIRE(selected[0]->get_int("index") == 1);
    const auto ok = records_of(r, RecordKind::InvadeOk);
    REQUIRE(ok.size() == 1);
    REQUIRE(parse_slot_list(ok[0]->get("slots")).size() == 4);
}

TEST_CASE("an empty team is a warned no-op", "[engine]") {
    Scenario scenario;
    scenario.topology = {1, 2, 1};
    AppScript app;
    app.id = 1;
    app.arrival = 0;
    InfectAction empty;
    app.script = {invade_action("cores(1)"), empty, infect_action({2}), retreat_all()};
    scenario.apps = {app};

    const RunResult r = run_scenario(scenario, 0);
    REQUIRE_FALSE(r.deadlock);
    const auto warnings = records_of(r, RecordKind::Warning);
    REQUIRE(warnings.size() == 1);
    REQUIRE(warnings[0]->get("reason") == "empty_team");
    REQUIRE(records_of(r, RecordKind::ExecEnd).size() == 1);
}

TEST_CASE("multi-tile teams deploy proportionally with hop latency", "[engine]") {
    Scenario scenario;
    scenario.topology = {2, 4, 2};  // hop latency 2
    AppScript app;
    app.id = 1;
    app.arrival = 0;
    // 4 + 2 cores across two tiles; 6 i-lets -> 4 and 2
    app.script = {invade_action("cores(6) & maxtiles(2)"),
                  infect_action({3, 3, 3, 3, 3, 3}), retreat_all()};
    scenario.apps = {app};

    const RunResult r = run_scenario(scenario, 0);
    int tile0 = 0;
    int tile1 = 0;
    for (const TraceRecord* rec : records_of(r, RecordKind::ExecStart)) {
        (rec->get_int("tile") == 0 ? tile0 : tile1) += 1;
        // origin is tile 0; deployments to tile 1 arrive 2 units later
        REQUIRE(rec->time == (rec->get_int("tile") == 0 ? 0 : 2));
    }
    REQUIRE(tile0 == 4);
    REQUIRE(tile1 == 2);
}

TEST_CASE("a horizon cap truncates the run cleanly", "[engine]") {
    Scenario scenario;
    scenario.topology = {1, 4, 1};
    AppScript app;
    app.id = 1;
    app.arrival = 0;
    app.script = {invade_action("cores(1)"), infect_action({10}), retreat_all()};
    scenario.apps = {app};

    const RunResult zero = run_scenario(scenario, 0, 0);
    REQUIRE(zero.trace.empty());
    REQUIRE(zero.metrics == Metrics{});

    const RunResult cut = run_scenario(scenario, 0, 3);
    REQUIRE(cut.truncated);
    REQUIRE(cut.metrics.horizon == 3);
    REQUIRE(cut.metrics.core_busy[0] == 3);  // execution clipped at the window
    REQUIRE(cut.trace.back().kind == RecordKind::RunEnd);
    REQUIRE(cut.trace.back().get("reason") == "horizon");
}

TEST_CASE("metrics recomputed from a parsed trace match the online path", "[engine]") {
    for (std::uint64_t i = 0; i < 12; ++i) {
        const Scenario scenario = testing::random_scenario(3000 + i);
        const RunResult r = run_scenario(scenario, i);
        const std::string bytes = serialize_trace(r.trace);
        const Metrics reread = compute_metrics(parse_trace(bytes));
        REQUIRE(reread == r.metrics);
    }
}

TEST_CASE("randomized scenarios keep every trace-level invariant", "[engine]") {
    for (std::uint64_t i = 0; i < 40; ++i) {
        testing::ScenarioOptions opts;
        opts.enable_temp_pressure = i % 2 == 1;
        const Scenario scenario = testing::random_scenario(5000 + i, opts);
        const RunResult r = run_scenario(scenario, i, 100000);
        const auto isolation = testing::check_trace(r.trace);
        CAPTURE(i, isolation.violations);
        REQUIRE(isolation.ok());
        const auto stages = testing::check_stage_order(r.trace);
        CAPTURE(stages.violations);
        REQUIRE(stages.ok());
        REQUIRE(r.metrics.isolation_breaches == 0);
    }
}

TEST_CASE("compute_metrics rejects malformed traces", "[engine]") {
    REQUIRE_THROWS_AS(compute_metrics(parse_trace("time=0 seq=0 kind=exec_start ilet=1 tile=0 "
                                                  "core=0 tag=wildcard\n")),
                      std::runtime_error);
    REQUIRE_THROWS_AS(
        compute_metrics(parse_trace(
            "time=0 seq=0 kind=run_begin tiles=1 cores_per_tile=1 noc_hop_latency=1 seed=0\n"
            "time=1 seq=1 kind=exec_end ilet=1 tile=0 core=0\n"
            "time=2 seq=2 kind=run_end reason=quiescence\n")),
        std::runtime_error);
    REQUIRE_THROWS(parse_trace("time=0 seq=0 kind=not_a_kind\n"));
}
