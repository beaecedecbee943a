#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "invasim/cic.hpp"
#include "invasim/constraints.hpp"

namespace invasim {

enum class AppAction { Invade, Infect, Retreat, Exit };

inline const char* to_string(AppAction a) {
    switch (a) {
        case AppAction::Invade: return "invade";
        case AppAction::Infect: return "infect";
        case AppAction::Retreat: return "retreat";
        case AppAction::Exit: return "exit";
    }
    return "?";
}

namespace statechart {

// The application lifecycle automaton: an app sits on a node and an action
// steps it along an edge. Start and Exit are the endpoints; invade, infect
// and retreat are the operational states.
enum class Node { Start, Invade, Infect, Retreat, Exit };

inline const char* to_string(Node n) {
    switch (n) {
        case Node::Start: return "start";
        case Node::Invade: return "invade";
        case Node::Infect: return "infect";
        case Node::Retreat: return "retreat";
        case Node::Exit: return "exit";
    }
    return "?";
}

// Edge relation. Unguarded: retreat -> exit is taken by the caller only when
// the retreat emptied the claim, retreat -> infect only when it did not.
inline std::optional<Node> next(Node from, AppAction action) {
    switch (from) {
        case Node::Start:
            if (action == AppAction::Invade) return Node::Invade;
            break;
        case Node::Invade:
            if (action == AppAction::Infect) return Node::Infect;
            break;
        case Node::Infect:
            if (action == AppAction::Infect) return Node::Infect;
            if (action == AppAction::Invade) return Node::Invade;
            if (action == AppAction::Retreat) return Node::Retreat;
            break;
        case Node::Retreat:
            if (action == AppAction::Infect) return Node::Infect;
            if (action == AppAction::Exit) return Node::Exit;
            break;
        case Node::Exit:
            break;
    }
    return std::nullopt;
}

// Accepts an action sequence iff it is a path of the lifecycle chart.
inline bool accepts(const std::vector<AppAction>& actions) {
    Node node = Node::Start;
    for (AppAction a : actions) {
        auto n = next(node, a);
        if (!n) {
            return false;
        }
        node = *n;
    }
    return true;
}

}  // namespace statechart

enum class AppPhase { Start, Claimed, Infected, Exited };

inline const char* to_string(AppPhase p) {
    switch (p) {
        case AppPhase::Start: return "start";
        case AppPhase::Claimed: return "claimed";
        case AppPhase::Infected: return "infected";
        case AppPhase::Exited: return "exited";
    }
    return "?";
}

struct AppState {
    AppId app = 0;
    statechart::Node node = statechart::Node::Start;
    std::optional<ClaimId> claim;
    std::size_t script_pos = 0;
};

// Quotient view of the statechart node: a post-retreat app with a non-empty
// claim is back in Claimed (it may only infect again), one whose claim was
// emptied has exited.
inline AppPhase phase(const AppState& s) {
    switch (s.node) {
        case statechart::Node::Start: return AppPhase::Start;
        case statechart::Node::Invade: return AppPhase::Claimed;
        case statechart::Node::Infect: return AppPhase::Infected;
        case statechart::Node::Retreat: return AppPhase::Claimed;
        case statechart::Node::Exit: return AppPhase::Exited;
    }
    return AppPhase::Exited;
}

struct StatechartViolation {
    statechart::Node from = statechart::Node::Start;
    AppAction action = AppAction::Invade;
};

inline std::string describe(const StatechartViolation& v) {
    return std::string("illegal transition: ") + to_string(v.action) + " in state " +
           statechart::to_string(v.from);
}

// Steps the app automaton. `claim_nonempty` is the claim state after the
// action took effect; a retreat that emptied the claim falls through to Exit.
inline std::variant<AppPhase, StatechartViolation> step(AppState& s, AppAction action,
                                                        bool claim_nonempty) {
    auto n = statechart::next(s.node, action);
    if (!n) {
        return StatechartViolation{s.node, action};
    }
    if (action == AppAction::Exit && claim_nonempty) {
        return StatechartViolation{s.node, action};
    }
    s.node = *n;
    if (action == AppAction::Retreat && !claim_nonempty) {
        s.node = statechart::Node::Exit;
    }
    return phase(s);
}

enum class IletStage { Candidate, Instance, Incarnation, Execution, Done };

inline const char* to_string(IletStage s) {
    switch (s) {
        case IletStage::Candidate: return "candidate";
        case IletStage::Instance: return "instance";
        case IletStage::Incarnation: return "incarnation";
        case IletStage::Execution: return "execution";
        case IletStage::Done: return "done";
    }
    return "?";
}

struct ILet {
    IletId id = 0;
    AppId app = 0;
    int team = -1;
    IletStage stage = IletStage::Candidate;
    std::optional<ILetTag> tag;  // set at incarnation
    Time duration = 0;
    std::string entry;
    std::optional<int> deployed_tile;  // set at incarnation
    bool wildcard_requested = false;
};

// Stages only move forward: candidate, instance, incarnation, execution, done.
inline void advance_stage(ILet& ilet, IletStage to) {
    if (static_cast<int>(to) <= static_cast<int>(ilet.stage)) {
        throw std::logic_error("ilet " + std::to_string(ilet.id) + ": stage moved backwards");
    }
    ilet.stage = to;
}

struct Team {
    int id = -1;
    AppId app = 0;
    ClaimId claim = 0;
    std::vector<IletId> ilets;
    int done = 0;

    bool complete() const { return done == static_cast<int>(ilets.size()); }
};

// Records one finished member; true once the whole team is done and the
// application's script may proceed (resize, re-infect or retreat).
inline bool on_execution_complete(Team& team) {
    if (team.complete()) {
        throw std::logic_error("team " + std::to_string(team.id) + " already complete");
    }
    team.done += 1;
    return team.complete();
}

// Largest-remainder apportionment of `count` items over non-negative integer
// weights; remainder ties favor the lower index.
inline std::vector<int> apportion_largest_remainder(int count, const std::vector<int>& weights) {
    long long total = 0;
    for (int w : weights) {
        if (w < 0) {
            throw std::invalid_argument("apportion: negative weight");
        }
        total += w;
    }
    if (total <= 0) {
        throw std::invalid_argument("apportion: weights sum to zero");
    }
    std::vector<int> out(weights.size(), 0);
    std::vector<std::pair<long long, std::size_t>> remainders;
    long long assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const long long num = static_cast<long long>(count) * weights[i];
        out[i] = static_cast<int>(num / total);
        assigned += out[i];
        remainders.emplace_back(num % total, i);
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (long long r = count - assigned, i = 0; r > 0; --r, ++i) {
        out[remainders[static_cast<std::size_t>(i)].second] += 1;
    }
    return out;
}

// First candidate (in list order) whose constraints are statically feasible
// on the machine.
inline std::optional<std::size_t> select_candidate(const std::vector<ConstraintSet>& candidates,
                                                   const Machine& machine) {
    if (candidates.empty()) {
        throw std::invalid_argument("select_candidate: no candidates");
    }
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (static_feasible(candidates[i], machine)) {
            return i;
        }
    }
    return std::nullopt;
}

}  // namespace invasim
