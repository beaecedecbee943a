#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "invasim/constraints.hpp"
#include "invasim/temp_model.hpp"
#include "invasim/topology.hpp"

namespace invasim {

struct IletSpec {
    std::optional<Time> duration;
    std::optional<std::pair<Time, Time>> duration_range;  // inclusive, sampled per run seed
    bool wildcard = false;
    std::string entry = "ilet";
};

struct CandidateSpec {
    std::string constraints;
    std::string label;
    ConstraintSet parsed;
};

struct InvadeAction {
    std::string constraints;
    ConstraintSet parsed;
    std::vector<CandidateSpec> candidates;
};

struct InfectAction {
    std::vector<IletSpec> ilets;
};

struct RetreatAction {
    std::optional<int> amount;  // nullopt = all
};

using ScriptAction = std::variant<InvadeAction, InfectAction, RetreatAction>;

struct AppScript {
    AppId id = 0;
    Time arrival = 0;
    std::vector<ScriptAction> script;
};

struct Scenario {
    TopologyConfig topology;
    TempModel temp;
    std::vector<AppScript> apps;
};

struct Diagnostic {
    std::string where;  // action path ("apps[1].script[2]") or character offset
    std::string message;
};

struct LoadResult {
    std::optional<Scenario> scenario;       // set iff diagnostics is empty
    std::vector<Diagnostic> diagnostics;    // fatal
    std::vector<Diagnostic> warnings;       // e.g. statically infeasible constraints
    bool ok() const { return scenario.has_value(); }
};

namespace detail {

using json = nlohmann::json;

struct ScenarioReader {
    LoadResult result;

    void error(std::string where, std::string message) {
        result.diagnostics.push_back({std::move(where), std::move(message)});
    }
    void warn(std::string where, std::string message) {
        result.warnings.push_back({std::move(where), std::move(message)});
    }

    void check_keys(const json& obj, const std::string& where,
                    std::initializer_list<const char*> allowed) {
        for (const auto& [key, value] : obj.items()) {
            bool known = false;
            for (const char* a : allowed) {
                known = known || key == a;
            }
            if (!known) {
                error(where, "unknown field '" + key + "'");
            }
        }
    }

    bool read_int(const json& obj, const std::string& where, const char* key, long long& out,
                  bool required, long long fallback) {
        if (!obj.contains(key)) {
            if (required) {
                error(where, std::string("missing field '") + key + "'");
                return false;
            }
            out = fallback;
            return true;
        }
        const json& v = obj.at(key);
        if (!v.is_number_integer()) {
            error(where + "." + key, "expected an integer");
            return false;
        }
        out = v.get<long long>();
        return true;
    }

    bool read_number(const json& obj, const std::string& where, const char* key, double& out,
                     double fallback) {
        if (!obj.contains(key)) {
            out = fallback;
            return true;
        }
        const json& v = obj.at(key);
        if (!v.is_number()) {
            error(where + "." + key, "expected a number");
            return false;
        }
        out = v.get<double>();
        return true;
    }

    std::optional<ConstraintSet> read_constraints(const json& obj, const std::string& where,
                                                  std::string& text_out) {
        if (!obj.contains("constraints")) {
            error(where, "missing field 'constraints'");
            return std::nullopt;
        }
        const json& v = obj.at("constraints");
        if (!v.is_string()) {
            error(where + ".constraints", "expected a constraint expression string");
            return std::nullopt;
        }
        text_out = v.get<std::string>();
        ParseResult parsed = parse_constraints(text_out);
        if (const auto* diag = std::get_if<ParseDiagnostic>(&parsed)) {
            error(where + ".constraints", "offset " + std::to_string(diag->position) + ": " +
                                              diag->message);
            return std::nullopt;
        }
        return std::get<ConstraintSet>(parsed);
    }

    std::optional<ScriptAction> read_action(const json& action, const std::string& where) {
        if (!action.is_object() || action.size() != 1) {
            error(where, "expected exactly one of invade / infect / retreat");
            return std::nullopt;
        }
        if (action.contains("invade")) {
            const json& body = action.at("invade");
            if (!body.is_object()) {
                error(where + ".invade", "expected an object");
                return std::nullopt;
            }
            check_keys(body, where + ".invade", {"constraints", "candidates"});
            InvadeAction out;
            auto parsed = read_constraints(body, where + ".invade", out.constraints);
            if (!parsed) {
                return std::nullopt;
            }
            out.parsed = *parsed;
            if (body.contains("candidates")) {
                const json& cands = body.at("candidates");
                if (!cands.is_array()) {
                    error(where + ".invade.candidates", "expected an array");
                    return std::nullopt;
                }
                for (std::size_t i = 0; i < cands.size(); ++i) {
                    const std::string cwhere =
                        where + ".invade.candidates[" + std::to_string(i) + "]";
                    const json& cand = cands.at(i);
                    if (!cand.is_object()) {
                        error(cwhere, "expected an object");
                        return std::nullopt;
                    }
                    check_keys(cand, cwhere, {"constraints", "label"});
                    CandidateSpec spec;
                    auto cparsed = read_constraints(cand, cwhere, spec.constraints);
                    if (!cparsed) {
                        return std::nullopt;
                    }
                    spec.parsed = *cparsed;
                    if (cand.contains("label")) {
                        if (!cand.at("label").is_string()) {
                            error(cwhere + ".label", "expected a string");
                            return std::nullopt;
                        }
                        spec.label = cand.at("label").get<std::string>();
                    }
                    out.candidates.push_back(std::move(spec));
                }
            }
            return ScriptAction{std::move(out)};
        }
        if (action.contains("infect")) {
            const json& body = action.at("infect");
            if (!body.is_object()) {
                error(where + ".infect", "expected an object");
                return std::nullopt;
            }
            check_keys(body, where + ".infect", {"ilets"});
            if (!body.contains("ilets") || !body.at("ilets").is_array()) {
                error(where + ".infect", "missing 'ilets' array");
                return std::nullopt;
            }
            InfectAction out;
            const json& ilets = body.at("ilets");
            for (std::size_t i = 0; i < ilets.size(); ++i) {
                const std::string iwhere = where + ".infect.ilets[" + std::to_string(i) + "]";
                const json& spec = ilets.at(i);
                if (!spec.is_object()) {
                    error(iwhere, "expected an object");
                    return std::nullopt;
                }
                check_keys(spec, iwhere, {"duration", "duration_range", "wildcard", "entry"});
                IletSpec ilet;
                const bool has_fixed = spec.contains("duration");
                const bool has_range = spec.contains("duration_range");
                if (has_fixed == has_range) {
                    error(iwhere, "exactly one of duration / duration_range is required");
                    return std::nullopt;
                }
                if (has_fixed) {
                    long long d = 0;
                    if (!read_int(spec, iwhere, "duration", d, true, 0)) {
                        return std::nullopt;
                    }
                    if (d < 0) {
                        error(iwhere + ".duration", "must be >= 0");
                        return std::nullopt;
                    }
                    ilet.duration = d;
                } else {
                    const json& range = spec.at("duration_range");
                    if (!range.is_array() || range.size() != 2 ||
                        !range.at(0).is_number_integer() || !range.at(1).is_number_integer()) {
                        error(iwhere + ".duration_range", "expected [lo, hi]");
                        return std::nullopt;
                    }
                    const long long lo = range.at(0).get<long long>();
                    const long long hi = range.at(1).get<long long>();
                    if (lo < 0 || hi < lo) {
                        error(iwhere + ".duration_range", "requires 0 <= lo <= hi");
                        return std::nullopt;
                    }
                    ilet.duration_range = {lo, hi};
                }
                if (spec.contains("wildcard")) {
                    if (!spec.at("wildcard").is_boolean()) {
                        error(iwhere + ".wildcard", "expected a boolean");
                        return std::nullopt;
                    }
                    ilet.wildcard = spec.at("wildcard").get<bool>();
                }
                if (spec.contains("entry")) {
                    if (!spec.at("entry").is_string()) {
                        error(iwhere + ".entry", "expected a string");
                        return std::nullopt;
                    }
                    ilet.entry = spec.at("entry").get<std::string>();
                }
                out.ilets.push_back(std::move(ilet));
            }
            return ScriptAction{std::move(out)};
        }
        if (action.contains("retreat")) {
            const json& body = action.at("retreat");
            if (!body.is_object()) {
                error(where + ".retreat", "expected an object");
                return std::nullopt;
            }
            check_keys(body, where + ".retreat", {"amount"});
            if (!body.contains("amount")) {
                error(where + ".retreat", "missing field 'amount'");
                return std::nullopt;
            }
            RetreatAction out;
            const json& amount = body.at("amount");
            if (amount.is_string() && amount.get<std::string>() == "all") {
                out.amount = std::nullopt;
            } else if (amount.is_number_integer() && amount.get<long long>() >= 1) {
                out.amount = static_cast<int>(amount.get<long long>());
            } else {
                error(where + ".retreat.amount", "expected a positive integer or \"all\"");
                return std::nullopt;
            }
            return ScriptAction{std::move(out)};
        }
        error(where, "expected one of invade / infect / retreat");
        return std::nullopt;
    }
};

}  // namespace detail

// Static script legality: walks the lifecycle chart assuming partial retreats
// leave the claim non-empty (whether they do depends on runtime grants).
inline void check_script_order(const std::vector<ScriptAction>& script, const std::string& where,
                               std::vector<Diagnostic>& diagnostics) {
    enum class Node { Start, Invade, Infect, Retreat, Exit };
    Node node = Node::Start;
    for (std::size_t i = 0; i < script.size(); ++i) {
        const std::string awhere = where + ".script[" + std::to_string(i) + "]";
        if (std::holds_alternative<InvadeAction>(script[i])) {
            if (node != Node::Start && node != Node::Infect) {
                diagnostics.push_back({awhere, node == Node::Exit
                                                   ? "action after a full retreat"
                                                   : "invade is only legal initially or after an "
                                                     "infect"});
                return;
            }
            node = Node::Invade;
        } else if (std::holds_alternative<InfectAction>(script[i])) {
            if (node == Node::Start) {
                diagnostics.push_back({awhere, "infect before any invade"});
                return;
            }
            if (node == Node::Exit) {
                diagnostics.push_back({awhere, "action after a full retreat"});
                return;
            }
            node = Node::Infect;
        } else {
            if (node != Node::Infect) {
                diagnostics.push_back(
                    {awhere, node == Node::Exit ? "action after a full retreat"
                                                : "retreat is only legal after an infect"});
                return;
            }
            node = std::get<RetreatAction>(script[i]).amount ? Node::Retreat : Node::Exit;
        }
    }
}

inline LoadResult load_scenario(std::string_view text) {
    using detail::json;
    detail::ScenarioReader reader;
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        reader.error("offset " + std::to_string(e.byte), e.what());
        return std::move(reader.result);
    }
    if (!root.is_object()) {
        reader.error("offset 0", "scenario must be a JSON object");
        return std::move(reader.result);
    }
    reader.check_keys(root, "scenario", {"topology", "temp_model", "apps"});

    Scenario scenario;

    if (!root.contains("topology") || !root.at("topology").is_object()) {
        reader.error("scenario", "missing 'topology' object");
    } else {
        const json& topo = root.at("topology");
        reader.check_keys(topo, "topology", {"tiles", "cores_per_tile", "noc_hop_latency"});
        long long tiles = 0, cpt = 0, hop = 1;
        reader.read_int(topo, "topology", "tiles", tiles, true, 0);
        reader.read_int(topo, "topology", "cores_per_tile", cpt, true, 0);
        reader.read_int(topo, "topology", "noc_hop_latency", hop, false, 1);
        if (tiles < 1) {
            reader.error("topology.tiles", "must be >= 1");
        }
        if (cpt < 1) {
            reader.error("topology.cores_per_tile", "must be >= 1");
        }
        if (hop < 0) {
            reader.error("topology.noc_hop_latency", "must be >= 0");
        }
        scenario.topology = {static_cast<int>(tiles), static_cast<int>(cpt), hop};
    }

    if (root.contains("temp_model")) {
        const json& temp = root.at("temp_model");
        if (!temp.is_object()) {
            reader.error("temp_model", "expected an object");
        } else {
            reader.check_keys(temp, "temp_model",
                              {"heat_rate", "cool_rate", "t_high", "t_low", "tick"});
            reader.read_number(temp, "temp_model", "heat_rate", scenario.temp.heat_rate, 1.0);
            reader.read_number(temp, "temp_model", "cool_rate", scenario.temp.cool_rate, 2.0);
            reader.read_number(temp, "temp_model", "t_high", scenario.temp.t_high, 100.0);
            reader.read_number(temp, "temp_model", "t_low", scenario.temp.t_low, 50.0);
            long long tick = 1;
            reader.read_int(temp, "temp_model", "tick", tick, false, 1);
            scenario.temp.tick = tick;
            try {
                require_valid(scenario.temp);
            } catch (const std::invalid_argument& e) {
                reader.error("temp_model", e.what());
            }
        }
    }

    if (!root.contains("apps") || !root.at("apps").is_array()) {
        reader.error("scenario", "missing 'apps' array");
    } else {
        const json& apps = root.at("apps");
        std::set<long long> seen_ids;
        for (std::size_t a = 0; a < apps.size(); ++a) {
            const std::string awhere = "apps[" + std::to_string(a) + "]";
            const json& app = apps.at(a);
            if (!app.is_object()) {
                reader.error(awhere, "expected an object");
                continue;
            }
            reader.check_keys(app, awhere, {"id", "arrival", "script"});
            AppScript script;
            long long id = 0, arrival = 0;
            if (!reader.read_int(app, awhere, "id", id, true, 0)) {
                continue;
            }
            if (id < 0) {
                reader.error(awhere + ".id", "must be >= 0");
                continue;
            }
            if (!seen_ids.insert(id).second) {
                reader.error(awhere + ".id", "duplicate application id " + std::to_string(id));
            }
            script.id = static_cast<AppId>(id);
            reader.read_int(app, awhere, "arrival", arrival, false, 0);
            if (arrival < 0) {
                reader.error(awhere + ".arrival", "must be >= 0");
            }
            script.arrival = arrival;
            if (!app.contains("script") || !app.at("script").is_array() ||
                app.at("script").empty()) {
                reader.error(awhere, "script must be a non-empty array");
                continue;
            }
            const json& actions = app.at("script");
            bool bad = false;
            for (std::size_t i = 0; i < actions.size(); ++i) {
                auto action =
                    reader.read_action(actions.at(i), awhere + ".script[" + std::to_string(i) + "]");
                if (!action) {
                    bad = true;
                    break;
                }
                script.script.push_back(std::move(*action));
            }
            if (bad) {
                continue;
            }
            check_script_order(script.script, awhere, reader.result.diagnostics);
            scenario.apps.push_back(std::move(script));
        }
    }

    if (!reader.result.diagnostics.empty()) {
        return std::move(reader.result);
    }

    // Static feasibility of every constraint expression, reported as warnings:
    // the run still proceeds, the affected application aborts at invade time.
    const Machine probe = build_machine(scenario.topology);
    for (std::size_t a = 0; a < scenario.apps.size(); ++a) {
        const AppScript& app = scenario.apps[a];
        for (std::size_t i = 0; i < app.script.size(); ++i) {
            const auto* inv = std::get_if<InvadeAction>(&app.script[i]);
            if (inv == nullptr) {
                continue;
            }
            const std::string awhere =
                "apps[" + std::to_string(a) + "].script[" + std::to_string(i) + "]";
            if (inv->candidates.empty()) {
                if (!static_feasible(inv->parsed, probe)) {
                    reader.warn(awhere, "constraints can never be satisfied on this topology");
                }
            } else {
                bool any = false;
                for (const CandidateSpec& cand : inv->candidates) {
                    any = any || static_feasible(cand.parsed, probe);
                }
                if (!any) {
                    reader.warn(awhere, "no candidate is feasible on this topology");
                }
            }
        }
    }

    reader.result.scenario = std::move(scenario);
    return std::move(reader.result);
}

inline LoadResult load_scenario_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        LoadResult result;
        result.diagnostics.push_back({path, "cannot open file"});
        return result;
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return load_scenario(buffer.str());
}

}  // namespace invasim
