// Command-line front end: scenario validation, simulation runs with trace and
// metrics emission, and replay verification.
//
// Exit codes: 0 ok, 1 validation failure, 2 deadlock, 3 replay mismatch.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "invasim/engine.hpp"
#include "invasim/metrics.hpp"
#include "invasim/scenario.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitDeadlock = 2;
constexpr int kExitReplayMismatch = 3;

void print_diagnostics(const invasim::LoadResult& result) {
    for (const invasim::Diagnostic& d : result.diagnostics) {
        std::cerr << "error: " << d.where << ": " << d.message << "\n";
    }
    for (const invasim::Diagnostic& d : result.warnings) {
        std::cerr << "warning: " << d.where << ": " << d.message << "\n";
    }
}

std::string default_output(const std::string& scenario_path, const char* extension) {
    namespace fs = std::filesystem;
    fs::path dir = ".";
    if (const char* env = std::getenv("INVASIM_OUT_DIR"); env != nullptr && *env != '\0') {
        dir = env;
    }
    return (dir / fs::path(scenario_path).stem()).string() + extension;
}

bool write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        std::cerr << "error: cannot write " << path << "\n";
        return false;
    }
    out << content;
    return out.good();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"invasim - invasive-computing MPSoC simulator"};
    app.require_subcommand(1);

    std::string scenario_path;
    std::uint64_t seed = 0;
    std::int64_t horizon = -1;
    std::string trace_path;
    std::string metrics_path;
    bool verify_replay = false;

    CLI::App* validate = app.add_subcommand("validate", "check a scenario file");
    validate->add_option("scenario", scenario_path, "scenario file")->required();

    CLI::App* run = app.add_subcommand("run", "simulate a scenario");
    run->add_option("scenario", scenario_path, "scenario file")->required();
    run->add_option("--seed", seed, "random seed (default 0)");
    run->add_option("--horizon", horizon, "stop before this time");
    run->add_option("--trace", trace_path, "trace output path");
    run->add_option("--metrics", metrics_path, "metrics output path");
    run->add_flag("--verify-replay", verify_replay, "run twice and compare traces");

    CLI::App* replay = app.add_subcommand("replay-check", "run twice, compare traces byte for byte");
    replay->add_option("scenario", scenario_path, "scenario file")->required();
    replay->add_option("--seed", seed, "random seed (default 0)");
    replay->add_option("--horizon", horizon, "stop before this time");

    CLI11_PARSE(app, argc, argv);

    invasim::LoadResult loaded = invasim::load_scenario_file(scenario_path);
    print_diagnostics(loaded);
    if (!loaded.ok()) {
        return kExitValidation;
    }
    if (validate->parsed()) {
        std::cout << "ok\n";
        return kExitOk;
    }

    const std::optional<invasim::Time> cap =
        horizon >= 0 ? std::optional<invasim::Time>(horizon) : std::nullopt;

    try {
        invasim::RunResult first = invasim::run_scenario(*loaded.scenario, seed, cap);

        if (replay->parsed() || verify_replay) {
            invasim::RunResult second = invasim::run_scenario(*loaded.scenario, seed, cap);
            if (invasim::serialize_trace(first.trace) != invasim::serialize_trace(second.trace)) {
                std::cerr << "error: replay mismatch (nondeterminism)\n";
                return kExitReplayMismatch;
            }
            if (replay->parsed()) {
                std::cout << "replay ok: " << first.trace.size() << " records, horizon "
                          << first.metrics.horizon << "\n";
                return kExitOk;
            }
        }

        if (trace_path.empty()) {
            trace_path = default_output(scenario_path, ".trace");
        }
        if (metrics_path.empty()) {
            metrics_path = default_output(scenario_path, ".metrics");
        }
        if (!write_file(trace_path, invasim::serialize_trace(first.trace)) ||
            !write_file(metrics_path, invasim::metrics_table(first.metrics))) {
            return kExitValidation;
        }

        std::cout << "records " << first.trace.size() << ", horizon " << first.metrics.horizon
                  << ", oversupply_grants " << first.metrics.oversupply_grants
                  << ", undersupply_violations " << first.metrics.undersupply_violations << "\n";
        if (first.deadlock) {
            std::cerr << "deadlock: blocked apps";
            for (invasim::AppId id : first.blocked_apps) {
                std::cerr << " " << id;
            }
            std::cerr << "\n";
            return kExitDeadlock;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitOk;
}
