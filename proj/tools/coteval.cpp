// coteval: blind rubric scoring, statistics and reports for chain-of-thought corpora.

#include "coteval/harness.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>

int main(int argc, char** argv) {
    using namespace coteval;

    CLI::App app{"Evaluate chain-of-thought corpora with blinded LLM judges."};
    app.set_version_flag("--version", std::string(kVersion));

    std::string command;
    std::string config_path;
    Overrides flags;
    std::string run_id, out, mock_seed, concurrency, method, alpha_metric, missing, cf_mode;

    app.add_option("command", command, "validate | evaluate | stats | cfdensity | report | all")
        ->required()
        ->check(CLI::IsMember(command_names()));
    app.add_option("--config", config_path, "Run configuration (JSON)")->required();
    auto* o_run = app.add_option("--run-id", run_id, "Run identifier (directory under --out)");
    auto* o_out = app.add_option("--out", out, "Runs root directory (default: runs)");
    auto* o_mock = app.add_option("--mock-judge", mock_seed, "Use the deterministic mock judge with this seed");
    auto* o_conc = app.add_option("--concurrency", concurrency, "Maximum in-flight judge calls");
    auto* o_method = app.add_option("--method", method, "Mann-Whitney method: normal | exact");
    auto* o_alpha = app.add_option("--alpha-metric", alpha_metric, "Krippendorff metric: interval | ordinal");
    auto* o_missing = app.add_option("--missing", missing, "Missing-cell policy: strict | lenient");
    auto* o_cf = app.add_option("--cf-mode", cf_mode, "Counterfactual adjudication: heuristic | judge");
    app.add_flag("--no-timestamp", flags.no_timestamp, "Omit the timestamp comment from SVG figures");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    auto set = [](CLI::Option* opt, const std::string& value, std::optional<std::string>& dst) {
        if (opt->count() > 0) dst = value;
    };
    set(o_run, run_id, flags.run_id);
    set(o_out, out, flags.out);
    set(o_mock, mock_seed, flags.mock_seed);
    set(o_conc, concurrency, flags.concurrency);
    set(o_method, method, flags.method);
    set(o_alpha, alpha_metric, flags.alpha_metric);
    set(o_missing, missing, flags.missing);
    set(o_cf, cf_mode, flags.cf_mode);

    Logger log;
    RunConfig config;
    try {
        config = load_config(config_path);
        auto layered = env_overrides();
        layered.layer(flags);
        apply_overrides(config, layered);
        finalize_config(config);
    } catch (const ConfigError& e) {
        log.error(e.what());
        return kExitConfig;
    }
    return run_command(command, config, log);
}
