// SPDX-License-Identifier: Apache-2.0
//
// Command-line pipeline: gen-data -> fit -> calibrate -> run, or `full` for
// the whole chain. Every stage is a pure function of (config, seed), so
// reruns reproduce output files byte for byte.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "minibon/minibon.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNoConvergence = 3;

struct CliOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> mode;
    int threads = 1;
};

minibon::ExperimentConfig load_config(const CliOptions& options) {
    auto config = minibon::load_experiment_config(options.config_path);
    if (options.seed) config.master_seed = *options.seed;
    if (options.out_dir) config.output_dir = *options.out_dir;
    if (options.mode) {
        config.inference.modes = *options.mode;
        config.inference.validate();
    }
    return config;
}

int run_stage(const CliOptions& options, const std::string& stage) {
    const auto config = load_config(options);
    minibon::ExperimentRunner runner(config, options.threads);

    int status = kExitOk;
    try {
        if (stage == "gen-data") {
            runner.gen_data();
        } else if (stage == "fit") {
            if (!runner.fit()) status = kExitNoConvergence;
        } else if (stage == "calibrate") {
            runner.calibrate();
        } else if (stage == "run") {
            runner.run();
        } else {  // full
            runner.gen_data();
            if (!runner.fit()) {
                runner.write_manifest();
                return kExitNoConvergence;
            }
            runner.calibrate();
            runner.run();
        }
    } catch (...) {
        // Partial manifest: whatever completed is still on record.
        runner.write_manifest();
        throw;
    }
    runner.write_manifest();
    return status;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Outside-option reward modeling and best-of-mini-N experiments"};
    app.set_version_flag("--version", std::string(minibon::kToolVersion));
    app.require_subcommand(1);

    CliOptions options;
    std::string stage;
    for (const auto& [name, description] :
         {std::pair<const char*, const char*>{"gen-data", "generate the labelled choice datasets"},
          {"fit", "fit the reward model by maximum likelihood"},
          {"calibrate", "identify hard prompts and build the threshold schedule"},
          {"run", "run the inference experiments and emit report CSVs"},
          {"full", "gen-data, fit, calibrate, and run in sequence"}}) {
        auto* sub = app.add_subcommand(name, description);
        sub->add_option("--config", options.config_path, "experiment config (JSON)")->required();
        sub->add_option("--seed", options.seed, "override the config's master seed");
        sub->add_option("--out", options.out_dir, "override the config's output directory");
        sub->add_option("--mode", options.mode, "restrict run to one mode: all|bon|guardrail|accelerator");
        sub->add_option("--threads", options.threads, "worker thread cap")->check(CLI::PositiveNumber);
        sub->callback([&stage, name = std::string(name)] { stage = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        return run_stage(options, stage);
    } catch (const minibon::UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const minibon::DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
}
