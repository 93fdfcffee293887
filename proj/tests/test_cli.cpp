// SPDX-License-Identifier: Apache-2.0
//
// End-to-end exercises of the command-line pipeline through a real process.

#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "minibon/experiment.hpp"

using namespace minibon;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / fs::path("minibon_cli_" + std::to_string(::getpid()) + "_" +
                                                    std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static inline int counter = 0;
};

int run_cli(const std::string& args, const fs::path& log) {
    const std::string command = std::string(MINIBON_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(command.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

// Desk-scale config that keeps the whole pipeline under a second.
ExperimentConfig tiny_config(const fs::path& out_dir) {
    ExperimentConfig config;
    config.train_observations = 60;
    config.heldout_observations = 30;
    config.training.max_iterations = 400;
    config.training.gradient_tolerance = 1e-5;
    config.calibration.pool_size = 12;
    config.calibration.responses_per_prompt = 40;
    config.inference.mini_batch = 2;
    config.inference.loops = 2;
    config.inference.curve_n_values = {1, 2, 4};
    config.inference.curve_trials = 50;
    config.inference.eval_prompts = 30;
    config.inference.hard_eval_prompts = 4;
    config.output_dir = out_dir.string();
    config.master_seed = 4242;
    return config;
}

fs::path write_config(const TempDir& dir, const ExperimentConfig& config) {
    const auto path = dir.path / "config.json";
    std::ofstream out(path);
    out << to_json(config).dump(2) << '\n';
    return path;
}

}  // namespace

namespace {

std::size_t line_count(const fs::path& path) {
    std::istringstream lines(slurp(path));
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line))
        if (!line.empty()) ++n;
    return n;
}

}  // namespace

TEST_CASE("cli: full pipeline produces every artifact and a manifest") {
    TempDir dir;
    const auto out_dir = dir.path / "out";
    const auto config_path = write_config(dir, tiny_config(out_dir));

    const int status = run_cli("full --config " + config_path.string(), dir.path / "log.txt");
    INFO(slurp(dir.path / "log.txt"));
    REQUIRE(status == 0);

    for (const char* name : {"train.jsonl", "heldout.jsonl", "params.json", "hard_prompts.csv",
                             "schedule.json", "curve.csv", "results.csv", "binary_metrics.csv",
                             "manifest.json"})
        CHECK(fs::exists(out_dir / name));

    const auto manifest = json::parse(std::ifstream(out_dir / "manifest.json"));
    CHECK(manifest.at("files").size() == 8);  // everything but the manifest itself
    CHECK(manifest.at("stage_seconds").contains("fit"));
    CHECK(manifest.at("tool_version").get<std::string>() == std::string(kToolVersion));

    // Dataset files carry exactly the configured observation counts.
    CHECK(line_count(out_dir / "train.jsonl") == 60);
    CHECK(line_count(out_dir / "heldout.jsonl") == 30);
    // One report row per pool prompt.
    CHECK(line_count(out_dir / "hard_prompts.csv") == 12 + 1);

    // Fit output records convergence and the held-out likelihood.
    const auto params = json::parse(std::ifstream(out_dir / "params.json"));
    CHECK(params.at("converged").get<bool>());
    CHECK(params.contains("heldout_log_likelihood"));

    // results.csv carries one row per mode plus the header.
    std::ifstream results(out_dir / "results.csv");
    std::string line;
    std::getline(results, line);
    CHECK(line == "mode,N,n,L,tp,fp,tn,fn,mean_true_reward,mean_generations,abstain_count");
    int rows = 0;
    while (std::getline(results, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 3);

    // The schedule on disk respects the monotonicity invariant.
    const auto schedule = load_schedule(out_dir / "schedule.json");
    for (std::size_t l = 1; l < schedule.taus.size(); ++l) CHECK(schedule.taus[l] >= schedule.taus[l - 1]);

    // Rerunning the whole pipeline reproduces the reports byte for byte.
    const auto out2 = dir.path / "out2";
    REQUIRE(run_cli("full --config " + config_path.string() + " --out " + out2.string() + " --threads 2",
                    dir.path / "log2.txt") == 0);
    for (const char* name : {"train.jsonl", "params.json", "schedule.json", "curve.csv", "results.csv",
                             "binary_metrics.csv", "hard_prompts.csv"})
        CHECK(slurp(out_dir / name) == slurp(out2 / name));

    // --mode restricts the run stage to a single strategy row.
    const auto out3 = dir.path / "out3";
    REQUIRE(run_cli("full --config " + config_path.string() + " --out " + out3.string() +
                        " --mode guardrail",
                    dir.path / "log3.txt") == 0);
    CHECK(line_count(out3 / "results.csv") == 2);  // header + guardrail
}

TEST_CASE("cli: all-easy pool falls back to the zero schedule with a warning") {
    TempDir dir;
    auto config = tiny_config(dir.path / "out");
    config.world.accept_prob_easy = 0.9;  // nothing in the pool can test as hard
    config.world.accept_prob_hard = 0.5;
    const auto config_path = write_config(dir, config);

    REQUIRE(run_cli("full --config " + config_path.string(), dir.path / "log.txt") == 0);
    CHECK(slurp(dir.path / "log.txt").find("warning") != std::string::npos);
    const auto schedule = load_schedule(dir.path / "out" / "schedule.json");
    CHECK(schedule.all_zero());
}

TEST_CASE("cli: reruns with the same seed are byte-identical") {
    TempDir dir;
    auto config = tiny_config(dir.path / "out1");
    const auto config_path = write_config(dir, config);

    REQUIRE(run_cli("gen-data --config " + config_path.string(), dir.path / "log1.txt") == 0);
    REQUIRE(run_cli("gen-data --config " + config_path.string() + " --out " + (dir.path / "out2").string(),
                    dir.path / "log2.txt") == 0);
    CHECK(slurp(dir.path / "out1" / "train.jsonl") == slurp(dir.path / "out2" / "train.jsonl"));
    CHECK(slurp(dir.path / "out1" / "heldout.jsonl") == slurp(dir.path / "out2" / "heldout.jsonl"));

    // A different seed must change the dataset.
    REQUIRE(run_cli("gen-data --config " + config_path.string() + " --seed 777 --out " +
                        (dir.path / "out3").string(),
                    dir.path / "log3.txt") == 0);
    CHECK(slurp(dir.path / "out1" / "train.jsonl") != slurp(dir.path / "out3" / "train.jsonl"));
}

TEST_CASE("cli: usage errors exit 1 and write nothing") {
    TempDir dir;
    auto config = tiny_config(dir.path / "out");
    config.train_observations = 0;  // zero prompts
    const auto config_path = write_config(dir, config);

    CHECK(run_cli("gen-data --config " + config_path.string(), dir.path / "log.txt") == 1);
    CHECK_FALSE(fs::exists(dir.path / "out" / "train.jsonl"));

    CHECK(run_cli("gen-data --no-such-flag", dir.path / "log2.txt") == 1);
    CHECK(run_cli("", dir.path / "log3.txt") == 1);  // missing subcommand
    CHECK(run_cli("--version", dir.path / "log4.txt") == 0);
}

TEST_CASE("cli: data errors exit 2 and name the offending line") {
    TempDir dir;
    const auto out_dir = dir.path / "out";
    const auto config_path = write_config(dir, tiny_config(out_dir));
    REQUIRE(run_cli("gen-data --config " + config_path.string(), dir.path / "log.txt") == 0);

    // Corrupt line 7 of the training file.
    const auto train = out_dir / "train.jsonl";
    std::istringstream lines(slurp(train));
    {
        std::ofstream out(train);
        std::string line;
        int n = 0;
        while (std::getline(lines, line)) out << (++n == 7 ? "{broken" : line) << '\n';
    }
    CHECK(run_cli("fit --config " + config_path.string(), dir.path / "log2.txt") == 2);
    CHECK(slurp(dir.path / "log2.txt").find("line 7") != std::string::npos);

    // Missing inputs for later stages are data errors too.
    TempDir fresh;
    const auto fresh_config = write_config(fresh, tiny_config(fresh.path / "out"));
    CHECK(run_cli("run --config " + fresh_config.string(), fresh.path / "log.txt") == 2);
}

TEST_CASE("cli: fit reports convergence through its exit code") {
    TempDir dir;
    auto config = tiny_config(dir.path / "out");
    const auto config_path = write_config(dir, config);
    REQUIRE(run_cli("gen-data --config " + config_path.string(), dir.path / "log1.txt") == 0);
    REQUIRE(run_cli("fit --config " + config_path.string(), dir.path / "log2.txt") == 0);

    // Starving the optimizer of iterations yields exit code 3.
    auto starved = config;
    starved.training.max_iterations = 1;
    starved.training.gradient_tolerance = 1e-12;
    const auto starved_path = dir.path / "starved.json";
    {
        std::ofstream out(starved_path);
        out << to_json(starved).dump(2) << '\n';
    }
    CHECK(run_cli("fit --config " + starved_path.string(), dir.path / "log3.txt") == 3);

    // A failed stage inside `full` still leaves a (partial) manifest behind.
    const auto out2 = dir.path / "out-starved";
    REQUIRE(run_cli("full --config " + starved_path.string() + " --out " + out2.string(),
                    dir.path / "log4.txt") == 3);
    REQUIRE(fs::exists(out2 / "manifest.json"));
    const auto manifest = json::parse(std::ifstream(out2 / "manifest.json"));
    CHECK(manifest.at("stage_seconds").contains("gen-data"));
    CHECK_FALSE(fs::exists(out2 / "schedule.json"));  // later stages never ran
}
