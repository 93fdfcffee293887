// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "minibon/inference.hpp"
#include "minibon/io.hpp"

namespace minibon {

struct CalibrationSettings {
    int pool_size = 500;             // candidate prompts screened for hardness
    int responses_per_prompt = 150;  // B
    double p_min = 0.05;
    double alpha = 0.01;

    void validate() const {
        if (pool_size < 1) throw UsageError("calibration.pool_size must be >= 1");
        if (responses_per_prompt < 1) throw UsageError("calibration.responses_per_prompt must be >= 1");
        if (!(p_min > 0.0 && p_min < 1.0)) throw UsageError("calibration.p_min must be in (0,1)");
        if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("calibration.alpha must be in (0,1)");
    }
};

struct InferenceSettings {
    int mini_batch = 16;  // n
    int loops = 2;        // L
    std::vector<int> curve_n_values = {1, 2, 4, 8, 16, 32};
    std::uint64_t curve_trials = 10000;
    int eval_prompts = 1000;
    int hard_eval_prompts = 50;         // prompt set behind the curve
    double hard_accept_prob_max = 0.05; // p_g ceiling defining that set
    std::string modes = "all";          // all | bon | guardrail | accelerator
    // Override of the per-mode default (guardrail abstains, others return best).
    std::optional<bool> abstain_on_exhaustion;

    void validate() const {
        if (mini_batch < 1 || loops < 1) throw UsageError("inference.mini_batch and loops must be >= 1");
        if (curve_n_values.empty()) throw UsageError("inference.curve_n_values must be non-empty");
        for (std::size_t i = 1; i < curve_n_values.size(); ++i)
            if (curve_n_values[i] <= curve_n_values[i - 1])
                throw UsageError("inference.curve_n_values must be ascending");
        if (curve_n_values.front() < 1) throw UsageError("inference.curve_n_values must be positive");
        if (mini_batch * loops != curve_n_values.back())
            throw UsageError("inference.mini_batch * loops must equal the largest curve N");
        if (curve_trials < 1) throw UsageError("inference.curve_trials must be >= 1");
        if (eval_prompts < 1 || hard_eval_prompts < 1) throw UsageError("inference prompt counts must be >= 1");
        if (modes != "all" && modes != "bon" && modes != "guardrail" && modes != "accelerator")
            throw UsageError("inference.modes must be one of all|bon|guardrail|accelerator");
    }
};

struct ExperimentConfig {
    int schema_version = kConfigSchemaVersion;
    WorldConfig world;
    TrainingConfig training;
    CalibrationSettings calibration;
    InferenceSettings inference;
    std::string output_dir = "out";
    std::uint64_t master_seed = 20240817;
    int train_observations = 10000;
    int heldout_observations = 2000;

    void validate() const {
        if (schema_version != kConfigSchemaVersion)
            throw UsageError("unsupported config schema_version (expected " +
                             std::to_string(kConfigSchemaVersion) + ")");
        if (train_observations < 1) throw UsageError("train_observations must be >= 1");
        if (heldout_observations < 1) throw UsageError("heldout_observations must be >= 1");
        world.validate();
        training.validate();
        calibration.validate();
        inference.validate();
    }
};

inline json to_json(const CalibrationSettings& c) {
    return json{{"pool_size", c.pool_size},
                {"responses_per_prompt", c.responses_per_prompt},
                {"p_min", c.p_min},
                {"alpha", c.alpha}};
}

inline json to_json(const InferenceSettings& c) {
    json j{{"mini_batch", c.mini_batch},
           {"loops", c.loops},
           {"curve_n_values", c.curve_n_values},
           {"curve_trials", c.curve_trials},
           {"eval_prompts", c.eval_prompts},
           {"hard_eval_prompts", c.hard_eval_prompts},
           {"hard_accept_prob_max", c.hard_accept_prob_max},
           {"modes", c.modes}};
    if (c.abstain_on_exhaustion) j["abstain_on_exhaustion"] = *c.abstain_on_exhaustion;
    return j;
}

inline json to_json(const ExperimentConfig& config) {
    return json{{"schema_version", config.schema_version},
                {"world", to_json(config.world)},
                {"training", to_json(config.training)},
                {"calibration", to_json(config.calibration)},
                {"inference", to_json(config.inference)},
                {"output_dir", config.output_dir},
                {"master_seed", config.master_seed},
                {"train_observations", config.train_observations},
                {"heldout_observations", config.heldout_observations}};
}

inline ExperimentConfig experiment_config_from_json(const json& j) {
    ExperimentConfig config;
    try {
        config.schema_version = j.value("schema_version", kConfigSchemaVersion);
        if (j.contains("world")) config.world = world_config_from_json(j.at("world"));
        if (j.contains("training")) config.training = training_config_from_json(j.at("training"));
        if (j.contains("calibration")) {
            const auto& c = j.at("calibration");
            config.calibration.pool_size = c.value("pool_size", config.calibration.pool_size);
            config.calibration.responses_per_prompt =
                c.value("responses_per_prompt", config.calibration.responses_per_prompt);
            config.calibration.p_min = c.value("p_min", config.calibration.p_min);
            config.calibration.alpha = c.value("alpha", config.calibration.alpha);
        }
        if (j.contains("inference")) {
            const auto& c = j.at("inference");
            auto& settings = config.inference;
            settings.mini_batch = c.value("mini_batch", settings.mini_batch);
            settings.loops = c.value("loops", settings.loops);
            settings.curve_n_values = c.value("curve_n_values", settings.curve_n_values);
            settings.curve_trials = c.value("curve_trials", settings.curve_trials);
            settings.eval_prompts = c.value("eval_prompts", settings.eval_prompts);
            settings.hard_eval_prompts = c.value("hard_eval_prompts", settings.hard_eval_prompts);
            settings.hard_accept_prob_max = c.value("hard_accept_prob_max", settings.hard_accept_prob_max);
            settings.modes = c.value("modes", settings.modes);
            if (c.contains("abstain_on_exhaustion"))
                settings.abstain_on_exhaustion = c.at("abstain_on_exhaustion").get<bool>();
        }
        config.output_dir = j.value("output_dir", config.output_dir);
        config.master_seed = j.value("master_seed", config.master_seed);
        config.train_observations = j.value("train_observations", config.train_observations);
        config.heldout_observations = j.value("heldout_observations", config.heldout_observations);
        config.validate();
    } catch (const json::exception& e) {
        throw UsageError(std::string("bad config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("bad config: ") + e.what());
    }
    return config;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError(path.string() + ": " + e.what());
    }
    return experiment_config_from_json(j);
}

// Records written files and stage durations; one manifest per invocation.
class ManifestBuilder {
public:
    explicit ManifestBuilder(const ExperimentConfig& config) {
        manifest_["schema_version"] = kConfigSchemaVersion;
        manifest_["tool_version"] = std::string(kToolVersion);
        manifest_["rng"] = std::string(kRngName);
        manifest_["seed"] = config.master_seed;
        manifest_["config"] = to_json(config);
        manifest_["files"] = json::array();
        manifest_["stage_seconds"] = json::object();
    }

    void add_file(const std::filesystem::path& path) { manifest_["files"].push_back(path.string()); }
    void add_stage(const std::string& name, double seconds) { manifest_["stage_seconds"][name] = seconds; }

    void write(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("cannot open for writing: " + path.string());
        out << manifest_.dump(2) << '\n';
    }

private:
    json manifest_;
};

// Aggregate of one inference mode over the evaluation slice.
struct ModeSummary {
    InferenceMode mode = InferenceMode::standard_bon;
    int total_budget = 0;  // N
    int mini_batch = 0;    // n (equals N for standard BoN)
    int loops = 0;         // L (1 for standard BoN)
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    double mean_true_reward = 0.0;   // winner = best candidate seen
    double mean_generations = 0.0;
    std::uint64_t abstain_count = 0;
};

// Confusion accounting shared by every mode: predicted acceptable iff the
// run flagged found_acceptable; actual label is the sign of the winner's
// true reward. An abstention therefore lands in TN when the best seen was
// truly unacceptable and in FN when it was acceptable.
template <typename Response>
void tally_outcome(ModeSummary& summary, const InferenceOutcome<Response>& outcome) {
    const bool actual_good = outcome.true_normalized_reward_of_winner > 0.0;
    if (outcome.found_acceptable)
        (actual_good ? summary.tp : summary.fp) += 1;
    else
        (actual_good ? summary.fn : summary.tn) += 1;
    if (outcome.abstained()) summary.abstain_count += 1;
}

// Runs the selected strategies over the evaluation slice. Every mode replays
// the same per-prompt derived seed, so the strategies face identical
// response streams and differ only in their stopping rule.
template <typename Policy, typename Scorer, typename Oracle>
std::vector<ModeSummary> evaluate_modes(const InferenceSettings& inference, std::uint64_t seed,
                                        const std::vector<SyntheticPrompt>& prompts,
                                        const ThresholdSchedule& schedule, const Policy& policy,
                                        const Scorer& scorer, const Oracle& oracle) {
    inference.validate();
    const int total_budget = inference.mini_batch * inference.loops;
    const auto zero_schedule = ThresholdSchedule::constant_zero(inference.mini_batch, inference.loops);

    std::vector<ModeSummary> summaries;
    const auto want = [&](const std::string& name) {
        return inference.modes == "all" || inference.modes == name;
    };

    const auto run_mode = [&](InferenceMode mode) {
        ModeSummary summary;
        summary.mode = mode;
        summary.total_budget = total_budget;
        summary.mini_batch = mode == InferenceMode::standard_bon ? total_budget : inference.mini_batch;
        summary.loops = mode == InferenceMode::standard_bon ? 1 : inference.loops;
        KahanSum reward_sum, generation_sum;
        std::optional<ExhaustionPolicy> exhaustion;
        if (inference.abstain_on_exhaustion)
            exhaustion =
                *inference.abstain_on_exhaustion ? ExhaustionPolicy::abstain : ExhaustionPolicy::return_best;
        for (std::size_t p = 0; p < prompts.size(); ++p) {
            Rng rng(derive_seed(seed, p));
            if (mode == InferenceMode::standard_bon) {
                const auto outcome = best_of_n(prompts[p], total_budget, policy, scorer, oracle, rng);
                tally_outcome(summary, outcome);
                reward_sum.add(outcome.true_normalized_reward_of_winner);
                generation_sum.add(static_cast<double>(outcome.generations_consumed));
            } else {
                const auto& mode_schedule = mode == InferenceMode::guardrail ? schedule : zero_schedule;
                const auto outcome =
                    best_of_mini_n(prompts[p], inference.mini_batch, inference.loops, mode, mode_schedule,
                                   policy, scorer, oracle, rng, exhaustion);
                tally_outcome(summary, outcome);
                reward_sum.add(outcome.true_normalized_reward_of_winner);
                generation_sum.add(static_cast<double>(outcome.generations_consumed));
            }
        }
        summary.mean_true_reward = reward_sum.value() / static_cast<double>(prompts.size());
        summary.mean_generations = generation_sum.value() / static_cast<double>(prompts.size());
        summaries.push_back(summary);
    };

    if (want("bon")) run_mode(InferenceMode::standard_bon);
    if (want("guardrail")) run_mode(InferenceMode::guardrail);
    if (want("accelerator")) run_mode(InferenceMode::accelerator);
    return summaries;
}

class ExperimentRunner {
public:
    ExperimentRunner(ExperimentConfig config, int threads = 1)
        : config_(std::move(config)), threads_(threads), manifest_(config_) {
        config_.validate();
        out_dir_ = config_.output_dir;
        std::filesystem::create_directories(out_dir_);
    }

    const ExperimentConfig& config() const { return config_; }
    ManifestBuilder& manifest() { return manifest_; }

    std::filesystem::path train_path() const { return out_dir_ / "train.jsonl"; }
    std::filesystem::path heldout_path() const { return out_dir_ / "heldout.jsonl"; }
    std::filesystem::path params_path() const { return out_dir_ / "params.json"; }
    std::filesystem::path hard_prompts_path() const { return out_dir_ / "hard_prompts.csv"; }
    std::filesystem::path schedule_path() const { return out_dir_ / "schedule.json"; }
    std::filesystem::path results_path() const { return out_dir_ / "results.csv"; }
    std::filesystem::path curve_path() const { return out_dir_ / "curve.csv"; }
    std::filesystem::path binary_metrics_path() const { return out_dir_ / "binary_metrics.csv"; }
    std::filesystem::path manifest_path() const { return out_dir_ / "manifest.json"; }

    void gen_data() {
        Stopwatch watch(*this, "gen-data");
        const auto train = build_choice_dataset(config_.world, static_cast<std::size_t>(config_.train_observations),
                                                derive_seed(config_.master_seed, "train"), threads_);
        const auto heldout =
            build_choice_dataset(config_.world, static_cast<std::size_t>(config_.heldout_observations),
                                 derive_seed(config_.master_seed, "heldout"), threads_);
        save_dataset_jsonl(train_path(), train);
        manifest_.add_file(train_path());
        save_dataset_jsonl(heldout_path(), heldout);
        manifest_.add_file(heldout_path());
    }

    // Returns true when the optimizer converged.
    bool fit() {
        Stopwatch watch(*this, "fit");
        const auto train = load_dataset_jsonl(train_path());
        if (train.empty()) throw DataError("empty training dataset: " + train_path().string());
        const auto heldout = load_dataset_jsonl(heldout_path());
        const auto result = fit_mle(train, config_.training);
        std::optional<double> heldout_ll;
        if (!heldout.empty()) heldout_ll = total_log_likelihood(result.params, heldout);
        save_fit_result(params_path(), result, config_.training, config_.master_seed, heldout_ll);
        manifest_.add_file(params_path());
        return result.converged;
    }

    // Returns the number of hard prompts found.
    std::size_t calibrate() {
        Stopwatch watch(*this, "calibrate");
        const auto params = load_params(params_path());
        const auto pool =
            generate_prompt_set(config_.world, static_cast<std::size_t>(config_.calibration.pool_size),
                                config_.world.difficulty_min, config_.world.difficulty_max,
                                derive_seed(config_.master_seed, "calibration-pool"), threads_);
        const WorldPolicy policy{config_.world};
        const ModelScorer scorer{params};
        const auto scan = identify_hard_prompts(pool, policy, scorer, config_.calibration.responses_per_prompt,
                                                config_.calibration.p_min, config_.calibration.alpha,
                                                derive_seed(config_.master_seed, "calibration-scan"), threads_);
        save_hard_prompt_reports(hard_prompts_path(), scan.reports);
        manifest_.add_file(hard_prompts_path());

        ThresholdSchedule schedule;
        if (scan.hard_scores.empty()) {
            std::cerr << "warning: no hard prompts found; falling back to the all-zero schedule\n";
            schedule = ThresholdSchedule::constant_zero(config_.inference.mini_batch, config_.inference.loops);
        } else {
            const auto cdf = build_empirical_cdf(scan.hard_scores);
            schedule = build_schedule(cdf, config_.inference.mini_batch, config_.inference.loops);
            if (schedule.degenerate)
                std::cerr << "warning: degenerate hard-prompt CDF (no acceptable sample); "
                             "thresholds clamp to the sample maximum\n";
        }
        save_schedule(schedule_path(), schedule, config_.master_seed);
        manifest_.add_file(schedule_path());
        return scan.hard_count();
    }

    void run() {
        Stopwatch watch(*this, "run");
        const auto params = load_params(params_path());
        const auto schedule = load_schedule(schedule_path());
        const WorldPolicy policy{config_.world};
        const ModelScorer scorer{params};
        const TrueRewardOracle oracle;
        const auto& inference = config_.inference;

        // Figure-1 analog: P_FA(N) over a hard-prompt set.
        {
            const double hard_difficulty_min =
                difficulty_for_accept_probability(config_.world, inference.hard_accept_prob_max);
            const auto hard_prompts = generate_prompt_set(
                config_.world, static_cast<std::size_t>(inference.hard_eval_prompts), hard_difficulty_min,
                config_.world.difficulty_max, derive_seed(config_.master_seed, "hard-eval"), threads_);
            const auto curve =
                false_acceptance_curve(hard_prompts, inference.curve_n_values, inference.curve_trials, policy,
                                       scorer, oracle, derive_seed(config_.master_seed, "curve"), threads_);
            CsvWriter csv(curve_path(), {"N", "trials", "fp_count", "pfa", "half_width", "mean_true_reward"});
            for (std::size_t i = 0; i < curve.n_values.size(); ++i)
                csv.write_row({std::to_string(curve.n_values[i]), std::to_string(curve.trials_per_point),
                               std::to_string(curve.fp_counts[i]), format_double(curve.pfa_estimates[i]),
                               format_double(curve.half_widths[i]), format_double(curve.mean_true_rewards[i])});
            manifest_.add_file(curve_path());
        }

        // Table-2 analog: the three strategies on the mixed evaluation slice.
        {
            const auto eval_prompts = generate_prompt_set(
                config_.world, static_cast<std::size_t>(inference.eval_prompts), config_.world.difficulty_min,
                config_.world.difficulty_max, derive_seed(config_.master_seed, "eval"), threads_);
            const auto summaries = evaluate_modes(inference, derive_seed(config_.master_seed, "mode-eval"),
                                                  eval_prompts, schedule, policy, scorer, oracle);
            CsvWriter csv(results_path(), {"mode", "N", "n", "L", "tp", "fp", "tn", "fn", "mean_true_reward",
                                           "mean_generations", "abstain_count"});
            for (const auto& s : summaries)
                csv.write_row({to_string(s.mode), std::to_string(s.total_budget), std::to_string(s.mini_batch),
                               std::to_string(s.loops), std::to_string(s.tp), std::to_string(s.fp),
                               std::to_string(s.tn), std::to_string(s.fn), format_double(s.mean_true_reward),
                               format_double(s.mean_generations), std::to_string(s.abstain_count)});
            manifest_.add_file(results_path());
        }

        // Binary evaluation of the reward head on the held-out split, scored
        // against both the labeller's choice and the oracle reward sign.
        {
            const auto heldout = load_dataset_jsonl(heldout_path());
            CsvWriter csv(binary_metrics_path(),
                          {"method", "N", "threshold", "tp", "fp", "tn", "fn", "precision", "recall", "fpr"});
            auto instances = binarize(heldout, params);
            const auto write = [&](const std::string& method, const ConfusionMetrics& m) {
                csv.write_row({method, "1", "0", std::to_string(m.tp), std::to_string(m.fp),
                               std::to_string(m.tn), std::to_string(m.fn), csv_optional(m.precision),
                               csv_optional(m.recall), csv_optional(m.fpr)});
            };
            write("model_vs_choice", confusion_metrics(instances, 0.0));
            for (auto& inst : instances) {
                const auto& obs = heldout[inst.observation_index];
                inst.label = obs.candidates[inst.candidate_index].true_normalized_reward > 0.0 ? 1 : 0;
            }
            write("model_vs_oracle", confusion_metrics(instances, 0.0));
            manifest_.add_file(binary_metrics_path());
        }
    }

    void write_manifest() { manifest_.write(manifest_path()); }

private:
    class Stopwatch {
    public:
        Stopwatch(ExperimentRunner& runner, std::string name)
            : runner_(runner), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
        ~Stopwatch() {
            const auto elapsed = std::chrono::steady_clock::now() - start_;
            runner_.manifest_.add_stage(name_, std::chrono::duration<double>(elapsed).count());
        }

    private:
        ExperimentRunner& runner_;
        std::string name_;
        std::chrono::steady_clock::time_point start_;
    };

    ExperimentConfig config_;
    int threads_ = 1;
    std::filesystem::path out_dir_;
    ManifestBuilder manifest_;
};

}  // namespace minibon
