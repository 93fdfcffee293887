// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "minibon/calibration.hpp"
#include "minibon/estimator.hpp"
#include "minibon/evaluation.hpp"
#include "minibon/synthetic_world.hpp"

namespace minibon {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr int kConfigSchemaVersion = 1;

// Bad command line / configuration -> exit code 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Unreadable or malformed data files -> exit code 2.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using json = nlohmann::json;

// Shortest round-trip decimal form; '.' decimal point, locale-independent.
inline std::string format_double(double value) {
    char buffer[32];
    const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, result.ptr);
}

inline json to_json(const WorldConfig& config) {
    return json{{"prompt_feature_dim", config.prompt_feature_dim},
                {"response_feature_dim", config.response_feature_dim},
                {"true_weights", config.true_weights},
                {"difficulty_min", config.difficulty_min},
                {"difficulty_max", config.difficulty_max},
                {"candidates_per_prompt", config.candidates_per_prompt},
                {"rng_seed", config.rng_seed},
                {"accept_prob_easy", config.accept_prob_easy},
                {"accept_prob_hard", config.accept_prob_hard},
                {"utility_offset", config.utility_offset},
                {"quality_spread", config.quality_spread},
                {"utility_noise_halfwidth", config.utility_noise_halfwidth}};
}

inline WorldConfig world_config_from_json(const json& j) {
    WorldConfig config;
    config.prompt_feature_dim = j.value("prompt_feature_dim", config.prompt_feature_dim);
    config.response_feature_dim = j.value("response_feature_dim", config.response_feature_dim);
    config.true_weights = j.value("true_weights", config.true_weights);
    config.difficulty_min = j.value("difficulty_min", config.difficulty_min);
    config.difficulty_max = j.value("difficulty_max", config.difficulty_max);
    config.candidates_per_prompt = j.value("candidates_per_prompt", config.candidates_per_prompt);
    config.rng_seed = j.value("rng_seed", config.rng_seed);
    config.accept_prob_easy = j.value("accept_prob_easy", config.accept_prob_easy);
    config.accept_prob_hard = j.value("accept_prob_hard", config.accept_prob_hard);
    config.utility_offset = j.value("utility_offset", config.utility_offset);
    config.quality_spread = j.value("quality_spread", config.quality_spread);
    config.utility_noise_halfwidth = j.value("utility_noise_halfwidth", config.utility_noise_halfwidth);
    config.validate();
    return config;
}

inline json to_json(const TrainingConfig& config) {
    return json{{"step_size", config.step_size},
                {"max_iterations", config.max_iterations},
                {"gradient_tolerance", config.gradient_tolerance},
                {"l2_penalty", config.l2_penalty},
                {"rng_seed", config.rng_seed}};
}

inline TrainingConfig training_config_from_json(const json& j) {
    TrainingConfig config;
    config.step_size = j.value("step_size", config.step_size);
    config.max_iterations = j.value("max_iterations", config.max_iterations);
    config.gradient_tolerance = j.value("gradient_tolerance", config.gradient_tolerance);
    config.l2_penalty = j.value("l2_penalty", config.l2_penalty);
    config.rng_seed = j.value("rng_seed", config.rng_seed);
    config.validate();
    return config;
}

// ---- dataset (line-delimited JSON) ----

inline json to_json(const ChoiceObservation& obs) {
    json candidates = json::array();
    for (const auto& response : obs.candidates)
        candidates.push_back(json{{"features", response.features}, {"true_utility", response.true_utility}});
    return json{{"prompt_id", obs.prompt.id},
                {"prompt_features", obs.prompt.features},
                {"rejection_threshold", obs.prompt.rejection_threshold},
                {"candidates", std::move(candidates)},
                {"chosen", obs.chosen}};
}

inline void save_dataset_jsonl(const std::filesystem::path& path, const ChoiceDataset& dataset) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    for (const auto& obs : dataset) out << to_json(obs).dump() << '\n';
    if (!out) throw DataError("write failed: " + path.string());
}

inline ChoiceDataset load_dataset_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset: " + path.string());
    ChoiceDataset dataset;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            ChoiceObservation obs;
            obs.prompt.id = j.at("prompt_id").get<std::int64_t>();
            obs.prompt.features = j.at("prompt_features").get<std::vector<double>>();
            obs.prompt.rejection_threshold = j.at("rejection_threshold").get<double>();
            obs.chosen = j.at("chosen").get<int>();
            for (const auto& cj : j.at("candidates")) {
                SyntheticResponse response;
                response.features = cj.at("features").get<std::vector<double>>();
                response.true_utility = cj.at("true_utility").get<double>();
                response.true_normalized_reward = response.true_utility - obs.prompt.rejection_threshold;
                obs.candidates.push_back(std::move(response));
            }
            if (obs.candidates.empty()) throw std::runtime_error("no candidates");
            if (obs.chosen < 0 || obs.chosen > static_cast<int>(obs.candidates.size()))
                throw std::runtime_error("chosen index out of range");
            dataset.push_back(std::move(obs));
        } catch (const std::exception& e) {
            throw DataError(path.string() + ": line " + std::to_string(line_number) + ": " + e.what());
        }
    }
    return dataset;
}

// ---- fitted model ----

inline json to_json(const FitResult& fit, const TrainingConfig& config, std::uint64_t seed,
                    std::optional<double> heldout_log_likelihood = std::nullopt) {
    json j{{"schema_version", kConfigSchemaVersion},
           {"tool_version", kToolVersion},
           {"rng", std::string(kRngName)},
           {"seed", seed},
           {"training_config", to_json(config)},
           {"params", json{{"weights", fit.params.weights}, {"bias", fit.params.bias}}},
           {"final_log_likelihood", fit.final_log_likelihood},
           {"iterations_used", fit.iterations_used},
           {"converged", fit.converged},
           {"gradient_norm", fit.gradient_norm},
           {"diverged", fit.diverged}};
    if (heldout_log_likelihood) j["heldout_log_likelihood"] = *heldout_log_likelihood;
    return j;
}

inline void save_fit_result(const std::filesystem::path& path, const FitResult& fit,
                            const TrainingConfig& config, std::uint64_t seed,
                            std::optional<double> heldout_log_likelihood = std::nullopt) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << to_json(fit, config, seed, heldout_log_likelihood).dump(2) << '\n';
}

inline RewardModelParams load_params(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open params file: " + path.string());
    try {
        json j = json::parse(in);
        RewardModelParams params;
        params.weights = j.at("params").at("weights").get<std::vector<double>>();
        params.bias = j.at("params").at("bias").get<double>();
        return params;
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

// ---- threshold schedule ----

inline json to_json(const ThresholdSchedule& schedule, std::uint64_t seed) {
    json j{{"n", schedule.mini_batch},
           {"L", schedule.loops},
           {"taus", schedule.taus},
           {"degenerate", schedule.degenerate},
           {"rng", std::string(kRngName)},
           {"seed", seed}};
    if (std::isfinite(schedule.cdf_f0)) j["f0"] = schedule.cdf_f0;
    return j;
}

inline void save_schedule(const std::filesystem::path& path, const ThresholdSchedule& schedule,
                          std::uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << to_json(schedule, seed).dump(2) << '\n';
}

inline ThresholdSchedule load_schedule(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open schedule file: " + path.string());
    try {
        json j = json::parse(in);
        ThresholdSchedule schedule;
        schedule.mini_batch = j.at("n").get<int>();
        schedule.loops = j.at("L").get<int>();
        schedule.taus = j.at("taus").get<std::vector<double>>();
        schedule.degenerate = j.value("degenerate", false);
        schedule.cdf_f0 = j.value("f0", std::numeric_limits<double>::quiet_NaN());
        schedule.validate();
        return schedule;
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

// ---- CSV ----

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : out_(path) {
        if (!out_) throw DataError("cannot open for writing: " + path.string());
        write_row(header);
    }

    void write_row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

inline std::string csv_optional(const std::optional<double>& value) {
    return value ? format_double(*value) : std::string("undefined");
}

inline void save_hard_prompt_reports(const std::filesystem::path& path,
                                     const std::vector<HardPromptReport>& reports) {
    CsvWriter csv(path, {"prompt_id", "difficulty", "success_count", "trials", "p_value", "is_hard"});
    for (const auto& r : reports)
        csv.write_row({std::to_string(r.prompt_id), format_double(r.difficulty),
                       std::to_string(r.success_count), std::to_string(r.trials), format_double(r.p_value),
                       r.is_hard ? "true" : "false"});
}

}  // namespace minibon
