// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include "minibon/choice_model.hpp"
#include "minibon/mathutil.hpp"
#include "minibon/parallel.hpp"
#include "minibon/rng.hpp"

namespace minibon {

// Fully synthetic generator + labeller. Ground-truth utility is linear in
// response features plus a small bounded noise term; each prompt carries an
// explicit rejection threshold C(x) calibrated by Monte Carlo so that the
// per-response acceptability probability p_g hits a target that decreases
// with prompt difficulty. Harder prompt => responses shifted against the
// weight direction => lower p_g.
//
// Response quality varies along the weight direction by a bounded,
// saturating (arcsine) deviate on [-quality_spread, quality_spread]: like a
// bounded judge score, quality piles up near the extremes, so the best of N
// draws saturates quickly instead of drifting upward forever.
struct WorldConfig {
    int prompt_feature_dim = 4;
    int response_feature_dim = 6;
    std::vector<double> true_weights = {1.2, -0.8, 0.5, 0.9, -0.4, 0.3};
    double difficulty_min = 0.0;
    double difficulty_max = 1.0;
    int candidates_per_prompt = 2;
    std::uint64_t rng_seed = 20240817;

    // Shape of the generative model. Target p_g interpolates log-linearly
    // from accept_prob_easy at difficulty_min to accept_prob_hard at
    // difficulty_max.
    double accept_prob_easy = 0.6;
    double accept_prob_hard = 0.005;
    double utility_offset = 1.0;           // baseline mean utility
    double quality_spread = 4.0;           // half-range of the quality deviate
    double utility_noise_halfwidth = 0.05; // uniform noise on true utility

    double weight_norm() const {
        double s = 0.0;
        for (double w : true_weights) s += w * w;
        return std::sqrt(s);
    }

    void validate() const {
        if (prompt_feature_dim < 1 || response_feature_dim < 1)
            throw std::invalid_argument("WorldConfig: feature dimensions must be positive");
        if (static_cast<int>(true_weights.size()) != response_feature_dim)
            throw std::invalid_argument("WorldConfig: true_weights length must equal response_feature_dim");
        if (!(difficulty_min <= difficulty_max))
            throw std::invalid_argument("WorldConfig: empty difficulty range");
        if (candidates_per_prompt < 1)
            throw std::invalid_argument("WorldConfig: candidates_per_prompt must be >= 1");
        if (!(accept_prob_easy > 0.0 && accept_prob_easy < 1.0) ||
            !(accept_prob_hard > 0.0 && accept_prob_hard < 1.0))
            throw std::invalid_argument("WorldConfig: accept probabilities must be in (0,1)");
        if (accept_prob_hard > accept_prob_easy)
            throw std::invalid_argument("WorldConfig: accept_prob_hard must not exceed accept_prob_easy");
        if (!(quality_spread > 0.0)) throw std::invalid_argument("WorldConfig: quality_spread must be > 0");
        if (!(utility_noise_halfwidth >= 0.0))
            throw std::invalid_argument("WorldConfig: negative noise halfwidth");
        if (weight_norm() <= 0.0)
            throw std::invalid_argument("WorldConfig: true_weights must be nonzero");
    }
};

struct SyntheticPrompt {
    std::int64_t id = 0;
    std::vector<double> features;
    double rejection_threshold = 0.0;  // ground-truth C(x)
    double difficulty = 0.0;
};

struct SyntheticResponse {
    std::vector<double> features;
    double true_utility = 0.0;
    double true_normalized_reward = 0.0;  // true_utility - C(x), exactly
};

// One labelled record (x, Y, d); chosen == 0 is the outside option.
struct ChoiceObservation {
    SyntheticPrompt prompt;
    std::vector<SyntheticResponse> candidates;
    int chosen = 0;
};

using ChoiceDataset = std::vector<ChoiceObservation>;

// Gumbel(0,1) via inverse CDF: -ln(-ln u).
inline double gumbel_from_uniform(double u) {
    if (!(u > 0.0 && u < 1.0)) throw std::invalid_argument("gumbel_from_uniform: u must be in (0,1)");
    return -std::log(-std::log(u));
}

inline double sample_gumbel(Rng& rng) { return gumbel_from_uniform(rng.uniform_open01()); }

// Labeller draw: argmax over {outside, candidates} of reward + Gumbel noise,
// with the outside option's reward fixed at 0. Returns 0..J; ties (a
// probability-zero event) go to the lowest index.
inline int simulate_labeller_choice(const RewardVector& true_normalized_rewards, Rng& rng) {
    double best = sample_gumbel(rng);  // outside option utility
    int best_index = 0;
    for (std::size_t i = 0; i < true_normalized_rewards.size(); ++i) {
        const double u = true_normalized_rewards[i] + sample_gumbel(rng);
        if (u > best) {
            best = u;
            best_index = static_cast<int>(i) + 1;
        }
    }
    return best_index;
}

// Target per-response acceptability probability for a difficulty level;
// log-linear in difficulty, decreasing.
inline double target_accept_probability(const WorldConfig& config, double difficulty) {
    const double lo = config.difficulty_min, hi = config.difficulty_max;
    double t = 0.0;
    if (hi > lo) t = std::clamp((difficulty - lo) / (hi - lo), 0.0, 1.0);
    return std::exp((1.0 - t) * std::log(config.accept_prob_easy) + t * std::log(config.accept_prob_hard));
}

// Inverse of target_accept_probability, clamped to the difficulty range.
inline double difficulty_for_accept_probability(const WorldConfig& config, double p_g) {
    if (!(p_g > 0.0 && p_g < 1.0))
        throw std::invalid_argument("difficulty_for_accept_probability: p_g must be in (0,1)");
    const double le = std::log(config.accept_prob_easy), lh = std::log(config.accept_prob_hard);
    if (le == lh) return config.difficulty_min;
    const double t = std::clamp((std::log(p_g) - le) / (lh - le), 0.0, 1.0);
    return config.difficulty_min + t * (config.difficulty_max - config.difficulty_min);
}

namespace detail {

// Arcsine-distributed quality deviate on [-spread, spread]; the (1 - p)
// quantile is spread * cos(pi * p).
inline double sample_quality(const WorldConfig& config, Rng& rng) {
    return -config.quality_spread * std::cos(std::numbers::pi * rng.uniform_open01());
}

// Mean feature shift along the (unit) weight direction for a difficulty
// level, chosen so Pr(utility > utility_offset) hits the target p_g.
inline double response_mean_scale(const WorldConfig& config, double difficulty) {
    const double sigma = config.weight_norm();
    const double p_g = target_accept_probability(config, difficulty);
    const double quality_quantile = config.quality_spread * std::cos(std::numbers::pi * p_g);
    return (config.utility_offset - quality_quantile) / sigma;
}

// Utility draw matching generate_responses exactly: the feature noise
// orthogonal to the weights never reaches the utility.
inline double sample_utility(const WorldConfig& config, double mean_scale, Rng& rng) {
    double u = config.weight_norm() * mean_scale + sample_quality(config, rng);
    if (config.utility_noise_halfwidth > 0.0)
        u += rng.uniform(-config.utility_noise_halfwidth, config.utility_noise_halfwidth);
    return u;
}

}  // namespace detail

// Number of Monte Carlo utility draws used to calibrate C(x) per prompt.
inline constexpr int kThresholdCalibrationDraws = 10000;

// Samples a prompt: spherical-normal features plus a rejection threshold
// C(x) set to the empirical (1 - p_g) utility quantile of 10^4 simulated
// responses, so that Pr(true_normalized_reward > 0) matches the difficulty's
// target p_g.
inline SyntheticPrompt generate_prompt(const WorldConfig& config, double difficulty, Rng& rng,
                                       std::int64_t id = 0) {
    config.validate();
    if (!(difficulty >= config.difficulty_min && difficulty <= config.difficulty_max))
        throw std::invalid_argument("generate_prompt: difficulty outside configured range");

    SyntheticPrompt prompt;
    prompt.id = id;
    prompt.difficulty = difficulty;
    prompt.features.resize(static_cast<std::size_t>(config.prompt_feature_dim));
    for (double& f : prompt.features) f = rng.normal();

    const double mean_scale = detail::response_mean_scale(config, difficulty);
    std::vector<double> utilities(kThresholdCalibrationDraws);
    for (double& u : utilities) u = detail::sample_utility(config, mean_scale, rng);

    const double p_g = target_accept_probability(config, difficulty);
    auto rank = static_cast<std::ptrdiff_t>((1.0 - p_g) * kThresholdCalibrationDraws);
    rank = std::clamp<std::ptrdiff_t>(rank, 0, kThresholdCalibrationDraws - 1);
    std::nth_element(utilities.begin(), utilities.begin() + rank, utilities.end());
    prompt.rejection_threshold = utilities[static_cast<std::size_t>(rank)];
    return prompt;
}

// I.i.d. responses to a prompt; the generator policy stand-in. Features are
// the quality-shifted weight direction plus isotropic normal noise with the
// weight component projected out, so the quality deviate alone carries the
// utility.
inline std::vector<SyntheticResponse> generate_responses(const SyntheticPrompt& prompt, std::size_t count,
                                                         const WorldConfig& config, Rng& rng) {
    if (count == 0) throw std::invalid_argument("generate_responses: count must be >= 1");
    const double sigma = config.weight_norm();
    const double mean_scale = detail::response_mean_scale(config, prompt.difficulty);
    const auto dim = static_cast<std::size_t>(config.response_feature_dim);

    std::vector<double> direction(dim);
    for (std::size_t i = 0; i < dim; ++i) direction[i] = config.true_weights[i] / sigma;

    std::vector<SyntheticResponse> responses(count);
    std::vector<double> noise(dim);
    for (auto& response : responses) {
        const double quality = detail::sample_quality(config, rng);
        double projection = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            noise[i] = rng.normal();
            projection += direction[i] * noise[i];
        }
        response.features.resize(dim);
        const double along = mean_scale + quality / sigma;
        double dot = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            response.features[i] = along * direction[i] + (noise[i] - projection * direction[i]);
            dot += config.true_weights[i] * response.features[i];
        }
        double jitter = 0.0;
        if (config.utility_noise_halfwidth > 0.0)
            jitter = rng.uniform(-config.utility_noise_halfwidth, config.utility_noise_halfwidth);
        response.true_utility = dot + jitter;
        response.true_normalized_reward = response.true_utility - prompt.rejection_threshold;
    }
    return responses;
}

inline RewardVector true_rewards_of(const std::vector<SyntheticResponse>& responses) {
    std::vector<double> rewards(responses.size());
    for (std::size_t i = 0; i < responses.size(); ++i) rewards[i] = responses[i].true_normalized_reward;
    return RewardVector(std::move(rewards));
}

// Builds the labelled choice dataset: per prompt, J candidates plus one
// simulated labeller choice. Each prompt runs on its own derived seed, so
// output is a pure function of (config, num_prompts, seed) independent of
// thread count. Difficulties are uniform over [difficulty_lo, difficulty_hi]
// when given (a sub-range of the config's range), else over the full range.
inline ChoiceDataset build_choice_dataset(const WorldConfig& config, std::size_t num_prompts,
                                          std::uint64_t seed, int threads = 1,
                                          std::optional<double> difficulty_lo = std::nullopt,
                                          std::optional<double> difficulty_hi = std::nullopt) {
    config.validate();
    if (num_prompts == 0) throw std::invalid_argument("build_choice_dataset: num_prompts must be >= 1");
    const double lo = difficulty_lo.value_or(config.difficulty_min);
    const double hi = difficulty_hi.value_or(config.difficulty_max);
    if (!(lo >= config.difficulty_min && hi <= config.difficulty_max && lo <= hi))
        throw std::invalid_argument("build_choice_dataset: difficulty sub-range outside configured range");

    ChoiceDataset dataset(num_prompts);
    parallel_for(num_prompts, threads, [&](std::size_t i) {
        Rng rng(derive_seed(seed, i));
        const double difficulty = rng.uniform(lo, hi);
        ChoiceObservation obs;
        obs.prompt = generate_prompt(config, difficulty, rng, static_cast<std::int64_t>(i));
        obs.candidates =
            generate_responses(obs.prompt, static_cast<std::size_t>(config.candidates_per_prompt), config, rng);
        obs.chosen = simulate_labeller_choice(true_rewards_of(obs.candidates), rng);
        dataset[i] = std::move(obs);
    });
    return dataset;
}

// Generates a prompt slice (no choices) for calibration pools and
// evaluation sets; difficulties uniform over [lo, hi].
inline std::vector<SyntheticPrompt> generate_prompt_set(const WorldConfig& config, std::size_t count,
                                                        double difficulty_lo, double difficulty_hi,
                                                        std::uint64_t seed, int threads = 1) {
    config.validate();
    std::vector<SyntheticPrompt> prompts(count);
    parallel_for(count, threads, [&](std::size_t i) {
        Rng rng(derive_seed(seed, i));
        const double difficulty = rng.uniform(difficulty_lo, difficulty_hi);
        prompts[i] = generate_prompt(config, difficulty, rng, static_cast<std::int64_t>(i));
    });
    return prompts;
}

// Response-generating policy adapter for the inference/calibration templates.
struct WorldPolicy {
    WorldConfig config;
    std::vector<SyntheticResponse> operator()(const SyntheticPrompt& prompt, std::size_t count, Rng& rng) const {
        return generate_responses(prompt, count, config, rng);
    }
};

// Oracle view of a response's true normalized reward (analysis only).
struct TrueRewardOracle {
    double operator()(const SyntheticPrompt&, const SyntheticResponse& response) const {
        return response.true_normalized_reward;
    }
};

}  // namespace minibon
