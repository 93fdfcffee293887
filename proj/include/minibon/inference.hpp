// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "minibon/calibration.hpp"
#include "minibon/parallel.hpp"
#include "minibon/rng.hpp"
#include "minibon/synthetic_world.hpp"

namespace minibon {

enum class InferenceMode { standard_bon, guardrail, accelerator };

inline std::string to_string(InferenceMode mode) {
    switch (mode) {
        case InferenceMode::standard_bon: return "bon";
        case InferenceMode::guardrail: return "guardrail";
        case InferenceMode::accelerator: return "accelerator";
    }
    return "unknown";
}

// What to do when every loop finishes without clearing its threshold.
enum class ExhaustionPolicy { abstain, return_best };

inline ExhaustionPolicy default_exhaustion_policy(InferenceMode mode) {
    return mode == InferenceMode::guardrail ? ExhaustionPolicy::abstain : ExhaustionPolicy::return_best;
}

template <typename Policy>
using policy_response_t =
    typename std::invoke_result_t<const Policy&, const SyntheticPrompt&, std::size_t, Rng&>::value_type;

// Result of one inference run. `selected` is empty when the run abstained;
// the winner fields always describe the best candidate seen, emitted or not.
template <typename Response>
struct InferenceOutcome {
    std::optional<Response> selected;
    double estimated_reward_of_winner = 0.0;
    double true_normalized_reward_of_winner = 0.0;  // synthetic oracle, analysis only
    long generations_consumed = 0;
    int loops_used = 0;
    bool found_acceptable = false;
    InferenceMode mode = InferenceMode::standard_bon;
    std::vector<double> loop_max_history;  // running max after each loop

    bool abstained() const { return !selected.has_value(); }
};

namespace detail {

// Lowest-index argmax under the strict comparison, matching the labeller's
// tie rule.
template <typename Response, typename Scorer>
std::size_t best_index(const SyntheticPrompt& prompt, const std::vector<Response>& responses,
                       const Scorer& scorer, double& best_score) {
    std::size_t best = 0;
    best_score = scorer(prompt, responses[0]);
    for (std::size_t i = 1; i < responses.size(); ++i) {
        const double score = scorer(prompt, responses[i]);
        if (score > best_score) {
            best_score = score;
            best = i;
        }
    }
    return best;
}

}  // namespace detail

// Standard Best-of-N: draw N, return the top estimated reward. Never
// abstains; found_acceptable records whether the winner cleared 0.
template <typename Policy, typename Scorer, typename Oracle>
InferenceOutcome<policy_response_t<Policy>> best_of_n(const SyntheticPrompt& prompt, int total_samples,
                                                      const Policy& policy, const Scorer& scorer,
                                                      const Oracle& oracle, Rng& rng) {
    if (total_samples < 1) throw std::invalid_argument("best_of_n: total_samples must be >= 1");
    auto responses = policy(prompt, static_cast<std::size_t>(total_samples), rng);

    InferenceOutcome<policy_response_t<Policy>> outcome;
    outcome.mode = InferenceMode::standard_bon;
    double best_score = 0.0;
    const std::size_t best = detail::best_index(prompt, responses, scorer, best_score);
    outcome.estimated_reward_of_winner = best_score;
    outcome.true_normalized_reward_of_winner = oracle(prompt, responses[best]);
    outcome.selected = std::move(responses[best]);
    outcome.generations_consumed = total_samples;
    outcome.loops_used = 1;
    outcome.found_acceptable = best_score > 0.0;
    outcome.loop_max_history = {best_score};
    return outcome;
}

// Best of mini-N in-loop: L sequential batches of n candidates; after batch
// l the global best is checked against tau_{n*l} and the run exits early on
// a strict pass. Guardrail mode takes the calibrated schedule; accelerator
// mode requires the all-zero schedule. On exhaustion the run abstains or
// returns the best found, per `exhaustion`.
template <typename Policy, typename Scorer, typename Oracle>
InferenceOutcome<policy_response_t<Policy>> best_of_mini_n(
    const SyntheticPrompt& prompt, int mini_batch, int loops, InferenceMode mode,
    const ThresholdSchedule& schedule, const Policy& policy, const Scorer& scorer, const Oracle& oracle,
    Rng& rng, std::optional<ExhaustionPolicy> exhaustion = std::nullopt) {
    if (mini_batch < 1 || loops < 1) throw std::invalid_argument("best_of_mini_n: n and L must be >= 1");
    if (mode == InferenceMode::standard_bon)
        throw std::invalid_argument("best_of_mini_n: use best_of_n for the standard mode");
    schedule.validate();
    if (schedule.loops != loops || schedule.mini_batch != mini_batch)
        throw std::invalid_argument("best_of_mini_n: schedule shape does not match n, L");
    if (mode == InferenceMode::accelerator && !schedule.all_zero())
        throw std::invalid_argument("best_of_mini_n: accelerator mode requires the all-zero schedule");

    using Response = policy_response_t<Policy>;
    InferenceOutcome<Response> outcome;
    outcome.mode = mode;

    std::optional<Response> best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int loop = 1; loop <= loops; ++loop) {
        auto batch = policy(prompt, static_cast<std::size_t>(mini_batch), rng);
        double batch_best_score = 0.0;
        const std::size_t batch_best = detail::best_index(prompt, batch, scorer, batch_best_score);
        if (!best || batch_best_score > best_score) {
            best_score = batch_best_score;
            best = std::move(batch[batch_best]);
        }
        outcome.loops_used = loop;
        outcome.loop_max_history.push_back(best_score);
        if (best_score > schedule.taus[static_cast<std::size_t>(loop - 1)]) {
            outcome.found_acceptable = true;
            break;
        }
    }

    outcome.generations_consumed = static_cast<long>(mini_batch) * outcome.loops_used;
    outcome.estimated_reward_of_winner = best_score;
    outcome.true_normalized_reward_of_winner = oracle(prompt, *best);
    const ExhaustionPolicy on_exhaustion = exhaustion.value_or(default_exhaustion_policy(mode));
    if (outcome.found_acceptable || on_exhaustion == ExhaustionPolicy::return_best)
        outcome.selected = std::move(*best);
    return outcome;
}

// Reward scorer with a controlled error level: the true reward plus seeded
// uniform noise on [-noise_level, noise_level]. The noise is a pure function
// of (salt, prompt, response features), so a response scores identically
// wherever it is met. Complements the fitted model for false-acceptance
// sweeps where the estimation-noise level must be dialed explicitly.
struct NoisyOracleScorer {
    double noise_level = 0.0;
    std::uint64_t salt = 0;

    double operator()(const SyntheticPrompt& prompt, const SyntheticResponse& response) const {
        if (noise_level <= 0.0) return response.true_normalized_reward;
        std::uint64_t h = derive_seed(salt, static_cast<std::uint64_t>(prompt.id));
        for (double f : response.features) {
            std::uint64_t bits;
            static_assert(sizeof(bits) == sizeof(f));
            std::memcpy(&bits, &f, sizeof(bits));
            h = derive_seed(h, bits);
        }
        Rng rng(h);
        return response.true_normalized_reward + rng.uniform(-noise_level, noise_level);
    }
};

struct FalseAcceptanceEstimate {
    double p_fa = 0.0;
    double half_width = 0.0;  // 1.96 * sqrt(p(1-p)/trials)
    std::uint64_t false_acceptances = 0;
    std::uint64_t trials = 0;
};

// Monte Carlo P_FA(N): fraction of Best-of-N runs whose winner is estimated
// acceptable but truly unacceptable.
template <typename Policy, typename Scorer, typename Oracle>
FalseAcceptanceEstimate estimate_false_acceptance(const SyntheticPrompt& prompt, int total_samples,
                                                  std::uint64_t trials, const Policy& policy,
                                                  const Scorer& scorer, const Oracle& oracle,
                                                  std::uint64_t seed, int threads = 1) {
    if (trials < 1) throw std::invalid_argument("estimate_false_acceptance: trials must be >= 1");
    std::vector<std::uint8_t> hits(trials, 0);
    parallel_for(trials, threads, [&](std::size_t t) {
        Rng rng(derive_seed(seed, t));
        const auto outcome = best_of_n(prompt, total_samples, policy, scorer, oracle, rng);
        hits[t] = outcome.estimated_reward_of_winner > 0.0 && outcome.true_normalized_reward_of_winner < 0.0;
    });
    FalseAcceptanceEstimate estimate;
    estimate.trials = trials;
    for (auto h : hits) estimate.false_acceptances += h;
    estimate.p_fa = static_cast<double>(estimate.false_acceptances) / static_cast<double>(trials);
    estimate.half_width = 1.96 * std::sqrt(estimate.p_fa * (1.0 - estimate.p_fa) / static_cast<double>(trials));
    return estimate;
}

struct DecompositionRow {
    int good_count = 0;       // realized K
    std::uint64_t runs = 0;
    double q_hat = 0.0;       // runs / trials
    double a_hat = 0.0;       // false acceptances / runs
    bool low_support = false; // fewer runs than the support floor
};

struct FalseAcceptanceDecomposition {
    std::vector<DecompositionRow> rows;  // ascending by good_count
    double p_fa = 0.0;
    std::uint64_t trials = 0;

    // sum_k a_hat(k) q_hat(k); equals p_fa identically by construction.
    double recomposed() const {
        double acc = 0.0;
        for (const auto& row : rows) acc += row.a_hat * row.q_hat;
        return acc;
    }
};

// Stratifies P_FA(N) Monte Carlo runs by the realized number of truly
// acceptable candidates K. q_hat(k) estimates the binomial law Bin(N, p_g);
// a_hat(k) the conditional false-acceptance rate.
template <typename Policy, typename Scorer, typename Oracle>
FalseAcceptanceDecomposition false_acceptance_decomposition(const SyntheticPrompt& prompt, int total_samples,
                                                            std::uint64_t trials, const Policy& policy,
                                                            const Scorer& scorer, const Oracle& oracle,
                                                            std::uint64_t seed,
                                                            std::uint64_t min_stratum_runs = 30) {
    if (trials < 1) throw std::invalid_argument("false_acceptance_decomposition: trials must be >= 1");
    std::map<int, std::pair<std::uint64_t, std::uint64_t>> strata;  // k -> (runs, false acceptances)
    std::uint64_t total_hits = 0;
    for (std::uint64_t t = 0; t < trials; ++t) {
        Rng rng(derive_seed(seed, t));
        const auto responses = policy(prompt, static_cast<std::size_t>(total_samples), rng);
        int good = 0;
        for (const auto& response : responses) good += oracle(prompt, response) > 0.0 ? 1 : 0;
        double best_score = 0.0;
        const std::size_t best = detail::best_index(prompt, responses, scorer, best_score);
        const bool hit = best_score > 0.0 && oracle(prompt, responses[best]) < 0.0;
        auto& [runs, hits] = strata[good];
        ++runs;
        hits += hit ? 1 : 0;
        total_hits += hit ? 1 : 0;
    }

    FalseAcceptanceDecomposition decomposition;
    decomposition.trials = trials;
    decomposition.p_fa = static_cast<double>(total_hits) / static_cast<double>(trials);
    for (const auto& [k, counts] : strata) {
        DecompositionRow row;
        row.good_count = k;
        row.runs = counts.first;
        row.q_hat = static_cast<double>(counts.first) / static_cast<double>(trials);
        row.a_hat = static_cast<double>(counts.second) / static_cast<double>(counts.first);
        row.low_support = counts.first < min_stratum_runs;
        decomposition.rows.push_back(row);
    }
    return decomposition;
}

struct FalseAcceptanceCurve {
    std::vector<int> n_values;
    std::vector<double> pfa_estimates;
    std::vector<std::uint64_t> fp_counts;
    std::vector<double> mean_true_rewards;  // mean true reward of the winner
    std::uint64_t trials_per_point = 0;
    std::vector<double> half_widths;
};

// Sweeps Best-of-N over ascending budgets, spreading `trials` runs
// round-robin across the prompt set; the data behind the reliability-vs-N
// picture.
template <typename Policy, typename Scorer, typename Oracle>
FalseAcceptanceCurve false_acceptance_curve(const std::vector<SyntheticPrompt>& prompts,
                                            const std::vector<int>& n_values, std::uint64_t trials,
                                            const Policy& policy, const Scorer& scorer, const Oracle& oracle,
                                            std::uint64_t seed, int threads = 1) {
    if (prompts.empty()) throw std::invalid_argument("false_acceptance_curve: empty prompt set");
    if (n_values.empty()) throw std::invalid_argument("false_acceptance_curve: empty n_values");
    for (std::size_t i = 1; i < n_values.size(); ++i)
        if (n_values[i] <= n_values[i - 1])
            throw std::invalid_argument("false_acceptance_curve: n_values must be ascending");

    FalseAcceptanceCurve curve;
    curve.n_values = n_values;
    curve.trials_per_point = trials;
    for (std::size_t point = 0; point < n_values.size(); ++point) {
        const int total_samples = n_values[point];
        std::vector<std::uint8_t> hits(trials, 0);
        std::vector<double> winner_rewards(trials, 0.0);
        const std::uint64_t point_seed = derive_seed(seed, point);
        parallel_for(trials, threads, [&](std::size_t t) {
            const auto& prompt = prompts[t % prompts.size()];
            Rng rng(derive_seed(point_seed, t));
            const auto outcome = best_of_n(prompt, total_samples, policy, scorer, oracle, rng);
            hits[t] =
                outcome.estimated_reward_of_winner > 0.0 && outcome.true_normalized_reward_of_winner < 0.0;
            winner_rewards[t] = outcome.true_normalized_reward_of_winner;
        });
        std::uint64_t fp = 0;
        for (auto h : hits) fp += h;
        const double p = static_cast<double>(fp) / static_cast<double>(trials);
        curve.fp_counts.push_back(fp);
        curve.pfa_estimates.push_back(p);
        curve.half_widths.push_back(1.96 * std::sqrt(p * (1.0 - p) / static_cast<double>(trials)));
        curve.mean_true_rewards.push_back(mean(winner_rewards));
    }
    return curve;
}

}  // namespace minibon
