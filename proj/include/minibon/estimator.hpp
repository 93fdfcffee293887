// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "minibon/mathutil.hpp"
#include "minibon/synthetic_world.hpp"

namespace minibon {

// Learned reward head: R(x, y) = weights . y_features + bias. Linear on
// purpose; the synthetic ground truth is linear, which keeps recovery
// testable.
struct RewardModelParams {
    std::vector<double> weights;
    double bias = 0.0;

    static RewardModelParams zeros(int response_feature_dim) {
        return {std::vector<double>(static_cast<std::size_t>(response_feature_dim), 0.0), 0.0};
    }
};

struct TrainingConfig {
    // Step applied to the mean (per-observation) gradient; backtracking
    // halves it within an iteration whenever the likelihood would decrease.
    double step_size = 2.0;
    int max_iterations = 2000;
    // Convergence threshold on the L2 norm of the mean gradient.
    double gradient_tolerance = 1e-7;
    double l2_penalty = 0.0;
    std::uint64_t rng_seed = 0;  // recorded in outputs; the fit itself is deterministic

    void validate() const {
        if (!(step_size > 0.0)) throw std::invalid_argument("TrainingConfig: step_size must be > 0");
        if (max_iterations < 1) throw std::invalid_argument("TrainingConfig: max_iterations must be >= 1");
        if (!(gradient_tolerance > 0.0))
            throw std::invalid_argument("TrainingConfig: gradient_tolerance must be > 0");
        if (l2_penalty < 0.0) throw std::invalid_argument("TrainingConfig: l2_penalty must be >= 0");
    }
};

struct FitResult {
    RewardModelParams params;
    double final_log_likelihood = 0.0;
    int iterations_used = 0;
    bool converged = false;
    double gradient_norm = std::numeric_limits<double>::infinity();
    bool diverged = false;
};

inline double predict_reward(const RewardModelParams& params, const SyntheticPrompt&,
                             const SyntheticResponse& response) {
    if (params.weights.size() != response.features.size())
        throw std::invalid_argument("predict_reward: feature dimension mismatch");
    double dot = params.bias;
    for (std::size_t i = 0; i < params.weights.size(); ++i) dot += params.weights[i] * response.features[i];
    return dot;
}

// log P(d | x, Y): chosen option's reward minus log(1 + sum_j exp(R_j)),
// where the 1 is the outside option's exp(0). Log-sum-exp stabilized.
inline double observation_log_prob(const RewardModelParams& params, const ChoiceObservation& obs) {
    if (obs.candidates.empty()) throw std::invalid_argument("observation_log_prob: empty candidate set");
    if (obs.chosen < 0 || obs.chosen > static_cast<int>(obs.candidates.size()))
        throw std::invalid_argument("observation_log_prob: chosen index out of range");

    std::vector<double> scores(obs.candidates.size() + 1);
    scores[0] = 0.0;
    for (std::size_t j = 0; j < obs.candidates.size(); ++j)
        scores[j + 1] = predict_reward(params, obs.prompt, obs.candidates[j]);
    return scores[static_cast<std::size_t>(obs.chosen)] - log_sum_exp(scores);
}

// Sum of per-observation log-probabilities, minus l2_penalty * ||weights||^2
// when configured. Accumulated with compensated summation so partition order
// cannot move the result beyond ~1e-15.
inline double total_log_likelihood(const RewardModelParams& params, const ChoiceDataset& dataset,
                                   double l2_penalty = 0.0) {
    if (dataset.empty()) throw std::invalid_argument("total_log_likelihood: empty dataset");
    KahanSum sum;
    for (const auto& obs : dataset) sum.add(observation_log_prob(params, obs));
    double value = sum.value();
    if (l2_penalty > 0.0) {
        double w2 = 0.0;
        for (double w : params.weights) w2 += w * w;
        value -= l2_penalty * w2;
    }
    return value;
}

// Analytic gradient of total_log_likelihood, laid out as
// [d/dw_0 .. d/dw_{D-1}, d/dbias]. Per observation: the chosen candidate's
// feature vector minus the probability-weighted mean of candidate features,
// with the outside option contributing a zero vector; the bias picks up
// 1{chosen>0} - sum_j p_j.
inline std::vector<double> log_likelihood_gradient(const RewardModelParams& params,
                                                   const ChoiceDataset& dataset, double l2_penalty = 0.0) {
    if (dataset.empty()) throw std::invalid_argument("log_likelihood_gradient: empty dataset");
    const std::size_t dim = params.weights.size();
    std::vector<KahanSum> grad(dim + 1);

    std::vector<double> scores;
    for (const auto& obs : dataset) {
        const std::size_t count = obs.candidates.size();
        if (count == 0) throw std::invalid_argument("log_likelihood_gradient: empty candidate set");
        scores.assign(count + 1, 0.0);
        for (std::size_t j = 0; j < count; ++j)
            scores[j + 1] = predict_reward(params, obs.prompt, obs.candidates[j]);

        double m = 0.0;
        for (double s : scores) m = std::max(m, s);
        double denom = 0.0;
        for (double& s : scores) {
            s = std::exp(s - m);
            denom += s;
        }

        double bias_coef = obs.chosen > 0 ? 1.0 : 0.0;
        for (std::size_t j = 0; j < count; ++j) {
            const double p = scores[j + 1] / denom;
            const double coef = (static_cast<int>(j) + 1 == obs.chosen ? 1.0 : 0.0) - p;
            const auto& features = obs.candidates[j].features;
            for (std::size_t k = 0; k < dim; ++k) grad[k].add(coef * features[k]);
            bias_coef -= p;
        }
        grad[dim].add(bias_coef);
    }

    std::vector<double> out(dim + 1);
    for (std::size_t k = 0; k <= dim; ++k) out[k] = grad[k].value();
    if (l2_penalty > 0.0)
        for (std::size_t k = 0; k < dim; ++k) out[k] -= 2.0 * l2_penalty * params.weights[k];
    return out;
}

// Full-batch gradient ascent from theta = 0 with per-iteration backtracking
// (step halving on any likelihood decrease). The objective is concave for
// this model class, so initialization affects only the iteration count.
inline FitResult fit_mle(const ChoiceDataset& dataset, const TrainingConfig& config) {
    config.validate();
    if (dataset.empty()) throw std::invalid_argument("fit_mle: empty dataset");
    const auto dim = static_cast<int>(dataset.front().candidates.front().features.size());
    const double inv_n = 1.0 / static_cast<double>(dataset.size());

    FitResult result;
    result.params = RewardModelParams::zeros(dim);
    double ll = total_log_likelihood(result.params, dataset, config.l2_penalty);

    for (int iter = 0; iter < config.max_iterations; ++iter) {
        const auto gradient = log_likelihood_gradient(result.params, dataset, config.l2_penalty);
        double norm2 = 0.0;
        for (double g : gradient) norm2 += (g * inv_n) * (g * inv_n);
        result.gradient_norm = std::sqrt(norm2);
        if (result.gradient_norm <= config.gradient_tolerance) {
            result.converged = true;
            break;
        }

        double step = config.step_size;
        bool accepted = false;
        for (int halving = 0; halving < 60; ++halving) {
            RewardModelParams trial = result.params;
            for (std::size_t k = 0; k < trial.weights.size(); ++k)
                trial.weights[k] += step * gradient[k] * inv_n;
            trial.bias += step * gradient.back() * inv_n;
            const double trial_ll = total_log_likelihood(trial, dataset, config.l2_penalty);
            if (std::isfinite(trial_ll) && trial_ll >= ll) {
                result.params = std::move(trial);
                ll = trial_ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        result.iterations_used = iter + 1;
        if (!accepted) {
            // Even the smallest step failed: either a numerically flat
            // optimum (fine) or non-finite likelihood (divergence).
            result.diverged = !std::isfinite(ll);
            break;
        }
    }

    if (!result.converged) {
        const auto gradient = log_likelihood_gradient(result.params, dataset, config.l2_penalty);
        double norm2 = 0.0;
        for (double g : gradient) norm2 += (g * inv_n) * (g * inv_n);
        result.gradient_norm = std::sqrt(norm2);
        result.converged = result.gradient_norm <= config.gradient_tolerance;
    }
    result.final_log_likelihood = ll;
    return result;
}

// Scorer adapter for the inference/calibration templates.
struct ModelScorer {
    RewardModelParams params;
    double operator()(const SyntheticPrompt& prompt, const SyntheticResponse& response) const {
        return predict_reward(params, prompt, response);
    }
};

}  // namespace minibon
