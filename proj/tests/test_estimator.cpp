// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "minibon/estimator.hpp"
#include "minibon/mathutil.hpp"
#include "support/test_helpers.hpp"

using namespace minibon;
using minibon::testing::finite_difference_gradient;
using minibon::testing::random_dataset;
using minibon::testing::random_params;
using minibon::testing::relative_vector_error;

namespace {

ChoiceObservation make_observation(std::vector<std::vector<double>> features, int chosen) {
    ChoiceObservation obs;
    obs.candidates.resize(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) obs.candidates[i].features = std::move(features[i]);
    obs.chosen = chosen;
    return obs;
}

}  // namespace

TEST_CASE("predict_reward is the affine score of the response features") {
    SyntheticPrompt prompt;
    SyntheticResponse response;
    response.features = {2.0, -1.0, 0.5};

    RewardModelParams zero = RewardModelParams::zeros(3);
    CHECK(predict_reward(zero, prompt, response) == 0.0);

    RewardModelParams unit{{1.0, 0.0, 0.0}, 0.0};
    CHECK(predict_reward(unit, prompt, response) == Catch::Approx(2.0));

    RewardModelParams affine{{1.0, 2.0, 0.0}, -0.25};
    CHECK(predict_reward(affine, prompt, response) == Catch::Approx(2.0 - 2.0 - 0.25));

    RewardModelParams wrong_dim{{1.0}, 0.0};
    CHECK_THROWS_AS(predict_reward(wrong_dim, prompt, response), std::invalid_argument);
}

TEST_CASE("observation log-probability: uniform and scalar cases") {
    const auto params = RewardModelParams::zeros(2);

    // theta = 0, two candidates: every option has probability 1/3.
    auto obs = make_observation({{1.0, 0.0}, {0.0, 1.0}}, 1);
    CHECK(observation_log_prob(params, obs) == Catch::Approx(-1.0986122886681098).margin(1e-6));
    obs.chosen = 0;
    CHECK(observation_log_prob(params, obs) == Catch::Approx(-1.0986122886681098).margin(1e-6));

    // Rewards evaluate to [1, -1]; choosing the outside option has log-prob
    // log(0.2447...).
    RewardModelParams signed_params{{1.0, 0.0}, 0.0};
    auto pm = make_observation({{1.0, 0.0}, {-1.0, 0.0}}, 0);
    CHECK(observation_log_prob(signed_params, pm) == Catch::Approx(-1.408).margin(1e-3));

    // Single candidate with reward 0.
    auto single = make_observation({{0.0, 0.0}}, 1);
    CHECK(observation_log_prob(params, single) == Catch::Approx(std::log(0.5)).margin(1e-12));

    auto bad = make_observation({{0.0, 0.0}}, 2);
    CHECK_THROWS_AS(observation_log_prob(params, bad), std::invalid_argument);
}

TEST_CASE("total log-likelihood: additivity, uniform value, sign") {
    Rng rng(17);
    const auto dataset = random_dataset(40, 2, 3, rng);
    const auto params = RewardModelParams::zeros(3);

    // theta = 0, J = 2: N * log(1/3).
    CHECK(total_log_likelihood(params, dataset) ==
          Catch::Approx(40.0 * std::log(1.0 / 3.0)).margin(1e-9));

    ChoiceDataset doubled = dataset;
    doubled.insert(doubled.end(), dataset.begin(), dataset.end());
    CHECK(total_log_likelihood(params, doubled) ==
          Catch::Approx(2.0 * total_log_likelihood(params, dataset)).epsilon(1e-12));

    const auto random = random_params(3, rng);
    CHECK(total_log_likelihood(random, dataset) <= 0.0);
    CHECK_THROWS_AS(total_log_likelihood(params, ChoiceDataset{}), std::invalid_argument);
}

TEST_CASE("analytic gradient matches finite differences") {
    Rng rng(23);
    SECTION("single random instance at tight tolerance") {
        const auto dataset = random_dataset(5, 2, 4, rng);
        const auto params = random_params(4, rng);
        const auto analytic = log_likelihood_gradient(params, dataset);
        const auto numeric = finite_difference_gradient(params, dataset, 0.0);
        CHECK(relative_vector_error(analytic, numeric) < 1e-6);
    }
    SECTION("20 random (theta, dataset) pairs, with and without penalty") {
        for (int trial = 0; trial < 20; ++trial) {
            const int dim = 2 + static_cast<int>(rng.uniform01() * 4);
            const int candidates = 1 + static_cast<int>(rng.uniform01() * 3);
            const auto dataset = random_dataset(5, candidates, dim, rng);
            const auto params = random_params(dim, rng);
            const double penalty = trial % 4 == 0 ? 0.1 : 0.0;
            const auto analytic = log_likelihood_gradient(params, dataset, penalty);
            const auto numeric = finite_difference_gradient(params, dataset, penalty);
            CHECK(relative_vector_error(analytic, numeric) < 1e-6);
        }
    }
}

TEST_CASE("gradient: stationarity and additivity") {
    // Balanced single-candidate dataset at theta = 0: the chosen candidate's
    // features equal the probability-weighted mean, so the gradient vanishes.
    auto chosen = make_observation({{1.5, -0.5}}, 1);
    auto rejected = make_observation({{1.5, -0.5}}, 0);
    const ChoiceDataset balanced = {chosen, rejected};
    const auto params = RewardModelParams::zeros(2);
    for (double g : log_likelihood_gradient(params, balanced)) CHECK(g == Catch::Approx(0.0).margin(1e-12));

    Rng rng(29);
    const auto dataset = random_dataset(10, 2, 3, rng);
    const auto theta = random_params(3, rng);
    ChoiceDataset doubled = dataset;
    doubled.insert(doubled.end(), dataset.begin(), dataset.end());
    const auto g1 = log_likelihood_gradient(theta, dataset);
    const auto g2 = log_likelihood_gradient(theta, doubled);
    for (std::size_t k = 0; k < g1.size(); ++k) CHECK(g2[k] == Catch::Approx(2.0 * g1[k]).margin(1e-10));
}

TEST_CASE("fit: ascent is monotone on a separable single observation") {
    // J = 1, chosen = 1 drives the reward upward forever; the likelihood must
    // still increase monotonically under backtracking.
    auto obs = make_observation({{1.0, 0.0}}, 1);
    const ChoiceDataset dataset = {obs};
    TrainingConfig config;
    config.max_iterations = 50;
    config.step_size = 1.0;

    RewardModelParams params = RewardModelParams::zeros(2);
    double previous = total_log_likelihood(params, dataset);
    for (int iter = 0; iter < 5; ++iter) {
        TrainingConfig partial = config;
        partial.max_iterations = (iter + 1) * 10;
        const auto fit = fit_mle(dataset, partial);
        CHECK(fit.final_log_likelihood >= previous - 1e-12);
        previous = fit.final_log_likelihood;
    }
}

TEST_CASE("fit: deterministic, convergent, recovers a planted model") {
    // Plant a known linear reward, simulate labeller choices through the
    // Gumbel-max rule, and require the fit to recover reward predictions.
    Rng rng(31);
    const RewardModelParams truth{{0.9, -1.3, 0.4}, 0.5};
    ChoiceDataset dataset(4000);
    for (auto& obs : dataset) {
        obs.candidates.resize(2);
        std::vector<double> rewards;
        for (auto& response : obs.candidates) {
            response.features = {rng.normal(), rng.normal(), rng.normal()};
            double score = truth.bias;
            for (std::size_t k = 0; k < truth.weights.size(); ++k)
                score += truth.weights[k] * response.features[k];
            response.true_normalized_reward = score;
            rewards.push_back(score);
        }
        obs.chosen = simulate_labeller_choice(RewardVector(rewards), rng);
    }

    TrainingConfig config;
    config.max_iterations = 3000;
    config.gradient_tolerance = 1e-7;
    const auto fit = fit_mle(dataset, config);
    CHECK(fit.converged);
    CHECK(fit.gradient_norm <= config.gradient_tolerance);
    CHECK_FALSE(fit.diverged);

    for (std::size_t k = 0; k < truth.weights.size(); ++k)
        CHECK(fit.params.weights[k] == Catch::Approx(truth.weights[k]).margin(0.12));
    CHECK(fit.params.bias == Catch::Approx(truth.bias).margin(0.12));

    const auto fit2 = fit_mle(dataset, config);
    CHECK(fit.params.weights == fit2.params.weights);
    CHECK(fit.params.bias == fit2.params.bias);
    CHECK(fit.final_log_likelihood == fit2.final_log_likelihood);
    CHECK(fit.iterations_used == fit2.iterations_used);
}

TEST_CASE("fit: l2 penalty caps a feature-separable dataset at a finite optimum") {
    // Accepted at +f, rejected at -f: the unpenalized MLE pushes the weights
    // to infinity (the bias cancels by symmetry); the penalty caps them.
    const ChoiceDataset dataset = {make_observation({{1.0, 0.5}}, 1), make_observation({{-1.0, -0.5}}, 0)};
    TrainingConfig config;
    config.l2_penalty = 0.1;
    config.max_iterations = 5000;
    const auto fit = fit_mle(dataset, config);
    CHECK(fit.converged);
    for (double w : fit.params.weights) CHECK(std::isfinite(w));
    CHECK(std::abs(fit.params.weights[0]) < 10.0);
    CHECK(std::abs(fit.params.bias) < 1e-4);

    // Without the penalty the same dataset keeps climbing until the
    // iteration cap, likelihood approaching 0 from below.
    TrainingConfig unpenalized;
    unpenalized.max_iterations = 200;
    const auto runaway = fit_mle(dataset, unpenalized);
    CHECK_FALSE(runaway.converged);
    CHECK(runaway.final_log_likelihood > fit.final_log_likelihood);
}

TEST_CASE("fit: non-finite likelihood reported as a failed fit") {
    auto obs = make_observation({{std::numeric_limits<double>::infinity(), 0.0}}, 1);
    const ChoiceDataset dataset = {obs};
    TrainingConfig config;
    config.max_iterations = 10;
    const auto fit = fit_mle(dataset, config);
    CHECK(fit.diverged);
    CHECK_FALSE(fit.converged);
}

TEST_CASE("fit: monotone total likelihood across full runs") {
    Rng rng(37);
    const auto dataset = random_dataset(200, 2, 3, rng);
    TrainingConfig config;
    config.max_iterations = 200;
    const auto fit = fit_mle(dataset, config);
    CHECK(fit.final_log_likelihood >= total_log_likelihood(RewardModelParams::zeros(3), dataset));
}
