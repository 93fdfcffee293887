// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace minibon {

// Normalized candidate rewards R(x, y_1..J). The outside option is not
// stored: its normalized reward is 0 by construction, so a vector of J
// entries describes a choice set of J+1 options.
class RewardVector {
public:
    explicit RewardVector(std::vector<double> values) : values_(std::move(values)) {
        if (values_.empty()) throw std::invalid_argument("RewardVector: needs at least one candidate");
        for (double v : values_)
            if (!std::isfinite(v)) throw std::invalid_argument("RewardVector: non-finite reward");
    }

    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_.at(i); }
    const std::vector<double>& values() const noexcept { return values_; }

private:
    std::vector<double> values_;
};

// Choice probabilities over {outside option, candidates 1..J}; index 0 is
// the outside option.
class ChoiceDistribution {
public:
    explicit ChoiceDistribution(std::vector<double> probabilities)
        : probabilities_(std::move(probabilities)) {
        if (probabilities_.size() < 2)
            throw std::invalid_argument("ChoiceDistribution: needs the outside option plus one candidate");
        double sum = 0.0;
        for (double p : probabilities_) {
            if (!(p >= 0.0 && p <= 1.0 + 1e-12))
                throw std::invalid_argument("ChoiceDistribution: entry outside [0,1]");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw std::invalid_argument("ChoiceDistribution: entries do not sum to 1");
    }

    // Number of entries, J+1.
    std::size_t size() const noexcept { return probabilities_.size(); }
    double operator[](std::size_t i) const { return probabilities_.at(i); }
    double outside() const { return probabilities_[0]; }
    const std::vector<double>& probabilities() const noexcept { return probabilities_; }

private:
    std::vector<double> probabilities_;
};

// Multinomial logit probabilities with the outside option fixed at reward 0:
//   p_i = exp(r_i) / (1 + sum_j exp(r_j)),  p_0 = 1 / (1 + sum_j exp(r_j)).
// Exponentials are max-shifted so rewards up to magnitude ~700 cannot
// overflow. No clamping is applied to the resulting probabilities.
inline ChoiceDistribution choice_probabilities(const RewardVector& rewards) {
    double m = 0.0;  // outside option contributes exp(0)
    for (double r : rewards.values()) m = std::max(m, r);
    double denom = std::exp(-m);
    std::vector<double> shifted(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        shifted[i] = std::exp(rewards[i] - m);
        denom += shifted[i];
    }
    std::vector<double> probs(rewards.size() + 1);
    probs[0] = std::exp(-m) / denom;
    for (std::size_t i = 0; i < rewards.size(); ++i) probs[i + 1] = shifted[i] / denom;
    return ChoiceDistribution(std::move(probs));
}

// Recovers the normalized reward from choice probabilities:
//   R(x, y_i) = log p_i - log p_0,
// the log-odds of choosing candidate i over the outside option. Inverse of
// choice_probabilities.
inline double log_odds_reward(double p_candidate, double p_outside) {
    const auto check = [](double p, const char* name) {
        if (!(p > 0.0 && p < 1.0))
            throw std::invalid_argument(std::string("log_odds_reward: ") + name + " must be in (0,1)");
    };
    check(p_candidate, "candidate probability");
    check(p_outside, "outside probability");
    return std::log(p_candidate) - std::log(p_outside);
}

// P(response acceptable) = sigma(R); the binary collapse of the choice model
// to {candidate, outside option}.
inline double acceptability_probability(double reward) {
    if (!std::isfinite(reward)) throw std::invalid_argument("acceptability_probability: non-finite reward");
    if (reward >= 0.0) return 1.0 / (1.0 + std::exp(-reward));
    const double e = std::exp(reward);
    return e / (1.0 + e);
}

}  // namespace minibon
