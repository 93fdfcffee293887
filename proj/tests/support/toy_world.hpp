// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "minibon/rng.hpp"
#include "minibon/synthetic_world.hpp"

namespace minibon::testing {

// Discrete response world: a handful of response types with fixed true and
// estimated rewards. Small enough to enumerate exactly, which makes it the
// oracle for the Monte Carlo false-acceptance machinery.
struct ToyResponse {
    int type = 0;
};

struct ToyType {
    double true_reward;
    double estimated_reward;
    double probability;
};

struct ToyPolicy {
    std::vector<ToyType> types;

    std::vector<ToyResponse> operator()(const SyntheticPrompt&, std::size_t count, Rng& rng) const {
        std::vector<ToyResponse> responses(count);
        for (auto& response : responses) {
            double u = rng.uniform01();
            int type = static_cast<int>(types.size()) - 1;
            for (std::size_t i = 0; i < types.size(); ++i) {
                if (u < types[i].probability) {
                    type = static_cast<int>(i);
                    break;
                }
                u -= types[i].probability;
            }
            response.type = type;
        }
        return responses;
    }

    double good_probability() const {
        double p = 0.0;
        for (const auto& t : types) p += t.true_reward > 0.0 ? t.probability : 0.0;
        return p;
    }
};

struct ToyScorer {
    std::vector<ToyType> types;
    double operator()(const SyntheticPrompt&, const ToyResponse& r) const {
        return types[static_cast<std::size_t>(r.type)].estimated_reward;
    }
};

struct ToyOracle {
    std::vector<ToyType> types;
    double operator()(const SyntheticPrompt&, const ToyResponse& r) const {
        return types[static_cast<std::size_t>(r.type)].true_reward;
    }
};

// Exhaustive P_FA(N): iterate all |types|^N ordered outcomes, pick the winner
// by highest estimated reward with lowest-index tie-break, accumulate the
// probability of (estimated > 0 and true < 0).
inline double enumerate_false_acceptance(const std::vector<ToyType>& types, int total_samples) {
    const auto count = types.size();
    std::vector<std::size_t> combo(static_cast<std::size_t>(total_samples), 0);
    double p_fa = 0.0;
    while (true) {
        double probability = 1.0;
        std::size_t winner_slot = 0;
        for (std::size_t slot = 0; slot < combo.size(); ++slot) {
            probability *= types[combo[slot]].probability;
            if (types[combo[slot]].estimated_reward > types[combo[winner_slot]].estimated_reward)
                winner_slot = slot;
        }
        const auto& winner = types[combo[winner_slot]];
        if (winner.estimated_reward > 0.0 && winner.true_reward < 0.0) p_fa += probability;

        std::size_t slot = 0;
        while (slot < combo.size() && ++combo[slot] == count) combo[slot++] = 0;
        if (slot == combo.size()) break;
    }
    return p_fa;
}

inline std::vector<ToyType> default_toy_types() {
    return {{1.0, 0.8, 0.3}, {-0.5, 0.5, 0.2}, {-1.0, -0.9, 0.5}};
}

}  // namespace minibon::testing
