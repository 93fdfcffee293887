// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "minibon/estimator.hpp"
#include "minibon/rng.hpp"
#include "minibon/synthetic_world.hpp"

namespace minibon {

// One row of the binary acceptability view of a choice dataset. Instances
// reference their observation/candidate rather than copying features.
struct BinaryInstance {
    std::size_t observation_index = 0;
    std::size_t candidate_index = 0;  // within the observation's candidates
    int label = 0;                    // 1 = acceptable
    double model_score = 0.0;
};

struct ConfusionMetrics {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    // Ratios are absent when their denominator is zero; degenerate
    // experiments surface as explicit undefined markers, never silent NaN.
    std::optional<double> precision, recall, fpr;

    static ConfusionMetrics from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t tn,
                                        std::uint64_t fn) {
        ConfusionMetrics m;
        m.tp = tp;
        m.fp = fp;
        m.tn = tn;
        m.fn = fn;
        if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        if (fp + tn > 0) m.fpr = static_cast<double>(fp) / static_cast<double>(fp + tn);
        return m;
    }
};

// Observed choice proportions Q(0..J).
struct ChoiceProportions {
    std::vector<double> q;
};

// Choice -> binary transform: a chosen candidate yields one positive
// instance; choosing the outside option yields one negative instance per
// candidate (the labeller rejected each of them).
inline std::vector<BinaryInstance> binarize(const ChoiceDataset& dataset) {
    std::vector<BinaryInstance> instances;
    instances.reserve(dataset.size());
    for (std::size_t k = 0; k < dataset.size(); ++k) {
        const auto& obs = dataset[k];
        if (obs.chosen > 0) {
            instances.push_back({k, static_cast<std::size_t>(obs.chosen - 1), 1, 0.0});
        } else {
            for (std::size_t j = 0; j < obs.candidates.size(); ++j) instances.push_back({k, j, 0, 0.0});
        }
    }
    return instances;
}

inline std::vector<BinaryInstance> binarize(const ChoiceDataset& dataset, const RewardModelParams& params) {
    auto instances = binarize(dataset);
    for (auto& inst : instances) {
        const auto& obs = dataset[inst.observation_index];
        inst.model_score = predict_reward(params, obs.prompt, obs.candidates[inst.candidate_index]);
    }
    return instances;
}

// Counts with the strict decision rule: predicted acceptable iff
// model_score > threshold; a score exactly at the threshold is negative.
inline ConfusionMetrics confusion_metrics(const std::vector<BinaryInstance>& instances, double threshold) {
    if (instances.empty()) throw std::invalid_argument("confusion_metrics: empty instance list");
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (const auto& inst : instances) {
        const bool predicted = inst.model_score > threshold;
        if (predicted)
            (inst.label == 1 ? tp : fp) += 1;
        else
            (inst.label == 1 ? fn : tn) += 1;
    }
    return ConfusionMetrics::from_counts(tp, fp, tn, fn);
}

inline ChoiceProportions choice_proportions(const ChoiceDataset& dataset) {
    if (dataset.empty()) throw std::invalid_argument("choice_proportions: empty dataset");
    const std::size_t num_candidates = dataset.front().candidates.size();
    for (const auto& obs : dataset)
        if (obs.candidates.size() != num_candidates)
            throw std::invalid_argument(
                "choice_proportions: mixed candidate counts; use choice_proportions_by_group");
    ChoiceProportions proportions;
    proportions.q.assign(num_candidates + 1, 0.0);
    for (const auto& obs : dataset) proportions.q[static_cast<std::size_t>(obs.chosen)] += 1.0;
    for (double& v : proportions.q) v /= static_cast<double>(dataset.size());
    return proportions;
}

// Per-J proportions for datasets with varying candidate counts.
inline std::map<std::size_t, ChoiceProportions> choice_proportions_by_group(const ChoiceDataset& dataset) {
    std::map<std::size_t, ChoiceDataset> groups;
    for (const auto& obs : dataset) groups[obs.candidates.size()].push_back(obs);
    std::map<std::size_t, ChoiceProportions> out;
    for (auto& [num_candidates, group] : groups) out[num_candidates] = choice_proportions(group);
    return out;
}

// Additive reward distortion induced by estimating the model on data whose
// choice-class proportions were resampled from Q to H:
//   bias(i) = log(H(i)/Q(i)) - log(H(0)/Q(0)).
inline double manski_bias(const ChoiceProportions& h, const ChoiceProportions& q, std::size_t i) {
    if (h.q.size() != q.q.size()) throw std::invalid_argument("manski_bias: proportion length mismatch");
    if (i >= h.q.size()) throw std::invalid_argument("manski_bias: class index out of range");
    for (double v : {h.q[i], q.q[i], h.q[0], q.q[0]})
        if (!(v > 0.0)) throw std::invalid_argument("manski_bias: zero or negative proportion");
    return std::log(h.q[i] / q.q[i]) - std::log(h.q[0] / q.q[0]);
}

struct ResamplingBiasReport {
    ChoiceProportions empirical_q;       // original dataset
    ChoiceProportions realized_h;        // achieved by the resample
    std::vector<std::uint64_t> resampled_class_counts;
    std::vector<double> predicted_bias;  // closed form, per class 1..J
    double measured_mean_shift = 0.0;    // mean over held-out responses of R'-R
    std::vector<double> measured_shift_per_slot;  // per candidate slot 1..J
    FitResult fit_original;
    FitResult fit_resampled;
};

// Refit experiment behind the closed-form bias: resample the dataset by
// chosen class to target proportions (without replacement; the total is
// scaled down so no class needs upsampling), refit, and measure the shift of
// the fitted reward on held-out responses.
inline ResamplingBiasReport resampling_bias_experiment(const ChoiceDataset& train,
                                                       const ChoiceDataset& heldout,
                                                       const ChoiceProportions& target_h,
                                                       const TrainingConfig& config, std::uint64_t seed) {
    if (train.empty() || heldout.empty())
        throw std::invalid_argument("resampling_bias_experiment: empty dataset");
    const std::size_t num_classes = target_h.q.size();

    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t k = 0; k < train.size(); ++k) {
        const auto cls = static_cast<std::size_t>(train[k].chosen);
        if (cls >= num_classes) throw std::invalid_argument("resampling_bias_experiment: chosen class exceeds target_h");
        by_class[cls].push_back(k);
    }

    // Largest total that honours the target proportions without upsampling.
    double scale = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (!(target_h.q[c] > 0.0))
            throw std::invalid_argument("resampling_bias_experiment: target class proportion must be > 0");
        if (by_class[c].empty()) throw std::invalid_argument("resampling_bias_experiment: empty resampled class");
        scale = std::min(scale, static_cast<double>(by_class[c].size()) / target_h.q[c]);
    }

    ResamplingBiasReport report;
    report.empirical_q = choice_proportions(train);
    report.resampled_class_counts.resize(num_classes);

    Rng rng(seed);
    ChoiceDataset resampled;
    std::uint64_t total = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto& pool = by_class[c];
        auto take = static_cast<std::size_t>(target_h.q[c] * scale + 1e-9);
        take = std::min(take, pool.size());
        // Partial Fisher-Yates draw without replacement.
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.uniform01() * static_cast<double>(pool.size() - i));
            std::swap(pool[i], pool[std::min(j, pool.size() - 1)]);
            resampled.push_back(train[pool[i]]);
        }
        report.resampled_class_counts[c] = take;
        total += take;
    }
    report.realized_h.q.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c)
        report.realized_h.q[c] = static_cast<double>(report.resampled_class_counts[c]) / static_cast<double>(total);

    report.predicted_bias.resize(num_classes - 1);
    for (std::size_t i = 1; i < num_classes; ++i)
        report.predicted_bias[i - 1] = manski_bias(report.realized_h, report.empirical_q, i);

    report.fit_original = fit_mle(train, config);
    report.fit_resampled = fit_mle(resampled, config);

    KahanSum overall;
    std::size_t response_count = 0;
    std::vector<KahanSum> per_slot;
    std::vector<std::size_t> slot_counts;
    for (const auto& obs : heldout) {
        if (per_slot.size() < obs.candidates.size()) {
            per_slot.resize(obs.candidates.size());
            slot_counts.resize(obs.candidates.size(), 0);
        }
        for (std::size_t j = 0; j < obs.candidates.size(); ++j) {
            const double shift = predict_reward(report.fit_resampled.params, obs.prompt, obs.candidates[j]) -
                                 predict_reward(report.fit_original.params, obs.prompt, obs.candidates[j]);
            overall.add(shift);
            per_slot[j].add(shift);
            slot_counts[j] += 1;
            ++response_count;
        }
    }
    report.measured_mean_shift = overall.value() / static_cast<double>(response_count);
    report.measured_shift_per_slot.resize(per_slot.size());
    for (std::size_t j = 0; j < per_slot.size(); ++j)
        report.measured_shift_per_slot[j] = per_slot[j].value() / static_cast<double>(slot_counts[j]);
    return report;
}

}  // namespace minibon
