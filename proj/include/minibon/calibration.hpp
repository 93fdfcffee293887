// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "minibon/parallel.hpp"
#include "minibon/rng.hpp"
#include "minibon/synthetic_world.hpp"

namespace minibon {

// Lower-tail binomial probability Pr(Bin(trials, p_min) <= successes),
// summed exactly in log space. The test statistic for hard-prompt
// identification; small p-value => the prompt's true acceptability rate is
// credibly below p_min.
//
// The null is composite (p_g > p_min); evaluating the tail at p_g = p_min is
// the worst case over the null, so rejecting at level alpha here is valid
// for the whole null.
inline double binomial_p_value(int trials, double p_min, int successes) {
    if (trials < 1) throw std::invalid_argument("binomial_p_value: trials must be >= 1");
    if (successes < 0 || successes > trials)
        throw std::invalid_argument("binomial_p_value: successes out of range");
    if (!(p_min > 0.0 && p_min < 1.0)) throw std::invalid_argument("binomial_p_value: p_min must be in (0,1)");
    if (successes == trials) return 1.0;

    const double log_p = std::log(p_min);
    const double log_q = std::log1p(-p_min);
    const double lgamma_n1 = std::lgamma(static_cast<double>(trials) + 1.0);

    // log-sum-exp over the T+1 tail terms.
    double max_term = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(static_cast<std::size_t>(successes) + 1);
    for (int t = 0; t <= successes; ++t) {
        const double log_coeff = lgamma_n1 - std::lgamma(static_cast<double>(t) + 1.0) -
                                 std::lgamma(static_cast<double>(trials - t) + 1.0);
        terms[static_cast<std::size_t>(t)] = log_coeff + t * log_p + (trials - t) * log_q;
        max_term = std::max(max_term, terms[static_cast<std::size_t>(t)]);
    }
    double acc = 0.0;
    for (double term : terms) acc += std::exp(term - max_term);
    return std::min(1.0, std::exp(max_term + std::log(acc)));
}

struct HardPromptReport {
    std::int64_t prompt_id = 0;
    double difficulty = 0.0;
    int success_count = 0;  // T(x): responses with estimated reward > 0
    int trials = 0;         // B
    double p_value = 1.0;
    bool is_hard = false;
};

struct HardPromptScan {
    std::vector<HardPromptReport> reports;
    // All reward scores from B responses of every hard prompt, pooled in
    // pool order; the raw material of the guardrail CDF.
    std::vector<double> hard_scores;

    std::size_t hard_count() const {
        std::size_t n = 0;
        for (const auto& r : reports) n += r.is_hard ? 1 : 0;
        return n;
    }
};

// Binomial screen over a prompt pool: per prompt, draw `responses_per_prompt`
// responses, count estimated-acceptable ones, and flag the prompt as hard
// when Pr(Bin(B, p_min) <= T) < alpha. Per-prompt derived seeds keep the scan
// reproducible under any thread count.
template <typename Policy, typename Scorer>
HardPromptScan identify_hard_prompts(const std::vector<SyntheticPrompt>& pool, const Policy& policy,
                                     const Scorer& scorer, int responses_per_prompt, double p_min,
                                     double alpha, std::uint64_t seed, int threads = 1) {
    if (responses_per_prompt < 1)
        throw std::invalid_argument("identify_hard_prompts: responses_per_prompt must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("identify_hard_prompts: alpha must be in (0,1)");

    HardPromptScan scan;
    scan.reports.resize(pool.size());
    std::vector<std::vector<double>> scores(pool.size());

    parallel_for(pool.size(), threads, [&](std::size_t i) {
        Rng rng(derive_seed(seed, i));
        const auto responses = policy(pool[i], static_cast<std::size_t>(responses_per_prompt), rng);
        auto& prompt_scores = scores[i];
        prompt_scores.reserve(responses.size());
        int successes = 0;
        for (const auto& response : responses) {
            const double score = scorer(pool[i], response);
            prompt_scores.push_back(score);
            if (score > 0.0) ++successes;
        }
        HardPromptReport report;
        report.prompt_id = pool[i].id;
        report.difficulty = pool[i].difficulty;
        report.success_count = successes;
        report.trials = responses_per_prompt;
        report.p_value = binomial_p_value(responses_per_prompt, p_min, successes);
        report.is_hard = report.p_value < alpha;
        scan.reports[i] = report;
    });

    for (std::size_t i = 0; i < pool.size(); ++i)
        if (scan.reports[i].is_hard)
            scan.hard_scores.insert(scan.hard_scores.end(), scores[i].begin(), scores[i].end());
    return scan;
}

// Empirical CDF over a reward-score sample. F(r) = #{s <= r}/n is
// right-continuous; the quantile is the left-continuous generalized inverse
// restricted to sample points (no interpolation, so thresholds are always
// observed reward values).
class EmpiricalCdf {
public:
    explicit EmpiricalCdf(std::vector<double> samples) : sorted_(std::move(samples)) {
        if (sorted_.empty()) throw std::invalid_argument("EmpiricalCdf: empty sample");
        for (double s : sorted_)
            if (!std::isfinite(s)) throw std::invalid_argument("EmpiricalCdf: non-finite sample");
        std::sort(sorted_.begin(), sorted_.end());
    }

    std::size_t size() const noexcept { return sorted_.size(); }
    double min() const noexcept { return sorted_.front(); }
    double max() const noexcept { return sorted_.back(); }
    const std::vector<double>& sorted_samples() const noexcept { return sorted_; }

    double value_at(double r) const {
        const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), r);
        return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
    }

    // inf{ s in samples : F(s) >= q }; q = 0 returns the minimum sample.
    double quantile(double q) const {
        if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("EmpiricalCdf::quantile: q must be in [0,1]");
        const auto n = static_cast<double>(sorted_.size());
        auto rank = static_cast<std::ptrdiff_t>(std::ceil(q * n)) - 1;
        rank = std::clamp<std::ptrdiff_t>(rank, 0, static_cast<std::ptrdiff_t>(sorted_.size()) - 1);
        return sorted_[static_cast<std::size_t>(rank)];
    }

private:
    std::vector<double> sorted_;
};

inline EmpiricalCdf build_empirical_cdf(std::vector<double> scores) { return EmpiricalCdf(std::move(scores)); }

// Guardrail threshold for a total budget of n_samples:
//   tau_N = max{ F^{-1}( F(0)^{1/N} ), 0 }.
// F(0)^N is the chance that the best of N draws from the hard-prompt score
// distribution is unacceptable; tau_N holds that chance at the single-draw
// baseline F(0). The clamp keeps the guardrail from ever accepting a
// response the model itself scores as unacceptable.
inline double threshold_for_n(const EmpiricalCdf& cdf, int n_samples) {
    if (n_samples < 1) throw std::invalid_argument("threshold_for_n: n_samples must be >= 1");
    const double f0 = cdf.value_at(0.0);
    const double target = std::pow(f0, 1.0 / static_cast<double>(n_samples));
    return std::max(cdf.quantile(target), 0.0);
}

// Thresholds {tau_{n*l}} consumed by the mini-N loop. Guardrail mode uses
// calibrated values; accelerator mode uses the all-zero schedule.
struct ThresholdSchedule {
    int mini_batch = 0;        // n
    int loops = 0;             // L
    std::vector<double> taus;  // length L, non-decreasing, all >= 0
    double cdf_f0 = std::numeric_limits<double>::quiet_NaN();
    // True when F(0) = 1: no acceptable hard-prompt sample existed and every
    // tau collapsed to the clamped sample maximum.
    bool degenerate = false;

    bool all_zero() const {
        return std::all_of(taus.begin(), taus.end(), [](double t) { return t == 0.0; });
    }

    void validate() const {
        if (mini_batch < 1 || loops < 1) throw std::invalid_argument("ThresholdSchedule: n and L must be >= 1");
        if (static_cast<int>(taus.size()) != loops)
            throw std::invalid_argument("ThresholdSchedule: tau count must equal loop count");
        for (std::size_t l = 0; l < taus.size(); ++l) {
            if (!(taus[l] >= 0.0)) throw std::invalid_argument("ThresholdSchedule: negative tau");
            if (l > 0 && taus[l] < taus[l - 1])
                throw std::invalid_argument("ThresholdSchedule: taus must be non-decreasing");
        }
    }

    static ThresholdSchedule constant_zero(int mini_batch, int loops) {
        ThresholdSchedule schedule;
        schedule.mini_batch = mini_batch;
        schedule.loops = loops;
        schedule.taus.assign(static_cast<std::size_t>(loops), 0.0);
        schedule.validate();
        return schedule;
    }
};

inline ThresholdSchedule build_schedule(const EmpiricalCdf& cdf, int mini_batch, int loops) {
    if (mini_batch < 1 || loops < 1) throw std::invalid_argument("build_schedule: n and L must be >= 1");
    ThresholdSchedule schedule;
    schedule.mini_batch = mini_batch;
    schedule.loops = loops;
    schedule.cdf_f0 = cdf.value_at(0.0);
    schedule.degenerate = schedule.cdf_f0 >= 1.0;
    schedule.taus.resize(static_cast<std::size_t>(loops));
    for (int l = 1; l <= loops; ++l)
        schedule.taus[static_cast<std::size_t>(l - 1)] = threshold_for_n(cdf, mini_batch * l);
    schedule.validate();
    return schedule;
}

}  // namespace minibon
