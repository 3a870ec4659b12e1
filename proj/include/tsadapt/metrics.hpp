#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "tsadapt/errors.hpp"
#include "tsadapt/matrix.hpp"

namespace tsadapt {

/// Classification metrics for one task; a metric is absent when undefined
/// (a class is missing from the labels).
struct MetricSet {
    std::optional<double> auroc;
    std::optional<double> auprc;
    std::optional<double> min_se_pp;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

namespace detail {

inline void check_metric_input(const Vec& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw StructuralError("metrics: scores/labels length mismatch");
    if (scores.empty()) throw DomainError("metrics: empty input");
}

} // namespace detail

/// Mann-Whitney AUROC: the probability that a random positive outranks a
/// random negative, ties counted 1/2. Computed via average ranks; all
/// intermediate quantities are exact multiples of 1/2, so the result is
/// bit-identical to direct pair counting.
inline std::optional<double> auroc(const Vec& scores, const std::vector<int>& labels) {
    detail::check_metric_input(scores, labels);
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += (y != 0);
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        // 1-based average rank of the tie group [i, j)
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos -
                     0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace detail {

/// Confusion counts at every distinct threshold, descending. Predicting
/// positive iff score >= threshold.
struct ThresholdSweep {
    std::vector<double> thresholds;
    std::vector<std::size_t> tp;
    std::vector<std::size_t> fp;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

inline ThresholdSweep sweep_thresholds(const Vec& scores, const std::vector<int>& labels) {
    check_metric_input(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    ThresholdSweep sw;
    for (int y : labels) (y != 0 ? sw.n_pos : sw.n_neg)++;
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] != 0 ? tp : fp)++;
            ++j;
        }
        sw.thresholds.push_back(scores[order[i]]);
        sw.tp.push_back(tp);
        sw.fp.push_back(fp);
        i = j;
    }
    return sw;
}

} // namespace detail

/// Area under the precision-recall curve by step-wise interpolation over the
/// distinct score thresholds in descending order.
inline std::optional<double> auprc(const Vec& scores, const std::vector<int>& labels) {
    const auto sw = detail::sweep_thresholds(scores, labels);
    if (sw.n_pos == 0) return std::nullopt;
    double area = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < sw.thresholds.size(); ++i) {
        const double recall = static_cast<double>(sw.tp[i]) / static_cast<double>(sw.n_pos);
        const double precision =
            static_cast<double>(sw.tp[i]) / static_cast<double>(sw.tp[i] + sw.fp[i]);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

/// max over thresholds of min(sensitivity, positive predictive value).
inline std::optional<double> min_se_pp(const Vec& scores, const std::vector<int>& labels) {
    const auto sw = detail::sweep_thresholds(scores, labels);
    if (sw.n_pos == 0) return std::nullopt;
    double best = 0.0;
    for (std::size_t i = 0; i < sw.thresholds.size(); ++i) {
        const double se = static_cast<double>(sw.tp[i]) / static_cast<double>(sw.n_pos);
        const double ppv =
            static_cast<double>(sw.tp[i]) / static_cast<double>(sw.tp[i] + sw.fp[i]);
        best = std::max(best, std::min(se, ppv));
    }
    return best;
}

inline MetricSet compute_metrics(const Vec& scores, const std::vector<int>& labels) {
    MetricSet m;
    for (int y : labels) (y != 0 ? m.n_pos : m.n_neg)++;
    m.auroc = auroc(scores, labels);
    m.auprc = auprc(scores, labels);
    m.min_se_pp = min_se_pp(scores, labels);
    return m;
}

enum class AurocAverage { micro, macro, weighted };

/// micro: AUROC over the pooled (instance, task) pairs; macro: unweighted mean
/// of per-task AUROCs; weighted: positive-count-weighted mean of per-task
/// AUROCs. Undefined tasks are skipped by macro/weighted.
inline std::optional<double> aggregate_auroc(
    const std::vector<std::pair<Vec, std::vector<int>>>& tasks, AurocAverage mode) {
    if (tasks.empty()) throw DomainError("aggregate_auroc: no tasks");
    if (mode == AurocAverage::micro) {
        Vec pooled_scores;
        std::vector<int> pooled_labels;
        for (const auto& [s, y] : tasks) {
            pooled_scores.insert(pooled_scores.end(), s.begin(), s.end());
            pooled_labels.insert(pooled_labels.end(), y.begin(), y.end());
        }
        return auroc(pooled_scores, pooled_labels);
    }
    double weighted_sum = 0.0;
    double weight_total = 0.0;
    std::size_t defined = 0;
    for (const auto& [s, y] : tasks) {
        const auto a = auroc(s, y);
        if (!a) continue;
        ++defined;
        double w = 1.0;
        if (mode == AurocAverage::weighted) {
            std::size_t n_pos = 0;
            for (int v : y) n_pos += (v != 0);
            w = static_cast<double>(n_pos);
        }
        weighted_sum += w * *a;
        weight_total += w;
    }
    if (defined == 0 || weight_total == 0.0) return std::nullopt;
    return weighted_sum / weight_total;
}

} // namespace tsadapt
