#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tsadapt/matrix.hpp"
#include "tsadapt/metrics.hpp"
#include "tsadapt/rng.hpp"
#include "tsadapt/series.hpp"

namespace tsadapt {

/// Multi-task labeled series generator. Each task is a hidden additive
/// template (sinusoid + trend + AR(2) impulse response) on a small channel
/// subset; positives carry the template plus noise, negatives noise only.
/// Source tasks overlap in channels; the held-out target tasks reuse source
/// channels with novel templates partially blended from source patterns so
/// cross-task transfer is learnable.
struct SynthConfig {
    std::size_t n_channels = 8;
    std::size_t n_tasks = 8;
    std::size_t n_source_tasks = 6;
    std::size_t n_train = 600;
    std::size_t n_val = 200;
    std::size_t n_test = 200;
    std::size_t tau = 48;
    double noise_sigma = 0.5;
    double template_norm = 1.45;    // L2 norm of every task template
    double label_prevalence = 0.3;
    double target_prevalence = 0.2; // lower for held-out tasks: the leakage
                                    // rule removes every target-positive
                                    // patient from the pre-training pool
    double second_episode_prob = 0.4;
    double label_persistence = 0.85;
    double source_blend = 0.0;      // target templates: weight of source mixture
    double target_source_corr = 0.0; // optional comorbidity: P(target copies its anchor source)
    std::uint64_t seed = 1;
};

struct TaskTemplate {
    std::string name;
    std::vector<std::size_t> channels;
    Matrix pattern; // n_channels x tau; zero off the task's channel subset
    std::size_t anchor = SIZE_MAX; // targets: the source task they lean on
};

namespace detail {

inline Vec ar2_impulse_response(double rho, double theta, std::size_t tau) {
    Vec h(tau, 0.0);
    const double a1 = 2.0 * rho * std::cos(theta);
    const double a2 = -rho * rho;
    if (tau > 0) h[0] = 1.0;
    if (tau > 1) h[1] = a1;
    for (std::size_t t = 2; t < tau; ++t) h[t] = a1 * h[t - 1] + a2 * h[t - 2];
    double peak = 0.0;
    for (double v : h) peak = std::max(peak, std::abs(v));
    if (peak > 0.0)
        for (double& v : h) v /= peak;
    return h;
}

inline void scale_to_norm(Matrix& m, double target_norm) {
    double ss = 0.0;
    for (double v : m.data) ss += v * v;
    if (ss == 0.0) return;
    const double s = target_norm / std::sqrt(ss);
    for (double& v : m.data) v *= s;
}

inline Matrix raw_task_pattern(std::size_t tau, std::size_t n_channels,
                               const std::vector<std::size_t>& channels, double freq,
                               double trend, double rho, double theta, double phase0) {
    Matrix pattern(n_channels, tau);
    const Vec bump = ar2_impulse_response(rho, theta, tau);
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (std::size_t ci = 0; ci < channels.size(); ++ci) {
        const std::size_t ch = channels[ci];
        const double phase = phase0 + 0.41 * static_cast<double>(ci + 1);
        for (std::size_t t = 0; t < tau; ++t) {
            const double pos = static_cast<double>(t) / static_cast<double>(tau);
            double v = std::sin(two_pi * (freq * pos + phase));
            v += trend * (pos - 0.5);
            v += 0.45 * bump[t];
            pattern(ch, t) = v;
        }
    }
    return pattern;
}

} // namespace detail

/// The hidden templates are a pure function of the config, so the generator,
/// the matched-filter oracle and any test can all recompute them.
inline std::vector<TaskTemplate> synth_task_templates(const SynthConfig& cfg) {
    if (cfg.n_tasks < 2 || cfg.n_channels < 2)
        throw DomainError("synth_task_templates: need at least 2 tasks and 2 channels");
    if (cfg.n_source_tasks == 0 || cfg.n_source_tasks >= cfg.n_tasks)
        throw DomainError("synth_task_templates: source tasks must be in [1, n_tasks)");

    const std::size_t n_target = cfg.n_tasks - cfg.n_source_tasks;
    std::vector<TaskTemplate> templates;

    for (std::size_t k = 0; k < cfg.n_source_tasks; ++k) {
        TaskTemplate t;
        t.name = "src" + std::to_string(k + 1);
        t.channels = {k % cfg.n_channels, (k + 2) % cfg.n_channels};
        const double freq = 0.75 + 0.35 * static_cast<double>(k);
        const double trend = ((k % 2 == 0) ? 1.0 : -1.0) * (0.30 + 0.06 * static_cast<double>(k));
        const double rho = 0.80 + 0.02 * static_cast<double>(k % 4);
        const double theta = 0.35 + 0.15 * static_cast<double>(k % 3);
        t.pattern = detail::raw_task_pattern(cfg.tau, cfg.n_channels, t.channels, freq, trend,
                                             rho, theta, 0.13 * static_cast<double>(k));
        detail::scale_to_norm(t.pattern, cfg.template_norm);
        templates.push_back(std::move(t));
    }

    // Each target reuses the channel pair of an anchor source and blends that
    // source's pattern into its own novel one, so the target signal stays
    // partially visible through source-tuned features.
    for (std::size_t m = 0; m < n_target; ++m) {
        TaskTemplate t;
        t.name = "tgt" + std::to_string(m + 1);
        t.anchor = (2 * m + 1) % cfg.n_source_tasks;
        t.channels = templates[t.anchor].channels;
        // novel frequency placed between the source frequencies
        const double freq = 0.92 + 0.7 * static_cast<double>(m + 1);
        const double trend = (m % 2 == 0) ? -0.45 : 0.45;
        t.pattern = detail::raw_task_pattern(cfg.tau, cfg.n_channels, t.channels, freq, trend,
                                             0.85, 0.6 + 0.2 * static_cast<double>(m),
                                             0.29 * static_cast<double>(m + 1));
        if (cfg.source_blend > 0.0) {
            for (std::size_t i = 0; i < t.pattern.size(); ++i)
                t.pattern.data[i] += cfg.source_blend * templates[t.anchor].pattern.data[i];
        }
        detail::scale_to_norm(t.pattern, cfg.template_norm);
        templates.push_back(std::move(t));
    }
    return templates;
}

struct SynthResult {
    DatasetSplit split;
    std::vector<std::string> warnings;
};

/// Matched-filter statistic <x, template_k>: the analytic oracle for the
/// generator's separability.
inline double matched_filter_score(const MultivariateSeries& s, const TaskTemplate& t) {
    double acc = 0.0;
    for (std::size_t ch : t.channels)
        for (std::size_t tt = 0; tt < std::min(s.length(), t.pattern.cols); ++tt)
            acc += s.values(ch, tt) * t.pattern(ch, tt);
    return acc;
}

inline std::optional<double> matched_filter_auroc(const std::vector<EpisodeRecord>& records,
                                                  const TaskTemplate& t) {
    Vec scores;
    std::vector<int> labels;
    for (const auto& r : records) {
        auto it = r.labels.find(t.name);
        if (it == r.labels.end()) continue;
        scores.push_back(matched_filter_score(r.series, t));
        labels.push_back(it->second);
    }
    if (scores.empty()) return std::nullopt;
    return auroc(scores, labels);
}

inline SynthResult synth_generate(const SynthConfig& cfg) {
    if (cfg.n_tasks < 2) throw DomainError("synth_generate: K must be >= 2");
    if (cfg.n_channels < 2) throw DomainError("synth_generate: need >= 2 channels");
    if (cfg.tau == 0) throw DomainError("synth_generate: tau must be >= 1");
    if (cfg.label_prevalence <= 0.0 || cfg.label_prevalence >= 1.0)
        throw DomainError("synth_generate: label prevalence must be in (0,1)");

    const auto templates = synth_task_templates(cfg);
    SynthResult result;
    for (const auto& t : templates) {
        if (t.name.rfind("src", 0) == 0)
            result.split.source_tasks.push_back(t.name);
        else
            result.split.target_tasks.push_back(t.name);
    }
    result.split.split_seed = cfg.seed;

    std::vector<std::size_t> anchor_source(cfg.n_tasks - cfg.n_source_tasks, 0);
    for (std::size_t m = 0; m < anchor_source.size(); ++m)
        anchor_source[m] = templates[cfg.n_source_tasks + m].anchor;

    Rng base(cfg.seed);
    std::size_t patient_counter = 0;

    auto gen_split = [&](std::vector<EpisodeRecord>& out, std::size_t n_episodes, Rng rng) {
        while (out.size() < n_episodes) {
            ++patient_counter;
            char buf[16];
            std::snprintf(buf, sizeof(buf), "p%06zu", patient_counter);
            const std::string patient_id = buf;

            std::vector<int> condition(cfg.n_tasks);
            auto draw = [&](std::size_t k) {
                const double p =
                    k < cfg.n_source_tasks ? cfg.label_prevalence : cfg.target_prevalence;
                if (k >= cfg.n_source_tasks && rng.bernoulli(cfg.target_source_corr))
                    return condition[anchor_source[k - cfg.n_source_tasks]];
                return rng.bernoulli(p) ? 1 : 0;
            };
            // sources first: target draws may copy their anchor (comorbidity)
            for (std::size_t k = 0; k < cfg.n_tasks; ++k) condition[k] = draw(k);
            const std::size_t n_episodes_patient =
                (out.size() + 1 < n_episodes && rng.bernoulli(cfg.second_episode_prob)) ? 2 : 1;

            for (std::size_t e = 1; e <= n_episodes_patient; ++e) {
                if (e > 1) {
                    // Conditions persist across episodes with high probability.
                    for (std::size_t k = 0; k < cfg.n_tasks; ++k)
                        if (!rng.bernoulli(cfg.label_persistence)) condition[k] = draw(k);
                }
                EpisodeRecord rec;
                rec.patient_id = patient_id;
                rec.episode_index = static_cast<int>(e);
                rec.series.values = Matrix(cfg.n_channels, cfg.tau);
                for (std::size_t ch = 0; ch < cfg.n_channels; ++ch)
                    rec.series.channel_names.push_back("ch" + std::to_string(ch));
                for (double& v : rec.series.values.data) v = cfg.noise_sigma * rng.normal();
                for (std::size_t k = 0; k < cfg.n_tasks; ++k) {
                    if (!condition[k]) continue;
                    for (std::size_t i = 0; i < rec.series.values.size(); ++i)
                        rec.series.values.data[i] += templates[k].pattern.data[i];
                    // (pattern is zero off the task's channels)
                }
                for (std::size_t k = 0; k < cfg.n_tasks; ++k)
                    rec.labels[templates[k].name] = condition[k];
                out.push_back(std::move(rec));
                if (out.size() == n_episodes) break;
            }
        }
    };

    gen_split(result.split.train, cfg.n_train, base.fork(101));
    gen_split(result.split.validation, cfg.n_val, base.fork(102));
    gen_split(result.split.test, cfg.n_test, base.fork(103));
    validate_split(result.split);

    // Calibration check: the analytic matched filter should stay comfortably
    // separable on the test split, else the config is degenerate.
    for (const auto& t : templates) {
        const auto a = matched_filter_auroc(result.split.test, t);
        if (a && *a < 0.6)
            result.warnings.push_back("task " + t.name + ": matched-filter AUROC " +
                                      std::to_string(*a) +
                                      " < 0.6; noise level likely too high");
    }
    return result;
}

/// Univariate multi-domain corpus for unsupervised encoder pre-training:
/// sinusoids, AR(2) processes, square waves and random walks, each z-scored.
inline std::vector<Vec> synth_univariate_corpus(std::size_t count, std::size_t len_min,
                                                std::size_t len_max, std::uint64_t seed) {
    if (count == 0) throw DomainError("synth_univariate_corpus: count must be >= 1");
    if (len_min == 0 || len_max < len_min)
        throw DomainError("synth_univariate_corpus: bad length range");
    Rng rng(seed);
    std::vector<Vec> corpus;
    corpus.reserve(count);
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t len =
            len_min + static_cast<std::size_t>(rng.below(len_max - len_min + 1));
        Vec s(len, 0.0);
        switch (i % 4) {
            case 0: { // sinusoid
                const double freq = rng.uniform(1.0, 6.0);
                const double phase = rng.uniform(0.0, 1.0);
                const double amp = rng.uniform(0.5, 1.5);
                for (std::size_t t = 0; t < len; ++t)
                    s[t] = amp * std::sin(two_pi * (freq * static_cast<double>(t) /
                                                        static_cast<double>(len) +
                                                    phase));
                break;
            }
            case 1: { // stable AR(2)
                const double rho = rng.uniform(0.7, 0.95);
                const double theta = rng.uniform(0.2, 1.2);
                const double a1 = 2.0 * rho * std::cos(theta);
                const double a2 = -rho * rho;
                double prev2 = 0.0, prev1 = 0.0;
                for (std::size_t t = 0; t < len; ++t) {
                    const double v = a1 * prev1 + a2 * prev2 + 0.3 * rng.normal();
                    s[t] = v;
                    prev2 = prev1;
                    prev1 = v;
                }
                break;
            }
            case 2: { // square wave
                const std::size_t period = 4 + static_cast<std::size_t>(rng.below(13));
                const double amp = rng.uniform(0.5, 1.5);
                const std::size_t offset = static_cast<std::size_t>(rng.below(period));
                for (std::size_t t = 0; t < len; ++t)
                    s[t] = ((t + offset) % period < period / 2) ? amp : -amp;
                break;
            }
            default: { // random walk
                double acc = 0.0;
                for (std::size_t t = 0; t < len; ++t) {
                    acc += 0.3 * rng.normal();
                    s[t] = acc;
                }
                break;
            }
        }
        // z-score each series; constant series pass through.
        double mean = 0.0;
        for (double v : s) mean += v;
        mean /= static_cast<double>(len);
        double var = 0.0;
        for (double v : s) var += (v - mean) * (v - mean);
        var /= static_cast<double>(len);
        if (var > 1e-12) {
            const double inv = 1.0 / std::sqrt(var);
            for (double& v : s) v = (v - mean) * inv;
        }
        corpus.push_back(std::move(s));
    }
    return corpus;
}

} // namespace tsadapt
