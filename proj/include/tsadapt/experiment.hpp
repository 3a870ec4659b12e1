#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tsadapt/adapt.hpp"
#include "tsadapt/autoencoder.hpp"
#include "tsadapt/bundle.hpp"
#include "tsadapt/checkpoint.hpp"
#include "tsadapt/dataio.hpp"
#include "tsadapt/metrics.hpp"
#include "tsadapt/multitask.hpp"

namespace tsadapt {

/// A pre-trained supervised model travels with the channel scaler its
/// training data was standardized by.
struct HnArtifact {
    HealthNetModel model;
    ChannelScaler scaler;
};

inline json hn_artifact_to_json(const HnArtifact& a) {
    return json{{"model", healthnet_to_json(a.model)}, {"scaler", scaler_to_json(a.scaler)}};
}

inline HnArtifact hn_artifact_from_json(const json& j) {
    HnArtifact a;
    a.model = healthnet_from_json(j.at("model"));
    a.scaler = scaler_from_json(j.at("scaler"));
    return a;
}

// ---------------------------------------------------------------------------
// Plan
// ---------------------------------------------------------------------------

inline RnnTrainConfig rnn_config_from_json(const json& j, RnnTrainConfig defaults = {}) {
    RnnTrainConfig cfg = defaults;
    if (j.contains("widths")) cfg.widths = j.at("widths").get<std::vector<std::size_t>>();
    cfg.dropout = j.value("dropout", cfg.dropout);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
    cfg.patience = j.value("patience", cfg.patience);
    return cfg;
}

/// Grid spec: either an explicit list [a, b, ...] or
/// {"min":..,"max":..,"count":..,"spacing":"linear"|"log"}.
inline std::vector<double> grid_from_json(const json& j) {
    if (j.is_array()) return j.get<std::vector<double>>();
    const double lo = j.at("min").get<double>();
    const double hi = j.at("max").get<double>();
    const std::size_t count = j.value("count", 5);
    const std::string spacing = j.value("spacing", "linear");
    if (spacing == "log") return log_grid(lo, hi, count);
    if (spacing == "linear") return linear_grid(lo, hi, count);
    throw ConfigError("grid spacing must be 'linear' or 'log', got '" + spacing + "'");
}

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> methods = {
        "LR",          "RNN-C",           "TimeNet-48", "TimeNet-All", "TimeNet-48-Eps",
        "TimeNet-All-Eps", "HN-Tune",     "HN-L1",      "HN-L2",       "HN-LR-1",
        "HN-LR-2"};
    return methods;
}

struct ExperimentPlan {
    std::string dataset_dir;
    std::string ae_checkpoint;                           // needed by TimeNet-* methods
    std::map<std::string, std::string> hn_checkpoints;   // per-seed, needed by HN-* methods
    std::vector<std::string> methods;
    std::vector<std::string> tasks;
    std::vector<double> fractions = {1.0};
    std::vector<std::uint64_t> seeds = {1};
    std::size_t window = 48;
    std::size_t window_shift = 24;
    RnnTrainConfig rnnc;
    RnnTrainConfig ft;
    double finetune_lambda = 0.01;
    std::vector<double> lasso_alphas = {1e-4};
    std::vector<double> logreg_lambdas = {0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0};
    SolverConfig solver;
    std::size_t threads = 0;
    json raw;
};

inline ExperimentPlan parse_plan(const json& j) {
    ExperimentPlan p;
    p.raw = j;
    p.dataset_dir = j.at("dataset").get<std::string>();
    p.ae_checkpoint = j.value("ae_checkpoint", "");
    if (j.contains("hn_checkpoints"))
        for (auto it = j["hn_checkpoints"].begin(); it != j["hn_checkpoints"].end(); ++it)
            p.hn_checkpoints[it.key()] = it.value().get<std::string>();
    p.methods = j.at("methods").get<std::vector<std::string>>();
    for (const auto& m : p.methods) {
        const auto& known = known_methods();
        if (std::find(known.begin(), known.end(), m) == known.end())
            throw ConfigError("unknown method '" + m + "'");
    }
    p.tasks = j.at("tasks").get<std::vector<std::string>>();
    if (j.contains("fractions")) p.fractions = j.at("fractions").get<std::vector<double>>();
    if (j.contains("seeds")) p.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    p.window = j.value("window", p.window);
    p.window_shift = j.value("window_shift", p.window_shift);
    if (j.contains("rnn")) p.rnnc = rnn_config_from_json(j["rnn"]);
    p.ft = p.rnnc;
    if (j.contains("finetune")) {
        p.ft = rnn_config_from_json(j["finetune"], p.rnnc);
        p.finetune_lambda = j["finetune"].value("lambda", p.finetune_lambda);
    }
    if (j.contains("lasso") && j["lasso"].contains("alpha_grid"))
        p.lasso_alphas = grid_from_json(j["lasso"]["alpha_grid"]);
    else if (j.contains("lasso") && j["lasso"].contains("alpha"))
        p.lasso_alphas = {j["lasso"]["alpha"].get<double>()};
    if (j.contains("logreg") && j["logreg"].contains("lambda_grid"))
        p.logreg_lambdas = grid_from_json(j["logreg"]["lambda_grid"]);
    p.threads = j.value("threads", 0);
    return p;
}

// ---------------------------------------------------------------------------
// Cells
// ---------------------------------------------------------------------------

struct CellKey {
    std::string method;
    std::string task;
    double fraction = 1.0;
    std::uint64_t seed = 1;
};

struct CellResult {
    CellKey key;
    MetricSet metrics;
    std::optional<double> sparsity;
    double wall_ms = 0.0;
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Subsampling is keyed on (task, fraction, seed) only, so every method in a
/// cell row sees the same data subset.
inline std::uint64_t subsample_seed(const CellKey& key) {
    return Rng::mix(fnv1a("subsample|" + key.task + "|" + fmt_double(key.fraction)), key.seed);
}

inline std::uint64_t train_seed(const CellKey& key) {
    return Rng::mix(
        fnv1a("train|" + key.method + "|" + key.task + "|" + fmt_double(key.fraction)), key.seed);
}

/// mean, std, min, max, first, last per channel; the LR baseline's features.
inline Vec statistical_features(const MultivariateSeries& s) {
    Vec out;
    out.reserve(6 * s.num_channels());
    for (std::size_t j = 0; j < s.num_channels(); ++j) {
        double mean = 0.0, sq = 0.0;
        double lo = s.values(j, 0), hi = s.values(j, 0);
        for (std::size_t t = 0; t < s.length(); ++t) {
            const double v = s.values(j, t);
            mean += v;
            sq += v * v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        mean /= static_cast<double>(s.length());
        const double var = std::max(0.0, sq / static_cast<double>(s.length()) - mean * mean);
        out.push_back(mean);
        out.push_back(std::sqrt(var));
        out.push_back(lo);
        out.push_back(hi);
        out.push_back(s.values(j, 0));
        out.push_back(s.values(j, s.length() - 1));
    }
    return out;
}

/// Column z-scoring for feature matrices (used by the statistical-feature
/// baseline, whose columns have wildly different scales).
struct ColumnScaler {
    Vec mean, inv_std;

    static ColumnScaler fit(const Matrix& x) {
        ColumnScaler s;
        s.mean.assign(x.cols, 0.0);
        s.inv_std.assign(x.cols, 1.0);
        for (std::size_t i = 0; i < x.rows; ++i)
            for (std::size_t j = 0; j < x.cols; ++j) s.mean[j] += x(i, j);
        for (double& m : s.mean) m /= static_cast<double>(x.rows);
        Vec var(x.cols, 0.0);
        for (std::size_t i = 0; i < x.rows; ++i)
            for (std::size_t j = 0; j < x.cols; ++j) {
                const double d = x(i, j) - s.mean[j];
                var[j] += d * d;
            }
        for (std::size_t j = 0; j < x.cols; ++j) {
            var[j] /= static_cast<double>(x.rows);
            if (var[j] > 1e-12) s.inv_std[j] = 1.0 / std::sqrt(var[j]);
            else s.mean[j] = 0.0;
        }
        return s;
    }

    void apply(Matrix& x) const {
        for (std::size_t i = 0; i < x.rows; ++i)
            for (std::size_t j = 0; j < x.cols; ++j) x(i, j) = (x(i, j) - mean[j]) * inv_std[j];
    }
};

inline Vec labels_for(const std::vector<EpisodeRecord>& recs, const std::string& task) {
    Vec y;
    y.reserve(recs.size());
    for (const auto& r : recs) {
        auto it = r.labels.find(task);
        if (it == r.labels.end())
            throw DataError("episode " + r.patient_id + ":" + std::to_string(r.episode_index) +
                            " lacks label " + task);
        y.push_back(static_cast<double>(it->second));
    }
    return y;
}

inline std::vector<int> int_labels(const Vec& y) {
    std::vector<int> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] != 0.0 ? 1 : 0;
    return out;
}

inline Matrix rows_to_matrix(const std::vector<Vec>& rows) {
    if (rows.empty()) throw DomainError("rows_to_matrix: no rows");
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols) throw StructuralError("rows_to_matrix: ragged rows");
        for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = rows[i][j];
    }
    return m;
}

} // namespace detail

/// Average of a per-window score over all overlapping windows of a series.
inline double windowed_mean_score(
    const std::function<double(const MultivariateSeries&)>& score_one,
    const MultivariateSeries& s, std::size_t window, std::size_t shift) {
    const auto wins = enumerate_windows(s, window, shift);
    double acc = 0.0;
    for (const auto& w : wins) acc += score_one(w);
    return acc / static_cast<double>(wins.size());
}

/// Everything a cell needs: the bundle and the pre-trained artifacts.
struct MatrixContext {
    ExperimentPlan plan;
    DatasetSplit dataset;
    std::optional<Seq2SeqParams> ae;
    std::map<std::uint64_t, HnArtifact> hn; // keyed by sweep seed
    std::string plan_hash;
};

inline bool method_needs_ae(const std::string& m) { return m.rfind("TimeNet", 0) == 0; }
inline bool method_needs_hn(const std::string& m) { return m.rfind("HN-", 0) == 0; }

inline MatrixContext load_matrix_context(const ExperimentPlan& plan) {
    MatrixContext ctx;
    ctx.plan = plan;
    ctx.plan_hash = config_hash(plan.raw);
    ctx.dataset = load_bundle(plan.dataset_dir);

    bool needs_ae = false, needs_hn = false;
    for (const auto& m : plan.methods) {
        needs_ae |= method_needs_ae(m);
        needs_hn |= method_needs_hn(m);
    }
    if (needs_ae) {
        if (plan.ae_checkpoint.empty())
            throw ConfigError("plan uses TimeNet methods but names no ae_checkpoint");
        const json env = load_checkpoint(plan.ae_checkpoint, "autoencoder");
        ctx.ae = seq2seq_from_json(env.at("payload"));
    }
    if (needs_hn) {
        for (std::uint64_t seed : plan.seeds) {
            const auto it = plan.hn_checkpoints.find(std::to_string(seed));
            if (it == plan.hn_checkpoints.end())
                throw ConfigError("plan uses HN methods but has no hn_checkpoint for seed " +
                                  std::to_string(seed));
            const json env = load_checkpoint(it->second, "healthnet");
            ctx.hn.emplace(seed, hn_artifact_from_json(env.at("payload")));
        }
    }
    return ctx;
}

namespace detail {

struct PreparedCell {
    DatasetSplit sub; // subsampled train/validation, untouched test
    Vec y_train, y_val, y_test;
};

inline PreparedCell prepare_cell(const MatrixContext& ctx, const CellKey& key) {
    PreparedCell p;
    p.sub = subsample_training(ctx.dataset, key.fraction, subsample_seed(key), key.task);
    p.y_train = labels_for(p.sub.train, key.task);
    p.y_val = labels_for(p.sub.validation, key.task);
    p.y_test = labels_for(p.sub.test, key.task);
    return p;
}

/// Owned, scaled, truncated copies for the RNN paths, plus labels.
struct RnnData {
    std::vector<MultivariateSeries> storage;
    std::vector<LabeledInstance> instances;
};

inline RnnData make_rnn_data(const std::vector<EpisodeRecord>& recs, const Vec& y,
                             const ChannelScaler& scaler, std::size_t window) {
    RnnData d;
    d.storage.reserve(recs.size());
    for (const auto& r : recs) d.storage.push_back(scaler.apply(truncate_and_pad(r.series, window)));
    d.instances.reserve(recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i)
        d.instances.push_back({&d.storage[i], {y[i]}});
    return d;
}

inline ChannelScaler fit_scaler_on_windows(const std::vector<EpisodeRecord>& recs,
                                           std::size_t window) {
    std::vector<MultivariateSeries> tmp;
    tmp.reserve(recs.size());
    for (const auto& r : recs) tmp.push_back(truncate_and_pad(r.series, window));
    std::vector<const MultivariateSeries*> ptrs;
    ptrs.reserve(tmp.size());
    for (const auto& s : tmp) ptrs.push_back(&s);
    return ChannelScaler::fit(ptrs);
}

inline void require_unseen_task(const HnArtifact& art, const std::string& task) {
    for (const auto& t : art.model.tasks)
        if (t == task)
            throw DataError("target task '" + task +
                            "' was part of the pre-training task manifest");
}

} // namespace detail

/// One experiment-matrix cell, single-threaded and deterministic given the
/// plan. All methods share the same subsample for a given (task, fraction,
/// seed).
inline CellResult run_cell(const MatrixContext& ctx, const CellKey& key) {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentPlan& plan = ctx.plan;
    detail::PreparedCell cell = detail::prepare_cell(ctx, key);
    const std::string& m = key.method;

    Vec test_scores;
    std::optional<double> sparsity;

    if (m == "LR") {
        std::vector<Vec> tr, va;
        for (const auto& r : cell.sub.train)
            tr.push_back(detail::statistical_features(truncate_and_pad(r.series, plan.window)));
        for (const auto& r : cell.sub.validation)
            va.push_back(detail::statistical_features(truncate_and_pad(r.series, plan.window)));
        Matrix x_train = detail::rows_to_matrix(tr);
        const auto scaler = detail::ColumnScaler::fit(x_train);
        scaler.apply(x_train);
        Matrix x_val = detail::rows_to_matrix(va);
        scaler.apply(x_val);
        auto tuned = tune_l1_logreg(x_train, cell.y_train, x_val, cell.y_val,
                                    plan.logreg_lambdas, plan.solver);
        sparsity = sparsity_fraction(tuned.best.model);
        for (const auto& r : cell.sub.test) {
            Vec f = detail::statistical_features(truncate_and_pad(r.series, plan.window));
            for (std::size_t j = 0; j < f.size(); ++j)
                f[j] = (f[j] - scaler.mean[j]) * scaler.inv_std[j];
            test_scores.push_back(predict_proba(tuned.best.model, f));
        }
    } else if (m == "RNN-C") {
        const ChannelScaler scaler = detail::fit_scaler_on_windows(cell.sub.train, plan.window);
        auto train_data = detail::make_rnn_data(cell.sub.train, cell.y_train, scaler, plan.window);
        auto val_data = detail::make_rnn_data(cell.sub.validation, cell.y_val, scaler, plan.window);
        Rng rng(detail::train_seed(key));
        auto res = train_rnnc_baseline(train_data.instances, val_data.instances, key.task,
                                       plan.rnnc, rng);
        for (const auto& r : cell.sub.test)
            test_scores.push_back(
                hn_predict(res.model, scaler.apply(truncate_and_pad(r.series, plan.window)))[0]);
    } else if (m == "HN-Tune" || m == "HN-L1" || m == "HN-L2") {
        const auto it = ctx.hn.find(key.seed);
        if (it == ctx.hn.end())
            throw ConfigError("missing HealthNet checkpoint for seed " + std::to_string(key.seed));
        const HnArtifact& art = it->second;
        detail::require_unseen_task(art, key.task);
        auto train_data =
            detail::make_rnn_data(cell.sub.train, cell.y_train, art.scaler, plan.window);
        auto val_data =
            detail::make_rnn_data(cell.sub.validation, cell.y_val, art.scaler, plan.window);
        const RegKind reg =
            m == "HN-Tune" ? RegKind::none : (m == "HN-L1" ? RegKind::l1 : RegKind::l2);
        const double lambda = reg == RegKind::none ? 0.0 : plan.finetune_lambda;
        Rng rng(detail::train_seed(key));
        auto res = finetune(art.model, train_data.instances, val_data.instances, reg, lambda,
                            plan.ft, rng);
        for (const auto& r : cell.sub.test)
            test_scores.push_back(
                predict_proba(res.model, art.scaler.apply(truncate_and_pad(r.series, plan.window))));
    } else if (m == "HN-LR-1" || m == "HN-LR-2") {
        const auto it = ctx.hn.find(key.seed);
        if (it == ctx.hn.end())
            throw ConfigError("missing HealthNet checkpoint for seed " + std::to_string(key.seed));
        const HnArtifact& art = it->second;
        detail::require_unseen_task(art, key.task);
        const HnLayers layers = (m == "HN-LR-1") ? HnLayers::top_only : HnLayers::all;
        auto feats = [&](const EpisodeRecord& r) {
            return hn_extract(art.scaler.apply(truncate_and_pad(r.series, plan.window)), art.model,
                              layers);
        };
        std::vector<Vec> tr, va;
        for (const auto& r : cell.sub.train) tr.push_back(feats(r));
        for (const auto& r : cell.sub.validation) va.push_back(feats(r));
        // z-scored features so the fixed lambda grid sees unit-scale columns
        Matrix x_train = detail::rows_to_matrix(tr);
        const auto col_scaler = detail::ColumnScaler::fit(x_train);
        col_scaler.apply(x_train);
        Matrix x_val = detail::rows_to_matrix(va);
        col_scaler.apply(x_val);
        auto tuned = tune_l1_logreg(x_train, cell.y_train, x_val, cell.y_val,
                                    plan.logreg_lambdas, plan.solver);
        sparsity = sparsity_fraction(tuned.best.model);
        for (const auto& r : cell.sub.test) {
            Vec f = feats(r);
            for (std::size_t j = 0; j < f.size(); ++j)
                f[j] = (f[j] - col_scaler.mean[j]) * col_scaler.inv_std[j];
            test_scores.push_back(predict_proba(tuned.best.model, f));
        }
    } else if (m.rfind("TimeNet", 0) == 0) {
        if (!ctx.ae) throw ConfigError("TimeNet method requires an autoencoder checkpoint");
        const GruStackParams& encoder = ctx.ae->encoder;
        const bool windows = m.find("All") != std::string::npos;
        const bool eps = m.find("Eps") != std::string::npos;

        const ChannelScaler scaler = detail::fit_scaler_on_windows(cell.sub.train, plan.window);
        auto feats = [&](const MultivariateSeries& s) {
            return extract_features_multichannel(scaler.apply(truncate_and_pad(s, plan.window)),
                                                 encoder);
        };
        std::vector<Vec> tr, va;
        for (const auto& r : cell.sub.train) tr.push_back(feats(r.series));
        for (const auto& r : cell.sub.validation) va.push_back(feats(r.series));

        auto base = tune_lasso(detail::rows_to_matrix(tr), cell.y_train,
                               detail::rows_to_matrix(va), cell.y_val, plan.lasso_alphas,
                               plan.solver);
        base.best.model.layout =
            FeatureLayout::channels(cell.sub.train.front().series.num_channels(),
                                    encoder.total_units(),
                                    cell.sub.train.front().series.channel_names);

        // Windowed or plain score of one episode under the base model.
        auto base_score = [&](const EpisodeRecord& r) {
            if (!windows) return predict_proba(base.best.model, feats(r.series));
            return windowed_mean_score(
                [&](const MultivariateSeries& w) { return predict_proba(base.best.model, feats(w)); },
                r.series, plan.window, plan.window_shift);
        };

        if (!eps) {
            sparsity = sparsity_fraction(base.best.model);
            for (const auto& r : cell.sub.test) test_scores.push_back(base_score(r));
        } else {
            // Previous-episode feature: ground truth during training, the
            // base model's probability at test time.
            auto augment_with_truth = [&](const std::vector<EpisodeRecord>& recs,
                                          std::vector<Vec>& rows) {
                const auto grouped = group_by_patient(recs);
                std::map<const EpisodeRecord*, double> value;
                for (const auto& [pid, eps_list] : grouped) {
                    Vec v = episode_feature(eps_list, key.task, EpisodeFeatureMode::train,
                                            [](const EpisodeRecord&) { return 0.0; });
                    for (std::size_t i = 0; i < eps_list.size(); ++i) value[eps_list[i]] = v[i];
                }
                for (std::size_t i = 0; i < recs.size(); ++i) rows[i].push_back(value.at(&recs[i]));
            };
            augment_with_truth(cell.sub.train, tr);
            augment_with_truth(cell.sub.validation, va);
            auto aug = tune_lasso(detail::rows_to_matrix(tr), cell.y_train,
                                  detail::rows_to_matrix(va), cell.y_val, plan.lasso_alphas,
                                  plan.solver);
            sparsity = sparsity_fraction(aug.best.model);

            const auto grouped = group_by_patient(cell.sub.test);
            std::map<const EpisodeRecord*, double> eps_value;
            for (const auto& [pid, eps_list] : grouped) {
                Vec v = episode_feature(eps_list, key.task, EpisodeFeatureMode::test,
                                        [&](const EpisodeRecord& prev) { return base_score(prev); });
                for (std::size_t i = 0; i < eps_list.size(); ++i) eps_value[eps_list[i]] = v[i];
            }
            for (const auto& r : cell.sub.test) {
                auto score_one = [&](const MultivariateSeries& s) {
                    Vec f = feats(s);
                    f.push_back(eps_value.at(&r));
                    return predict_proba(aug.best.model, f);
                };
                if (!windows) {
                    test_scores.push_back(score_one(r.series));
                } else {
                    test_scores.push_back(windowed_mean_score(score_one, r.series, plan.window,
                                                              plan.window_shift));
                }
            }
        }
    } else {
        throw ConfigError("unknown method '" + m + "'");
    }

    CellResult result;
    result.key = key;
    result.metrics = compute_metrics(test_scores, detail::int_labels(cell.y_test));
    result.sparsity = sparsity;
    result.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                         .count();
    return result;
}

// ---------------------------------------------------------------------------
// Matrix runner and reports
// ---------------------------------------------------------------------------

struct MatrixRunResult {
    std::vector<CellResult> cells; // stable (method, task, fraction, seed) order
    std::string config_hash;
};

/// Cells run in parallel; each is internally single-threaded and
/// deterministic, and assembly order is fixed by the plan, so results are
/// independent of the worker count.
inline MatrixRunResult run_experiment_matrix(const MatrixContext& ctx) {
    std::vector<CellKey> keys;
    for (const auto& m : ctx.plan.methods)
        for (const auto& t : ctx.plan.tasks)
            for (double f : ctx.plan.fractions)
                for (std::uint64_t s : ctx.plan.seeds) keys.push_back({m, t, f, s});

    MatrixRunResult out;
    out.config_hash = ctx.plan_hash;
    out.cells.resize(keys.size());

    std::size_t n_threads = ctx.plan.threads;
    if (n_threads == 0) n_threads = std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min<std::size_t>(n_threads, keys.size());

    std::atomic<std::size_t> next{0};
    std::vector<std::string> errors(keys.size());
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= keys.size()) return;
            try {
                out.cells[i] = run_cell(ctx, keys[i]);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (std::size_t i = 0; i < keys.size(); ++i)
        if (!errors[i].empty())
            throw ConfigError("cell (" + keys[i].method + ", " + keys[i].task + ", " +
                              fmt_double(keys[i].fraction) + ", seed " +
                              std::to_string(keys[i].seed) + ") failed: " + errors[i]);
    return out;
}

inline json cell_to_json(const CellResult& c) {
    json j{{"method", c.key.method},
           {"task", c.key.task},
           {"fraction", c.key.fraction},
           {"seed", c.key.seed},
           {"n_pos", c.metrics.n_pos},
           {"n_neg", c.metrics.n_neg}};
    j["auroc"] = c.metrics.auroc ? json(*c.metrics.auroc) : json();
    j["auprc"] = c.metrics.auprc ? json(*c.metrics.auprc) : json();
    j["min_se_pp"] = c.metrics.min_se_pp ? json(*c.metrics.min_se_pp) : json();
    j["sparsity"] = c.sparsity ? json(*c.sparsity) : json();
    return j;
}

/// report.json and curves.csv are deterministic; wall-clock goes to the
/// timings.csv sidecar only.
inline void write_matrix_report(const MatrixRunResult& result, const std::filesystem::path& dir) {
    json cells = json::array();
    for (const auto& c : result.cells) cells.push_back(cell_to_json(c));
    json report{{"format", "tsadapt-report-1"},
                {"config_hash", result.config_hash},
                {"cells", std::move(cells)}};
    write_text_file(dir / "report.json", report.dump());

    std::string curves = "# config_hash=" + result.config_hash + "\n";
    curves += "method,task,fraction,seed,auroc\n";
    for (const auto& c : result.cells) {
        curves += c.key.method + "," + c.key.task + "," + fmt_double(c.key.fraction) + "," +
                  std::to_string(c.key.seed) + "," +
                  (c.metrics.auroc ? fmt_double(*c.metrics.auroc) : "") + "\n";
    }
    write_text_file(dir / "curves.csv", curves);

    std::string timings = "# non-deterministic sidecar; excluded from artifact comparison\n";
    timings += "method,task,fraction,seed,wall_ms\n";
    for (const auto& c : result.cells)
        timings += c.key.method + "," + c.key.task + "," + fmt_double(c.key.fraction) + "," +
                   std::to_string(c.key.seed) + "," + fmt_double(c.wall_ms) + "\n";
    write_text_file(dir / "timings.csv", timings);
}

/// Aggregate report rows into per-(method, task, fraction) mean/std summary.
inline std::string summarize_report(const json& report) {
    struct Agg {
        std::vector<double> auroc, auprc, min_se_pp, sparsity;
    };
    std::map<std::string, Agg> groups;
    std::vector<std::string> order;
    for (const auto& c : report.at("cells")) {
        const std::string group = c.at("method").get<std::string>() + "," +
                                  c.at("task").get<std::string>() + "," +
                                  fmt_double(c.at("fraction").get<double>());
        if (!groups.count(group)) order.push_back(group);
        Agg& a = groups[group];
        if (!c.at("auroc").is_null()) a.auroc.push_back(c.at("auroc").get<double>());
        if (!c.at("auprc").is_null()) a.auprc.push_back(c.at("auprc").get<double>());
        if (!c.at("min_se_pp").is_null()) a.min_se_pp.push_back(c.at("min_se_pp").get<double>());
        if (!c.at("sparsity").is_null()) a.sparsity.push_back(c.at("sparsity").get<double>());
    }
    auto mean_std = [](const std::vector<double>& v) -> std::pair<double, double> {
        if (v.empty()) return {0.0, 0.0};
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - m) * (x - m);
        var /= static_cast<double>(v.size());
        return {m, std::sqrt(var)};
    };
    std::string out =
        "method,task,fraction,n_seeds,auroc_mean,auroc_std,auprc_mean,auprc_std,"
        "min_se_pp_mean,min_se_pp_std,sparsity_mean\n";
    for (const auto& group : order) {
        const Agg& a = groups.at(group);
        const auto [am, as] = mean_std(a.auroc);
        const auto [pm, ps] = mean_std(a.auprc);
        const auto [mm, ms] = mean_std(a.min_se_pp);
        const double sm = mean_std(a.sparsity).first;
        out += group + "," + std::to_string(a.auroc.size()) + "," + fmt_double(am) + "," +
               fmt_double(as) + "," + fmt_double(pm) + "," + fmt_double(ps) + "," +
               fmt_double(mm) + "," + fmt_double(ms) + "," +
               (a.sparsity.empty() ? "" : fmt_double(sm)) + "\n";
    }
    return out;
}

} // namespace tsadapt
