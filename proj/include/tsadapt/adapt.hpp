#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tsadapt/gru.hpp"
#include "tsadapt/matrix.hpp"
#include "tsadapt/metrics.hpp"
#include "tsadapt/multitask.hpp"
#include "tsadapt/numerics.hpp"
#include "tsadapt/series.hpp"

namespace tsadapt {

// ---------------------------------------------------------------------------
// Sparse linear models
// ---------------------------------------------------------------------------

enum class LinearLoss { squared, logistic };

/// How a flat feature vector maps back onto raw channels: n channels of c
/// embedding dimensions each, or no channel structure at all.
struct FeatureLayout {
    bool per_channel = false;
    std::size_t n_channels = 0;
    std::size_t per_channel_dims = 0;
    std::vector<std::string> channel_names;

    static FeatureLayout flat() { return {}; }
    static FeatureLayout channels(std::size_t n, std::size_t c,
                                  std::vector<std::string> names = {}) {
        FeatureLayout l;
        l.per_channel = true;
        l.n_channels = n;
        l.per_channel_dims = c;
        l.channel_names = std::move(names);
        return l;
    }
};

struct SparseLinearModel {
    Vec w;
    double intercept = 0.0;
    bool has_intercept = true;
    LinearLoss loss_kind = LinearLoss::squared;
    double penalty = 0.0;
    FeatureLayout layout;

    std::size_t nonzero_count() const {
        std::size_t n = 0;
        for (double v : w) n += (v != 0.0);
        return n;
    }
};

/// Table-3 statistic: fraction of weights with |w| < 0.001.
inline double sparsity_fraction(const Vec& w, double threshold = 0.001) {
    if (w.empty()) return 0.0;
    std::size_t near_zero = 0;
    for (double v : w) near_zero += (std::abs(v) < threshold);
    return static_cast<double>(near_zero) / static_cast<double>(w.size());
}

inline double sparsity_fraction(const SparseLinearModel& m) { return sparsity_fraction(m.w); }

/// Probability of the positive class. Squared-loss scores are clamped to
/// [0,1]; logistic scores pass through the sigmoid.
inline double predict_proba(const SparseLinearModel& model, const Vec& features) {
    if (features.size() != model.w.size())
        throw DataError("predict_proba: feature vector has " + std::to_string(features.size()) +
                        " entries, model expects " + std::to_string(model.w.size()));
    const double score = dot(model.w, features) + model.intercept;
    if (model.loss_kind == LinearLoss::logistic) return sigmoid(score);
    return std::clamp(score, 0.0, 1.0);
}

struct SolverConfig {
    std::size_t max_iterations = 10000;
    double tol = 1e-8;            // objective decrease considered converged
    std::size_t patience = 10;    // consecutive sub-tol decreases required
    bool fit_intercept = true;
};

struct SolverResult {
    SparseLinearModel model;
    double objective = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

namespace detail {

inline void check_classification_input(const Matrix& features, const Vec& labels,
                                        LinearLoss loss) {
    if (features.rows != labels.size())
        throw StructuralError("solver: feature/label row count mismatch");
    if (features.rows < 2) throw DomainError("solver: need at least 2 instances");
    if (!all_finite(features)) throw DataError("solver: non-finite feature value");
    if (loss == LinearLoss::logistic)
        for (double y : labels)
            if (y != 0.0 && y != 1.0)
                throw DataError("logistic solver: labels must be 0/1");
    // squared loss admits any real targets; "single class" means all equal
    bool distinct = false;
    for (double y : labels) distinct |= (y != labels[0]);
    if (!distinct) throw DomainError("solver: labels contain a single class");
}

/// Largest eigenvalue of G^T G (G = features, plus an implied all-ones column
/// when the intercept is fitted), by power iteration. Deterministic.
inline double gram_spectral_norm(const Matrix& x, bool with_intercept) {
    const std::size_t d = x.cols + (with_intercept ? 1 : 0);
    Vec v(d, 1.0 / std::sqrt(static_cast<double>(d)));
    Vec u(x.rows), gv(d);
    double lambda = 0.0;
    for (int iter = 0; iter < 60; ++iter) {
        for (std::size_t i = 0; i < x.rows; ++i) {
            double acc = with_intercept ? v[d - 1] : 0.0;
            const double* r = x.row(i);
            for (std::size_t j = 0; j < x.cols; ++j) acc += r[j] * v[j];
            u[i] = acc;
        }
        gv.assign(d, 0.0);
        for (std::size_t i = 0; i < x.rows; ++i) {
            const double ui = u[i];
            if (ui == 0.0) continue;
            const double* r = x.row(i);
            for (std::size_t j = 0; j < x.cols; ++j) gv[j] += ui * r[j];
            if (with_intercept) gv[d - 1] += ui;
        }
        double norm = 0.0;
        for (double g : gv) norm += g * g;
        norm = std::sqrt(norm);
        if (norm == 0.0) return 0.0;
        lambda = norm;
        for (std::size_t j = 0; j < d; ++j) v[j] = gv[j] / norm;
    }
    return lambda;
}

inline double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

struct ProximalProblem {
    const Matrix& x;
    const Vec& y;
    LinearLoss loss;
    double penalty;
    bool fit_intercept;

    double objective(const Vec& w, double b) const {
        const std::size_t n = x.rows;
        double data = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = b;
            const double* r = x.row(i);
            for (std::size_t j = 0; j < x.cols; ++j) s += r[j] * w[j];
            if (loss == LinearLoss::squared) {
                const double e = y[i] - s;
                data += e * e;
            } else {
                data += bce(y[i], sigmoid(s));
            }
        }
        data /= static_cast<double>(n);
        double l1 = 0.0;
        for (double v : w) l1 += std::abs(v);
        return data + penalty * l1;
    }

    /// Gradient of the smooth part at (w, b).
    void smooth_gradient(const Vec& w, double b, Vec& gw, double& gb) const {
        const std::size_t n = x.rows;
        gw.assign(x.cols, 0.0);
        gb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = b;
            const double* r = x.row(i);
            for (std::size_t j = 0; j < x.cols; ++j) s += r[j] * w[j];
            double resid;
            if (loss == LinearLoss::squared) {
                resid = 2.0 * (s - y[i]); // d/ds of (y-s)^2
            } else {
                resid = sigmoid(s) - y[i];
            }
            for (std::size_t j = 0; j < x.cols; ++j) gw[j] += resid * r[j];
            gb += resid;
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (double& g : gw) g *= inv_n;
        gb *= inv_n;
    }
};

/// Max KKT violation of the smooth gradient against the L1 subgradient
/// condition at (w, b).
inline double kkt_violation_at(const ProximalProblem& prob, const Vec& w, double b) {
    Vec gw;
    double gb = 0.0;
    prob.smooth_gradient(w, b, gw, gb);
    double worst = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (w[j] == 0.0) {
            worst = std::max(worst, std::abs(gw[j]) - prob.penalty);
        } else {
            worst = std::max(worst,
                             std::abs(gw[j] + prob.penalty * (w[j] > 0.0 ? 1.0 : -1.0)));
        }
    }
    if (prob.fit_intercept) worst = std::max(worst, std::abs(gb));
    return worst;
}

/// Proximal-gradient (soft-thresholding) minimization from the zero start,
/// with Nesterov momentum restarted whenever it would break monotonicity.
/// The stated stopping rule (objective decrease < tol for `patience`
/// consecutive iterations) is additionally gated on first-order optimality,
/// since an early plateau can leave the KKT residual orders of magnitude
/// above the solution's.
inline SolverResult proximal_solve(const Matrix& features, const Vec& labels, LinearLoss loss,
                                   double penalty, const SolverConfig& cfg) {
    check_classification_input(features, labels, loss);
    if (penalty < 0.0) throw DomainError("solver: penalty must be >= 0");

    ProximalProblem prob{features, labels, loss, penalty, cfg.fit_intercept};
    const double gram = gram_spectral_norm(features, cfg.fit_intercept);
    const double lipschitz =
        (loss == LinearLoss::squared ? 2.0 : 0.25) * gram / static_cast<double>(features.rows);
    double step = lipschitz > 0.0 ? 1.0 / (1.05 * lipschitz) : 1.0;

    SolverResult result;
    result.model.w.assign(features.cols, 0.0);
    result.model.intercept = 0.0;
    result.model.has_intercept = cfg.fit_intercept;
    result.model.loss_kind = loss;
    result.model.penalty = penalty;

    Vec& w = result.model.w;
    double& b = result.model.intercept;
    double objective = prob.objective(w, b);

    Vec y = w, w_new(w.size()), gw;
    double yb = b, gb = 0.0;
    double momentum = 1.0;

    auto prox_from = [&](const Vec& base_w, double base_b, double& out_b) {
        prob.smooth_gradient(base_w, base_b, gw, gb);
        for (std::size_t j = 0; j < w.size(); ++j)
            w_new[j] = soft_threshold(base_w[j] - step * gw[j], step * penalty);
        out_b = cfg.fit_intercept ? base_b - step * gb : 0.0;
    };

    std::size_t small_decreases = 0;
    const double kkt_gate = cfg.tol > 0.0 ? std::max(cfg.tol, 1e-8) * 10.0 : 1e-7;
    for (std::size_t iter = 0; iter < cfg.max_iterations; ++iter) {
        double b_new = b;
        prox_from(y, yb, b_new);
        double new_objective = prob.objective(w_new, b_new);

        if (new_objective > objective) {
            // Momentum overshot: restart from the current iterate, halving
            // the step until plain descent holds.
            momentum = 1.0;
            while (true) {
                prox_from(w, b, b_new);
                new_objective = prob.objective(w_new, b_new);
                if (new_objective <= objective || step < 1e-18) break;
                step *= 0.5;
            }
        }

        const double next_momentum = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
        const double mix = (momentum - 1.0) / next_momentum;
        y.resize(w.size());
        for (std::size_t j = 0; j < w.size(); ++j) y[j] = w_new[j] + mix * (w_new[j] - w[j]);
        yb = b_new + mix * (b_new - b);
        momentum = next_momentum;

        const double decrease = objective - new_objective;
        w = w_new;
        b = b_new;
        objective = new_objective;
        result.iterations = iter + 1;

        if (decrease < cfg.tol) {
            if (++small_decreases >= cfg.patience && kkt_violation_at(prob, w, b) <= kkt_gate) {
                result.converged = true;
                break;
            }
        } else {
            small_decreases = 0;
        }
    }
    result.objective = objective;
    return result;
}

} // namespace detail

/// LASSO on extracted features: (1/N) sum (y - w.z - b)^2 + alpha * |w|_1,
/// minimized by proximal gradient soft-thresholding. The intercept is
/// unpenalized and can be disabled.
inline SolverResult train_lasso(const Matrix& features, const Vec& labels, double alpha,
                                const SolverConfig& cfg = {}) {
    return detail::proximal_solve(features, labels, LinearLoss::squared, alpha, cfg);
}

/// L1-penalized logistic regression on frozen features: mean negative
/// log-likelihood plus lambda * |w|_1.
inline SolverResult train_l1_logreg(const Matrix& features, const Vec& labels, double lambda,
                                    const SolverConfig& cfg = {}) {
    return detail::proximal_solve(features, labels, LinearLoss::logistic, lambda, cfg);
}

/// Max KKT violation of the returned solution: for w_j = 0 the smooth
/// gradient must satisfy |g_j| <= penalty, else g_j + penalty*sign(w_j) = 0.
inline double kkt_violation(const Matrix& features, const Vec& labels,
                            const SparseLinearModel& model) {
    detail::ProximalProblem prob{features, labels, model.loss_kind, model.penalty,
                                 model.has_intercept};
    return detail::kkt_violation_at(prob, model.w, model.intercept);
}

// ---------------------------------------------------------------------------
// Hyper-parameter grids
// ---------------------------------------------------------------------------

inline std::vector<double> linear_grid(double lo, double hi, std::size_t count) {
    std::vector<double> g;
    for (std::size_t i = 0; i < count; ++i)
        g.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
    return g;
}

inline std::vector<double> log_grid(double lo, double hi, std::size_t count) {
    std::vector<double> g;
    const double llo = std::log(lo), lhi = std::log(hi);
    for (std::size_t i = 0; i < count; ++i)
        g.push_back(std::exp(llo + (lhi - llo) * static_cast<double>(i) /
                                       static_cast<double>(count - 1)));
    return g;
}

struct GridSearchResult {
    SolverResult best;
    double best_value = 0.0; // the selected alpha/lambda
    std::vector<std::pair<double, double>> grid_scores;
};

/// alpha selection for LASSO classifiers by validation AUROC, larger alpha
/// (sparser model) on ties; falls back to validation squared error when the
/// validation AUROC is undefined.
inline GridSearchResult tune_lasso(const Matrix& train_x, const Vec& train_y,
                                   const Matrix& val_x, const Vec& val_y,
                                   const std::vector<double>& alphas,
                                   const SolverConfig& cfg = {}) {
    if (alphas.empty()) throw DomainError("tune_lasso: empty grid");
    GridSearchResult out;
    double best_score = -std::numeric_limits<double>::infinity();
    std::vector<double> sorted = alphas;
    std::sort(sorted.begin(), sorted.end()); // ascending; >= keeps the largest on ties
    for (double alpha : sorted) {
        SolverResult r = train_lasso(train_x, train_y, alpha, cfg);
        Vec scores(val_x.rows);
        std::vector<int> labels(val_x.rows);
        for (std::size_t i = 0; i < val_x.rows; ++i) {
            Vec row(val_x.row(i), val_x.row(i) + val_x.cols);
            scores[i] = predict_proba(r.model, row);
            labels[i] = val_y[i] != 0.0 ? 1 : 0;
        }
        double score;
        if (auto a = auroc(scores, labels)) {
            score = *a;
        } else {
            double mse = 0.0;
            for (std::size_t i = 0; i < scores.size(); ++i)
                mse += (scores[i] - val_y[i]) * (scores[i] - val_y[i]);
            score = -mse / static_cast<double>(scores.size());
        }
        out.grid_scores.emplace_back(alpha, score);
        if (score >= best_score) {
            best_score = score;
            out.best = std::move(r);
            out.best_value = alpha;
        }
    }
    return out;
}

/// lambda selection for the L1 logistic model by validation mean negative
/// log-likelihood; ties prefer the larger lambda (sparser model).
inline GridSearchResult tune_l1_logreg(const Matrix& train_x, const Vec& train_y,
                                       const Matrix& val_x, const Vec& val_y,
                                       const std::vector<double>& lambdas,
                                       const SolverConfig& cfg = {}) {
    if (lambdas.empty()) throw DomainError("tune_l1_logreg: empty grid");
    GridSearchResult out;
    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<double> sorted = lambdas;
    std::sort(sorted.begin(), sorted.end(), std::greater<>()); // descending: sparse first
    for (double lambda : sorted) {
        SolverResult r = train_l1_logreg(train_x, train_y, lambda, cfg);
        double nll = 0.0;
        for (std::size_t i = 0; i < val_x.rows; ++i) {
            Vec row(val_x.row(i), val_x.row(i) + val_x.cols);
            nll += bce(val_y[i], predict_proba(r.model, row));
        }
        nll /= static_cast<double>(val_x.rows);
        out.grid_scores.emplace_back(lambda, nll);
        if (nll < best_loss) {
            best_loss = nll;
            out.best = std::move(r);
            out.best_value = lambda;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Relevance scores
// ---------------------------------------------------------------------------

struct RelevanceReport {
    Vec raw;        // r_j = sum_k |w_jk| per channel
    Vec normalized; // min-max normalized; all 0 when raw values are all equal
    std::vector<std::string> channel_names;
};

inline RelevanceReport relevance(const SparseLinearModel& model) {
    if (!model.layout.per_channel)
        throw DomainError("relevance: model has no per-channel feature layout");
    const std::size_t n = model.layout.n_channels;
    const std::size_t c = model.layout.per_channel_dims;
    if (model.w.size() != n * c)
        throw StructuralError("relevance: layout does not match weight count");

    RelevanceReport rep;
    rep.raw.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < c; ++k) rep.raw[j] += std::abs(model.w[j * c + k]);

    const double r_min = *std::min_element(rep.raw.begin(), rep.raw.end());
    const double r_max = *std::max_element(rep.raw.begin(), rep.raw.end());
    rep.normalized.assign(n, 0.0);
    if (r_max > r_min)
        for (std::size_t j = 0; j < n; ++j)
            rep.normalized[j] = (rep.raw[j] - r_min) / (r_max - r_min);

    if (model.layout.channel_names.size() == n) {
        rep.channel_names = model.layout.channel_names;
    } else {
        for (std::size_t j = 0; j < n; ++j) rep.channel_names.push_back("ch" + std::to_string(j));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Selectively regularized fine-tuning
// ---------------------------------------------------------------------------

enum class RegKind { none, l1, l2 };

/// HealthNet stack with a fresh 2-way softmax head. The penalty applies to
/// the union of feed-forward blocks only, never to recurrent blocks or
/// biases, and never to the head.
struct FinetunedModel {
    GruStackParams stack;
    Matrix head_w; // 2 x h
    Vec head_b;    // 2
    RegKind reg = RegKind::none;
    double lambda = 0.0;
};

/// P(class 1) from the softmax head, eval mode.
inline double predict_proba(const FinetunedModel& model, const MultivariateSeries& x) {
    if (x.num_channels() != model.stack.input_dim())
        throw DataError("predict_proba: instance has " + std::to_string(x.num_channels()) +
                        " channels, model expects " + std::to_string(model.stack.input_dim()));
    Rng rng(0);
    HiddenTrace trace = stack_forward(x.to_input(), model.stack, RunMode::eval, rng);
    Vec logits = model.head_b;
    matvec_add(model.head_w, trace.final_state(model.stack.num_layers() - 1), logits);
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m);
    const double e1 = std::exp(logits[1] - m);
    return e1 / (e0 + e1);
}

/// L1: lambda * sum |w|; L2: lambda * sum w^2 (sum of squares, no root),
/// over feed-forward blocks only.
inline double finetune_penalty_value(const GruStackParams& stack, RegKind reg, double lambda) {
    if (reg == RegKind::none || lambda == 0.0) return 0.0;
    double acc = 0.0;
    for (const auto& layer : stack.layers) {
        for (const Matrix* block : {&layer.w_reset_ff, &layer.w_update_ff, &layer.w_cand_ff}) {
            for (double v : block->data) acc += (reg == RegKind::l1) ? std::abs(v) : v * v;
        }
    }
    return lambda * acc;
}

/// Penalty gradient: lambda*sign(w) (L1) or 2*lambda*w (L2) on feed-forward
/// blocks; recurrent blocks and biases get exactly zero.
inline StackGrads finetune_penalty_grads(const GruStackParams& stack, RegKind reg, double lambda) {
    StackGrads g = StackGrads::zeros_like(stack);
    if (reg == RegKind::none || lambda == 0.0) return g;
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        const GruLayerParams& p = stack.layers[l];
        GruLayerParams& gl = g.layers[l];
        auto apply = [&](const Matrix& w, Matrix& gw) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                if (reg == RegKind::l1) {
                    gw.data[i] = w.data[i] > 0.0 ? lambda : (w.data[i] < 0.0 ? -lambda : 0.0);
                } else {
                    gw.data[i] = 2.0 * lambda * w.data[i];
                }
            }
        };
        apply(p.w_reset_ff, gl.w_reset_ff);
        apply(p.w_update_ff, gl.w_update_ff);
        apply(p.w_cand_ff, gl.w_cand_ff);
    }
    return g;
}

struct FinetuneBatchGrads {
    StackGrads stack;
    Matrix head_w;
    Vec head_b;
    double data_loss = 0.0; // mean cross-entropy over the batch
};

/// Data-loss gradients for one minibatch (softmax cross-entropy, mean over
/// the batch). Dropout masks come from `rng` in train mode.
inline FinetuneBatchGrads finetune_batch_gradients(const FinetunedModel& model,
                                                   const std::vector<LabeledInstance>& batch,
                                                   RunMode mode, Rng& rng) {
    if (batch.empty()) throw DomainError("finetune_batch_gradients: empty batch");
    FinetuneBatchGrads out;
    out.stack = StackGrads::zeros_like(model.stack);
    out.head_w = Matrix(2, model.stack.top_units());
    out.head_b.assign(2, 0.0);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const std::size_t top = model.stack.num_layers() - 1;

    for (const auto& inst : batch) {
        if (inst.y.size() != 1)
            throw DataError("finetune: expected a single binary label per instance");
        HiddenTrace trace = stack_forward(inst.x->to_input(), model.stack, mode, rng);
        const Vec& z = trace.final_state(top);
        Vec logits = model.head_b;
        matvec_add(model.head_w, z, logits);
        const double m = std::max(logits[0], logits[1]);
        const double e0 = std::exp(logits[0] - m);
        const double e1 = std::exp(logits[1] - m);
        const double p1 = e1 / (e0 + e1);
        out.data_loss += bce(inst.y[0], p1);

        Vec d_logits(2);
        d_logits[0] = ((1.0 - p1) - (1.0 - inst.y[0])) * inv_b;
        d_logits[1] = (p1 - inst.y[0]) * inv_b;
        outer_add(out.head_w, d_logits, z);
        out.head_b[0] += d_logits[0];
        out.head_b[1] += d_logits[1];

        Vec dz(z.size(), 0.0);
        matvec_transposed_add(model.head_w, d_logits, dz);
        bptt_accumulate(trace, model.stack,
                        OutputGrads::top_final(model.stack, trace.len(), std::move(dz)),
                        out.stack);
    }
    out.data_loss *= inv_b;
    return out;
}

/// Mean cross-entropy of the fine-tuned model on a labeled set, eval mode.
inline double finetune_data_loss(const FinetunedModel& model,
                                 const std::vector<LabeledInstance>& data) {
    if (data.empty()) throw DomainError("finetune_data_loss: no instances");
    double acc = 0.0;
    for (const auto& inst : data) acc += bce(inst.y[0], predict_proba(model, *inst.x));
    return acc / static_cast<double>(data.size());
}

struct FinetuneResult {
    FinetunedModel model;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::size_t best_epoch = 0;
    std::vector<std::string> warnings;
};

/// Fine-tune a pre-trained stack for a binary target task: copy the stack,
/// attach a fresh softmax head, train everything jointly with the selective
/// penalty added to feed-forward blocks only. Validation data loss picks the
/// epoch, earliest on ties.
inline FinetuneResult finetune(const HealthNetModel& init,
                               const std::vector<LabeledInstance>& train,
                               const std::vector<LabeledInstance>& val, RegKind reg,
                               double lambda, const RnnTrainConfig& cfg, Rng& rng) {
    if (train.empty()) throw DomainError("finetune: empty training set");
    init.validate();
    if (train.front().x->num_channels() != init.stack.input_dim())
        throw DataError("finetune: instance channels do not match the pre-trained stack");

    FinetuneResult result;
    if (reg != RegKind::none && lambda == 0.0)
        result.warnings.push_back("regularizer requested with lambda=0; equivalent to none");

    FinetunedModel& model = result.model;
    model.stack = init.stack;
    model.stack.dropout_rate = cfg.dropout;
    model.head_w = glorot_init(2, init.stack.top_units(), rng);
    model.head_b.assign(2, 0.0);
    model.reg = reg;
    model.lambda = lambda;

    if (cfg.max_epochs == 0) return result;

    ParamRefs params = model.stack.param_spans();
    params.emplace_back(model.head_w.data);
    params.emplace_back(model.head_b);
    AdamState adam = AdamState::for_params(params, cfg.lr);
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.adam_eps;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    FinetunedModel best = model;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0, since_best = 0;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle(order, rng);
        double epoch_loss = 0.0;
        std::size_t n_batches = 0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            std::vector<LabeledInstance> batch;
            batch.reserve(end - start);
            for (std::size_t b = start; b < end; ++b) batch.push_back(train[order[b]]);

            FinetuneBatchGrads g = finetune_batch_gradients(model, batch, RunMode::train, rng);
            if (reg != RegKind::none && lambda != 0.0)
                g.stack.add(finetune_penalty_grads(model.stack, reg, lambda));

            GradRefs grads = g.stack.const_spans();
            grads.emplace_back(g.head_w.data);
            grads.emplace_back(g.head_b);
            adam_step(params, grads, adam);

            epoch_loss += g.data_loss;
            ++n_batches;
        }
        result.train_loss.push_back(epoch_loss / static_cast<double>(n_batches));

        const double vloss =
            val.empty() ? result.train_loss.back() : finetune_data_loss(model, val);
        result.val_loss.push_back(vloss);
        if (vloss < best_loss) {
            best_loss = vloss;
            best = model;
            best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
            if (since_best >= cfg.patience) break;
        }
    }

    result.model = best;
    result.best_epoch = best_epoch;
    return result;
}

} // namespace tsadapt
