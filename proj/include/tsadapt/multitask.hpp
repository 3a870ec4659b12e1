#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "tsadapt/gru.hpp"
#include "tsadapt/matrix.hpp"
#include "tsadapt/numerics.hpp"
#include "tsadapt/optim.hpp"
#include "tsadapt/rng.hpp"
#include "tsadapt/series.hpp"

namespace tsadapt {

/// Sigmoid output layer over the top-layer final hidden state, one unit per
/// binary task.
struct MultitaskHead {
    Matrix w; // K x h
    Vec b;    // K

    std::size_t num_tasks() const { return w.rows; }
};

struct HealthNetModel {
    GruStackParams stack;
    MultitaskHead head;
    std::vector<std::string> tasks;
    std::string config_hash;

    void validate() const {
        stack.validate();
        if (head.w.cols != stack.top_units())
            throw StructuralError("HealthNetModel: head width does not match stack top layer");
        if (head.b.size() != head.w.rows || head.w.rows != tasks.size())
            throw StructuralError("HealthNetModel: head/task count mismatch");
    }
};

struct LabeledInstance {
    const MultivariateSeries* x = nullptr;
    std::vector<double> y; // K bits
};

struct RnnTrainConfig {
    std::vector<std::size_t> widths = {32, 32};
    double dropout = 0.3;
    double lr = 1e-4;
    std::size_t batch_size = 128;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
};

/// Loss values clamp the probability at sigma(+-30) so exact 0/1 predictions
/// never produce log(0); gradients use the raw logits.
constexpr double kLogitClamp = 30.0;

inline double bce(double y, double p) {
    const double lo = sigmoid(-kLogitClamp);
    const double q = std::clamp(p, lo, 1.0 - lo);
    return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

namespace detail {

inline void check_labels(const std::vector<LabeledInstance>& data, std::size_t k,
                         const char* what) {
    for (const auto& inst : data) {
        if (!inst.x) throw StructuralError(std::string(what) + ": null series");
        if (inst.y.size() != k)
            throw DataError(std::string(what) + ": label vector has " +
                            std::to_string(inst.y.size()) + " entries, expected " +
                            std::to_string(k));
    }
}

inline std::vector<Matrix> cache_inputs(const std::vector<LabeledInstance>& data) {
    std::vector<Matrix> inputs;
    inputs.reserve(data.size());
    for (const auto& inst : data) inputs.push_back(inst.x->to_input());
    return inputs;
}

} // namespace detail

/// Per-task probabilities for one instance, eval mode.
inline Vec hn_predict(const HealthNetModel& model, const MultivariateSeries& x) {
    if (x.num_channels() != model.stack.input_dim())
        throw DataError("hn_predict: instance has " + std::to_string(x.num_channels()) +
                        " channels, model expects " + std::to_string(model.stack.input_dim()));
    Rng rng(0);
    HiddenTrace trace = stack_forward(x.to_input(), model.stack, RunMode::eval, rng);
    Vec logits = model.head.b;
    matvec_add(model.head.w, trace.final_state(model.stack.num_layers() - 1), logits);
    return sigmoid(logits);
}

/// Mean binary cross-entropy over all (instance, task) pairs.
inline double multitask_loss(const HealthNetModel& model,
                             const std::vector<LabeledInstance>& data) {
    if (data.empty()) throw DomainError("multitask_loss: no instances");
    const std::size_t k = model.head.num_tasks();
    detail::check_labels(data, k, "multitask_loss");
    double total = 0.0;
    for (const auto& inst : data) {
        const Vec p = hn_predict(model, *inst.x);
        for (std::size_t j = 0; j < k; ++j) total += bce(inst.y[j], p[j]);
    }
    return total / (static_cast<double>(data.size()) * static_cast<double>(k));
}

struct MultitaskTrainResult {
    HealthNetModel model;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::size_t best_epoch = 0;
    std::vector<std::string> warnings;
};

/// Supervised pre-training on K binary tasks at once via minibatch Adam.
/// Epoch-end validation loss drives model selection: the epoch with minimum
/// loss wins, earliest on ties, with early stopping after `patience` epochs
/// without improvement.
inline MultitaskTrainResult train_multitask(const std::vector<LabeledInstance>& train,
                                            const std::vector<LabeledInstance>& val,
                                            const std::vector<std::string>& task_names,
                                            const RnnTrainConfig& cfg, Rng& rng) {
    if (train.empty()) throw DomainError("train_multitask: empty training set");
    const std::size_t k = task_names.size();
    if (k == 0) throw DomainError("train_multitask: no tasks");
    detail::check_labels(train, k, "train_multitask(train)");
    detail::check_labels(val, k, "train_multitask(val)");
    if (cfg.batch_size == 0) throw DomainError("train_multitask: batch_size must be >= 1");

    MultitaskTrainResult result;
    for (std::size_t j = 0; j < k; ++j) {
        bool has_pos = false, has_neg = false;
        for (const auto& inst : train) (inst.y[j] != 0.0 ? has_pos : has_neg) = true;
        if (!has_pos || !has_neg)
            result.warnings.push_back("task " + task_names[j] +
                                      " has a single class in the training set");
    }

    const std::size_t n_channels = train.front().x->num_channels();
    HealthNetModel& model = result.model;
    model.stack = GruStackParams::init(n_channels, cfg.widths, cfg.dropout, rng);
    model.head.w = glorot_init(k, cfg.widths.back(), rng);
    model.head.b.assign(k, 0.0);
    model.tasks = task_names;

    if (cfg.max_epochs == 0) return result;

    const std::vector<Matrix> inputs = detail::cache_inputs(train);
    const std::size_t top = model.stack.num_layers() - 1;

    ParamRefs params = model.stack.param_spans();
    params.emplace_back(model.head.w.data);
    params.emplace_back(model.head.b);
    AdamState adam = AdamState::for_params(params, cfg.lr);
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.adam_eps;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    HealthNetModel best = model;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::size_t since_best = 0;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle(order, rng);
        double epoch_bce = 0.0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            const double inv_bk =
                1.0 / (static_cast<double>(end - start) * static_cast<double>(k));

            StackGrads stack_acc = StackGrads::zeros_like(model.stack);
            Matrix head_w_acc(k, cfg.widths.back());
            Vec head_b_acc(k, 0.0);

            for (std::size_t b = start; b < end; ++b) {
                const LabeledInstance& inst = train[order[b]];
                HiddenTrace trace =
                    stack_forward(inputs[order[b]], model.stack, RunMode::train, rng);
                const Vec& z = trace.final_state(top);
                Vec logits = model.head.b;
                matvec_add(model.head.w, z, logits);

                Vec d_logits(k);
                for (std::size_t j = 0; j < k; ++j) {
                    const double p = sigmoid(logits[j]);
                    epoch_bce += bce(inst.y[j], p);
                    d_logits[j] = (p - inst.y[j]) * inv_bk;
                }
                outer_add(head_w_acc, d_logits, z);
                for (std::size_t j = 0; j < k; ++j) head_b_acc[j] += d_logits[j];

                Vec dz(z.size(), 0.0);
                matvec_transposed_add(model.head.w, d_logits, dz);
                bptt_accumulate(trace, model.stack,
                                OutputGrads::top_final(model.stack, trace.len(), std::move(dz)),
                                stack_acc);
            }

            GradRefs grads = stack_acc.const_spans();
            grads.emplace_back(head_w_acc.data);
            grads.emplace_back(head_b_acc);
            adam_step(params, grads, adam);
        }
        result.train_loss.push_back(epoch_bce /
                                    (static_cast<double>(train.size()) * static_cast<double>(k)));

        const double vloss = val.empty() ? result.train_loss.back() : multitask_loss(model, val);
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

/// From-scratch RNN baseline for one binary target task: the multitask
/// machinery with K=1 and a fresh random initialization.
inline MultitaskTrainResult train_rnnc_baseline(const std::vector<LabeledInstance>& train,
                                                const std::vector<LabeledInstance>& val,
                                                const std::string& task_name,
                                                const RnnTrainConfig& cfg, Rng& rng) {
    return train_multitask(train, val, {task_name}, cfg, rng);
}

enum class HnLayers { top_only, all };

/// Frozen-feature extraction: the top layer's final state (length h) or the
/// concatenation of every layer's final state (length h*L), layer 1 first.
inline Vec hn_extract(const MultivariateSeries& x, const HealthNetModel& model, HnLayers layers) {
    if (x.num_channels() != model.stack.input_dim())
        throw DataError("hn_extract: instance has " + std::to_string(x.num_channels()) +
                        " channels, model expects " + std::to_string(model.stack.input_dim()));
    Rng rng(0);
    HiddenTrace trace = stack_forward(x.to_input(), model.stack, RunMode::eval, rng);
    Vec z;
    if (layers == HnLayers::top_only) {
        z = trace.final_state(model.stack.num_layers() - 1);
    } else {
        z.reserve(model.stack.total_units());
        for (std::size_t l = 0; l < model.stack.num_layers(); ++l) {
            const Vec& f = trace.final_state(l);
            z.insert(z.end(), f.begin(), f.end());
        }
    }
    return z;
}

} // namespace tsadapt
