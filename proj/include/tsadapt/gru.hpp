#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tsadapt/matrix.hpp"
#include "tsadapt/numerics.hpp"
#include "tsadapt/optim.hpp"
#include "tsadapt/rng.hpp"

namespace tsadapt {

/// Weights of one GRU layer. Feed-forward blocks (multiplying the masked
/// lower-layer input) and recurrent blocks (multiplying the previous hidden
/// state) are stored separately: fine-tuning penalizes only the former.
struct GruLayerParams {
    Matrix w_reset_ff, w_update_ff, w_cand_ff;    // units x input_dim
    Matrix w_reset_rec, w_update_rec, w_cand_rec; // units x units
    Vec b_reset, b_update, b_cand;                // units

    std::size_t units() const { return w_reset_rec.rows; }
    std::size_t input_dim() const { return w_reset_ff.cols; }

    static GruLayerParams zeros(std::size_t input_dim, std::size_t units) {
        GruLayerParams p;
        p.w_reset_ff = Matrix(units, input_dim);
        p.w_update_ff = Matrix(units, input_dim);
        p.w_cand_ff = Matrix(units, input_dim);
        p.w_reset_rec = Matrix(units, units);
        p.w_update_rec = Matrix(units, units);
        p.w_cand_rec = Matrix(units, units);
        p.b_reset.assign(units, 0.0);
        p.b_update.assign(units, 0.0);
        p.b_cand.assign(units, 0.0);
        return p;
    }

    static GruLayerParams init(std::size_t input_dim, std::size_t units, Rng& rng) {
        GruLayerParams p = zeros(input_dim, units);
        p.w_reset_ff = glorot_init(units, input_dim, rng);
        p.w_update_ff = glorot_init(units, input_dim, rng);
        p.w_cand_ff = glorot_init(units, input_dim, rng);
        p.w_reset_rec = glorot_init(units, units, rng);
        p.w_update_rec = glorot_init(units, units, rng);
        p.w_cand_rec = glorot_init(units, units, rng);
        return p;
    }

    void validate() const {
        const std::size_t h = units();
        const std::size_t d = input_dim();
        require_shape(w_update_ff, h, d, "w_update_ff");
        require_shape(w_cand_ff, h, d, "w_cand_ff");
        require_shape(w_reset_rec, h, h, "w_reset_rec");
        require_shape(w_update_rec, h, h, "w_update_rec");
        require_shape(w_cand_rec, h, h, "w_cand_rec");
        if (b_reset.size() != h || b_update.size() != h || b_cand.size() != h)
            throw StructuralError("GruLayerParams: bias length mismatch");
    }
};

/// A stack of GRU layers plus the dropout rate applied to layer inputs.
struct GruStackParams {
    std::vector<GruLayerParams> layers;
    double dropout_rate = 0.0;

    std::size_t num_layers() const { return layers.size(); }
    std::size_t input_dim() const { return layers.front().input_dim(); }
    std::size_t top_units() const { return layers.back().units(); }

    /// Sum of all layer widths; the concatenated-final-state embedding length.
    std::size_t total_units() const {
        std::size_t c = 0;
        for (const auto& l : layers) c += l.units();
        return c;
    }

    void validate() const {
        if (layers.empty()) throw StructuralError("GruStackParams: no layers");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw StructuralError("GruStackParams: dropout_rate must be in [0,1)");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            layers[l].validate();
            if (l > 0 && layers[l].input_dim() != layers[l - 1].units())
                throw StructuralError("GruStackParams: layer " + std::to_string(l) +
                                      " input dim does not match layer below");
        }
    }

    static GruStackParams init(std::size_t input_dim, const std::vector<std::size_t>& widths,
                               double dropout_rate, Rng& rng) {
        GruStackParams s;
        s.dropout_rate = dropout_rate;
        std::size_t d = input_dim;
        for (std::size_t w : widths) {
            s.layers.push_back(GruLayerParams::init(d, w, rng));
            d = w;
        }
        return s;
    }

    static GruStackParams zeros_like(const GruStackParams& shape) {
        GruStackParams s;
        s.dropout_rate = shape.dropout_rate;
        for (const auto& l : shape.layers)
            s.layers.push_back(GruLayerParams::zeros(l.input_dim(), l.units()));
        return s;
    }

    /// Buffer order: per layer, ff blocks (reset, update, cand), then rec
    /// blocks (reset, update, cand), then biases (reset, update, cand).
    /// Serialization, flatten() and the optimizer all rely on this order.
    ParamRefs param_spans() {
        ParamRefs refs;
        for (auto& l : layers) {
            refs.emplace_back(l.w_reset_ff.data);
            refs.emplace_back(l.w_update_ff.data);
            refs.emplace_back(l.w_cand_ff.data);
            refs.emplace_back(l.w_reset_rec.data);
            refs.emplace_back(l.w_update_rec.data);
            refs.emplace_back(l.w_cand_rec.data);
            refs.emplace_back(l.b_reset);
            refs.emplace_back(l.b_update);
            refs.emplace_back(l.b_cand);
        }
        return refs;
    }

    GradRefs const_spans() const {
        GradRefs refs;
        for (const auto& l : layers) {
            refs.emplace_back(l.w_reset_ff.data);
            refs.emplace_back(l.w_update_ff.data);
            refs.emplace_back(l.w_cand_ff.data);
            refs.emplace_back(l.w_reset_rec.data);
            refs.emplace_back(l.w_update_rec.data);
            refs.emplace_back(l.w_cand_rec.data);
            refs.emplace_back(l.b_reset);
            refs.emplace_back(l.b_update);
            refs.emplace_back(l.b_cand);
        }
        return refs;
    }
};

inline Vec flatten(const GruStackParams& s) {
    Vec out;
    for (const auto& span : s.const_spans()) out.insert(out.end(), span.begin(), span.end());
    return out;
}

inline GruStackParams unflatten_like(const GruStackParams& shape, const Vec& flat) {
    GruStackParams s = GruStackParams::zeros_like(shape);
    std::size_t off = 0;
    for (auto& span : s.param_spans()) {
        if (off + span.size() > flat.size())
            throw StructuralError("unflatten_like: flat buffer too short");
        for (std::size_t i = 0; i < span.size(); ++i) span[i] = flat[off + i];
        off += span.size();
    }
    if (off != flat.size()) throw StructuralError("unflatten_like: flat buffer too long");
    return s;
}

struct GruGates {
    Vec reset, update, cand;
};

enum class RunMode { train, eval };

/// Forward activations and everything the backward pass needs: per-layer
/// per-step hidden states, gate values, the per-layer input dropout masks
/// (empty = identity) and a copy of the input sequence.
struct HiddenTrace {
    Matrix input;                              // tau x input_dim
    std::vector<std::vector<Vec>> states;      // [layer][t]
    std::vector<std::vector<GruGates>> gates;  // [layer][t]
    std::vector<Vec> masks;                    // [layer]; empty = identity
    std::vector<Vec> initial_states;           // [layer]

    std::size_t len() const { return input.rows; }
    std::size_t num_layers() const { return states.size(); }

    const Vec& final_state(std::size_t layer) const { return states[layer].back(); }
};

/// One GRU step:
///   r = sigma(Wr_ff*(m.x) + Wr_rec*h_prev + b_r)
///   u = sigma(Wu_ff*(m.x) + Wu_rec*h_prev + b_u)
///   c = tanh(Wc_ff*(m.x) + Wc_rec*(r.h_prev) + b_c)
///   h = (1-u).h_prev + u.c
/// The mask applies only to the non-recurrent input x_t.
inline std::pair<Vec, GruGates> gru_cell_forward(const Vec& x_t, const Vec& h_prev,
                                                 const GruLayerParams& p,
                                                 const Vec* mask = nullptr) {
    const std::size_t h = p.units();
    if (x_t.size() != p.input_dim()) throw StructuralError("gru_cell_forward: input dim mismatch");
    if (h_prev.size() != h) throw StructuralError("gru_cell_forward: hidden dim mismatch");
    if (mask && mask->size() != x_t.size())
        throw StructuralError("gru_cell_forward: mask length mismatch");

    Vec in = x_t;
    if (mask)
        for (std::size_t i = 0; i < in.size(); ++i) in[i] *= (*mask)[i];

    GruGates g;
    Vec pre = p.b_reset;
    matvec_add(p.w_reset_ff, in, pre);
    matvec_add(p.w_reset_rec, h_prev, pre);
    g.reset = sigmoid(pre);

    pre = p.b_update;
    matvec_add(p.w_update_ff, in, pre);
    matvec_add(p.w_update_rec, h_prev, pre);
    g.update = sigmoid(pre);

    Vec gated_prev(h);
    for (std::size_t i = 0; i < h; ++i) gated_prev[i] = g.reset[i] * h_prev[i];
    pre = p.b_cand;
    matvec_add(p.w_cand_ff, in, pre);
    matvec_add(p.w_cand_rec, gated_prev, pre);
    g.cand = tanh_vec(pre);

    Vec h_t(h);
    for (std::size_t i = 0; i < h; ++i)
        h_t[i] = (1.0 - g.update[i]) * h_prev[i] + g.update[i] * g.cand[i];
    return {std::move(h_t), std::move(g)};
}

/// Runs the full stack over a tau x n input. Initial hidden states are zero
/// unless given. In train mode one dropout mask per layer is drawn and held
/// fixed across all timesteps of the sequence.
inline HiddenTrace stack_forward(const Matrix& x, const GruStackParams& params, RunMode mode,
                                 Rng& rng, const std::vector<Vec>* initial_states = nullptr) {
    params.validate();
    const std::size_t tau = x.rows;
    if (tau == 0) throw DomainError("stack_forward: empty series");
    if (x.cols != params.input_dim())
        throw StructuralError("stack_forward: series has " + std::to_string(x.cols) +
                              " channels, layer 1 expects " + std::to_string(params.input_dim()));
    const std::size_t n_layers = params.num_layers();
    if (initial_states && initial_states->size() != n_layers)
        throw StructuralError("stack_forward: initial state count mismatch");

    HiddenTrace trace;
    trace.input = x;
    trace.states.resize(n_layers);
    trace.gates.resize(n_layers);
    trace.masks.resize(n_layers);
    trace.initial_states.resize(n_layers);

    const bool use_dropout = (mode == RunMode::train) && params.dropout_rate > 0.0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        if (use_dropout)
            trace.masks[l] = dropout_mask(params.layers[l].input_dim(), params.dropout_rate, rng);
        Vec h0(params.layers[l].units(), 0.0);
        if (initial_states) {
            if ((*initial_states)[l].size() != h0.size())
                throw StructuralError("stack_forward: initial state dim mismatch at layer " +
                                      std::to_string(l));
            h0 = (*initial_states)[l];
        }
        trace.initial_states[l] = std::move(h0);
        trace.states[l].reserve(tau);
        trace.gates[l].reserve(tau);
    }

    Vec x_t;
    for (std::size_t t = 0; t < tau; ++t) {
        x_t.assign(x.row(t), x.row(t) + x.cols);
        const Vec* below = &x_t;
        for (std::size_t l = 0; l < n_layers; ++l) {
            const Vec& h_prev = trace.states[l].empty() ? trace.initial_states[l]
                                                        : trace.states[l].back();
            const Vec* mask = trace.masks[l].empty() ? nullptr : &trace.masks[l];
            auto [h_t, g] = gru_cell_forward(*below, h_prev, params.layers[l], mask);
            trace.states[l].push_back(std::move(h_t));
            trace.gates[l].push_back(std::move(g));
            below = &trace.states[l].back();
        }
    }
    return trace;
}

/// Loss gradients injected into the stack: d_state[l][t] is dLoss/dz_t^l.
/// Empty inner vectors mean zero.
struct OutputGrads {
    std::vector<std::vector<Vec>> d_state;

    static OutputGrads zeros(const GruStackParams& params, std::size_t tau) {
        OutputGrads og;
        og.d_state.resize(params.num_layers());
        for (std::size_t l = 0; l < params.num_layers(); ++l) og.d_state[l].resize(tau);
        return og;
    }

    /// Per-timestep gradients on the top layer (sequence outputs).
    static OutputGrads top_per_step(const GruStackParams& params, std::vector<Vec> grads) {
        OutputGrads og = zeros(params, grads.size());
        og.d_state.back() = std::move(grads);
        return og;
    }

    /// Final-step gradient on the top layer (sequence classification).
    static OutputGrads top_final(const GruStackParams& params, std::size_t tau, Vec grad) {
        OutputGrads og = zeros(params, tau);
        og.d_state.back()[tau - 1] = std::move(grad);
        return og;
    }

    /// Gradients on every layer's final state (encoder embeddings).
    static OutputGrads final_per_layer(const GruStackParams& params, std::size_t tau,
                                       std::vector<Vec> grads) {
        OutputGrads og = zeros(params, tau);
        for (std::size_t l = 0; l < grads.size(); ++l) og.d_state[l][tau - 1] = std::move(grads[l]);
        return og;
    }
};

/// Data-loss gradients shaped like the stack, plus the gradients flowing out
/// of it. Parameter and initial-state gradients accumulate across calls;
/// d_input is overwritten per sequence (its length varies).
struct StackGrads {
    std::vector<GruLayerParams> layers;
    std::vector<Vec> d_initial_state;
    Matrix d_input; // tau x input_dim, last accumulated sequence

    static StackGrads zeros_like(const GruStackParams& params) {
        StackGrads g;
        for (const auto& l : params.layers)
            g.layers.push_back(GruLayerParams::zeros(l.input_dim(), l.units()));
        for (const auto& l : params.layers) g.d_initial_state.emplace_back(l.units(), 0.0);
        return g;
    }

    ParamRefs param_spans() {
        ParamRefs refs;
        for (auto& l : layers) {
            refs.emplace_back(l.w_reset_ff.data);
            refs.emplace_back(l.w_update_ff.data);
            refs.emplace_back(l.w_cand_ff.data);
            refs.emplace_back(l.w_reset_rec.data);
            refs.emplace_back(l.w_update_rec.data);
            refs.emplace_back(l.w_cand_rec.data);
            refs.emplace_back(l.b_reset);
            refs.emplace_back(l.b_update);
            refs.emplace_back(l.b_cand);
        }
        return refs;
    }

    GradRefs const_spans() const {
        GradRefs refs;
        for (const auto& l : layers) {
            refs.emplace_back(l.w_reset_ff.data);
            refs.emplace_back(l.w_update_ff.data);
            refs.emplace_back(l.w_cand_ff.data);
            refs.emplace_back(l.w_reset_rec.data);
            refs.emplace_back(l.w_update_rec.data);
            refs.emplace_back(l.w_cand_rec.data);
            refs.emplace_back(l.b_reset);
            refs.emplace_back(l.b_update);
            refs.emplace_back(l.b_cand);
        }
        return refs;
    }

    void add(const StackGrads& other) {
        auto mine = param_spans();
        auto theirs = other.const_spans();
        if (mine.size() != theirs.size()) throw StructuralError("StackGrads::add: shape mismatch");
        for (std::size_t i = 0; i < mine.size(); ++i) {
            if (mine[i].size() != theirs[i].size())
                throw StructuralError("StackGrads::add: buffer size mismatch");
            for (std::size_t j = 0; j < mine[i].size(); ++j) mine[i][j] += theirs[i][j];
        }
    }

    void scale(double s) {
        for (auto& span : param_spans())
            for (double& v : span) v *= s;
    }
};

/// Exact backpropagation through time for the stack. Computes data-loss
/// gradients only; penalty terms are the caller's business.
inline void bptt_accumulate(const HiddenTrace& trace, const GruStackParams& params,
                            const OutputGrads& out_grads, StackGrads& acc) {
    const std::size_t n_layers = params.num_layers();
    const std::size_t tau = trace.len();
    if (trace.num_layers() != n_layers)
        throw StructuralError("bptt: trace/params layer count mismatch");
    if (out_grads.d_state.size() != n_layers)
        throw StructuralError("bptt: output gradient layer count mismatch");
    if (acc.layers.size() != n_layers) throw StructuralError("bptt: accumulator layer mismatch");
    for (std::size_t l = 0; l < n_layers; ++l) {
        if (trace.states[l].size() != tau) throw StructuralError("bptt: ragged trace");
        if (out_grads.d_state[l].size() != tau)
            throw StructuralError("bptt: output gradient length mismatch");
        if (trace.states[l][0].size() != params.layers[l].units())
            throw StructuralError("bptt: trace width does not match params");
    }

    acc.d_input = Matrix(tau, params.input_dim());

    // d_above[t]: gradient into states[l][t] contributed by layer l+1's input.
    std::vector<Vec> d_above(tau);

    for (std::size_t li = n_layers; li-- > 0;) {
        const GruLayerParams& p = params.layers[li];
        GruLayerParams& g = acc.layers[li];
        const std::size_t h = p.units();
        const std::size_t d = p.input_dim();
        const Vec& mask = trace.masks[li];

        std::vector<Vec> d_below(tau);
        Vec rec_carry(h, 0.0);
        Vec in(d), dh(h), du(h), dcand(h), da_u(h), da_c(h), da_r(h), dr(h), drh(h), dh_prev(h),
            gated_prev(h), d_in(d);

        for (std::size_t t = tau; t-- > 0;) {
            const Vec& h_prev = (t == 0) ? trace.initial_states[li] : trace.states[li][t - 1];
            const GruGates& gates = trace.gates[li][t];

            // Masked input to this layer at time t.
            if (li == 0) {
                in.assign(trace.input.row(t), trace.input.row(t) + d);
            } else {
                in = trace.states[li - 1][t];
            }
            if (!mask.empty())
                for (std::size_t i = 0; i < d; ++i) in[i] *= mask[i];

            // Total gradient reaching h_t.
            dh = rec_carry;
            const Vec& inj = out_grads.d_state[li][t];
            if (!inj.empty()) {
                if (inj.size() != h) throw StructuralError("bptt: injected gradient dim mismatch");
                for (std::size_t i = 0; i < h; ++i) dh[i] += inj[i];
            }
            if (!d_above[t].empty())
                for (std::size_t i = 0; i < h; ++i) dh[i] += d_above[t][i];

            // h = (1-u) h_prev + u c
            for (std::size_t i = 0; i < h; ++i) {
                du[i] = dh[i] * (gates.cand[i] - h_prev[i]);
                dcand[i] = dh[i] * gates.update[i];
                dh_prev[i] = dh[i] * (1.0 - gates.update[i]);
                da_c[i] = dcand[i] * (1.0 - gates.cand[i] * gates.cand[i]);
                da_u[i] = du[i] * gates.update[i] * (1.0 - gates.update[i]);
            }

            // Candidate path: c = tanh(.. + Wc_rec (r . h_prev) ..)
            drh.assign(h, 0.0);
            matvec_transposed_add(p.w_cand_rec, da_c, drh);
            for (std::size_t i = 0; i < h; ++i) {
                dr[i] = drh[i] * h_prev[i];
                dh_prev[i] += drh[i] * gates.reset[i];
                da_r[i] = dr[i] * gates.reset[i] * (1.0 - gates.reset[i]);
            }

            matvec_transposed_add(p.w_reset_rec, da_r, dh_prev);
            matvec_transposed_add(p.w_update_rec, da_u, dh_prev);

            d_in.assign(d, 0.0);
            matvec_transposed_add(p.w_reset_ff, da_r, d_in);
            matvec_transposed_add(p.w_update_ff, da_u, d_in);
            matvec_transposed_add(p.w_cand_ff, da_c, d_in);

            for (std::size_t i = 0; i < h; ++i) gated_prev[i] = gates.reset[i] * h_prev[i];
            outer_add(g.w_reset_ff, da_r, in);
            outer_add(g.w_update_ff, da_u, in);
            outer_add(g.w_cand_ff, da_c, in);
            outer_add(g.w_reset_rec, da_r, h_prev);
            outer_add(g.w_update_rec, da_u, h_prev);
            outer_add(g.w_cand_rec, da_c, gated_prev);
            for (std::size_t i = 0; i < h; ++i) {
                g.b_reset[i] += da_r[i];
                g.b_update[i] += da_u[i];
                g.b_cand[i] += da_c[i];
            }

            // Through the dropout mask back to the raw layer input.
            d_below[t] = d_in;
            if (!mask.empty())
                for (std::size_t i = 0; i < d; ++i) d_below[t][i] *= mask[i];

            rec_carry = dh_prev;
        }

        for (std::size_t i = 0; i < h; ++i) acc.d_initial_state[li][i] += rec_carry[i];

        if (li == 0) {
            for (std::size_t t = 0; t < tau; ++t)
                for (std::size_t i = 0; i < d; ++i) acc.d_input(t, i) = d_below[t][i];
        } else {
            d_above = std::move(d_below);
        }
    }
}

inline StackGrads bptt(const HiddenTrace& trace, const GruStackParams& params,
                       const OutputGrads& out_grads) {
    StackGrads g = StackGrads::zeros_like(params);
    bptt_accumulate(trace, params, out_grads, g);
    return g;
}

} // namespace tsadapt
