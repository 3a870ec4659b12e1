#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "tsadapt/gru.hpp"
#include "tsadapt/matrix.hpp"
#include "tsadapt/optim.hpp"
#include "tsadapt/rng.hpp"
#include "tsadapt/series.hpp"

namespace tsadapt {

/// GRU encoder-decoder trained to emit the reversed input. The decoder's
/// hidden states start from the encoder's final states layer-for-layer and it
/// receives a constant zero input at every step, so the embedding is its only
/// information source. A per-step linear readout maps the decoder's top state
/// to the scalar reconstruction.
struct Seq2SeqParams {
    GruStackParams encoder;
    GruStackParams decoder;
    Matrix proj_w; // 1 x top width
    Vec proj_b;    // 1

    void validate() const {
        encoder.validate();
        decoder.validate();
        if (encoder.num_layers() != decoder.num_layers())
            throw StructuralError("Seq2SeqParams: encoder/decoder depth mismatch");
        for (std::size_t l = 0; l < encoder.num_layers(); ++l)
            if (encoder.layers[l].units() != decoder.layers[l].units())
                throw StructuralError("Seq2SeqParams: layer width mismatch at layer " +
                                      std::to_string(l));
        require_shape(proj_w, 1, decoder.top_units(), "proj_w");
        if (proj_b.size() != 1) throw StructuralError("Seq2SeqParams: proj_b must be scalar");
    }

    ParamRefs param_spans() {
        ParamRefs refs = encoder.param_spans();
        for (auto& s : decoder.param_spans()) refs.push_back(s);
        refs.emplace_back(proj_w.data);
        refs.emplace_back(proj_b);
        return refs;
    }

    static Seq2SeqParams init(const std::vector<std::size_t>& widths, double dropout, Rng& rng) {
        Seq2SeqParams p;
        p.encoder = GruStackParams::init(1, widths, dropout, rng);
        p.decoder = GruStackParams::init(1, widths, dropout, rng);
        p.proj_w = glorot_init(1, widths.back(), rng);
        p.proj_b.assign(1, 0.0);
        return p;
    }
};

struct AeConfig {
    std::vector<std::size_t> widths = {16, 16};
    std::size_t epochs = 300;
    std::size_t batch_size = 16;
    double lr = 0.01;
    double dropout = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
};

struct AeTrainResult {
    Seq2SeqParams params;
    std::vector<double> epoch_loss; // mean squared error per epoch, train corpus
};

namespace detail {

inline Matrix univariate_input(const Vec& series) {
    Matrix x(series.size(), 1);
    for (std::size_t t = 0; t < series.size(); ++t) x(t, 0) = series[t];
    return x;
}

struct AeSequenceGrads {
    StackGrads encoder;
    StackGrads decoder;
    Matrix proj_w;
    Vec proj_b;
    double sq_error_sum = 0.0;
};

/// Forward + backward for one sequence. Error gradients are left unscaled
/// (raw d(sum of squares)/2 per step is applied by the caller's scale).
inline AeSequenceGrads ae_sequence_pass(const Vec& series, Seq2SeqParams& p, RunMode mode,
                                        Rng& rng, double grad_scale) {
    const std::size_t tau = series.size();
    const Matrix x = univariate_input(series);
    HiddenTrace enc_trace = stack_forward(x, p.encoder, mode, rng);

    std::vector<Vec> enc_finals;
    enc_finals.reserve(p.encoder.num_layers());
    for (std::size_t l = 0; l < p.encoder.num_layers(); ++l)
        enc_finals.push_back(enc_trace.final_state(l));

    const Matrix dec_in(tau, 1, 0.0);
    HiddenTrace dec_trace = stack_forward(dec_in, p.decoder, mode, rng, &enc_finals);

    AeSequenceGrads g;
    g.proj_w = Matrix(1, p.decoder.top_units());
    g.proj_b.assign(1, 0.0);

    std::vector<Vec> d_top(tau);
    const Vec proj_row(p.proj_w.row(0), p.proj_w.row(0) + p.proj_w.cols);
    for (std::size_t t = 0; t < tau; ++t) {
        const Vec& state = dec_trace.states.back()[t];
        const double recon = dot(proj_row, state) + p.proj_b[0];
        const double target = series[tau - 1 - t]; // decoder step t scores x_{tau-t}
        const double err = recon - target;
        g.sq_error_sum += err * err;
        const double d_recon = 2.0 * err * grad_scale;
        d_top[t].assign(state.size(), 0.0);
        for (std::size_t i = 0; i < state.size(); ++i) {
            d_top[t][i] = d_recon * proj_row[i];
            g.proj_w(0, i) += d_recon * state[i];
        }
        g.proj_b[0] += d_recon;
    }

    g.decoder = bptt(dec_trace, p.decoder, OutputGrads::top_per_step(p.decoder, std::move(d_top)));
    g.encoder = bptt(enc_trace, p.encoder,
                     OutputGrads::final_per_layer(p.encoder, tau, g.decoder.d_initial_state));
    return g;
}

} // namespace detail

/// Unsupervised pre-training: minimize the mean squared error between the
/// decoder outputs and the reversed input over the corpus.
inline AeTrainResult train_autoencoder(const std::vector<Vec>& corpus, const AeConfig& cfg,
                                       Rng& rng) {
    if (corpus.empty()) throw DomainError("train_autoencoder: empty corpus");
    for (const auto& s : corpus)
        if (s.empty()) throw DomainError("train_autoencoder: zero-length series in corpus");
    if (cfg.widths.empty()) throw DomainError("train_autoencoder: no layer widths");
    if (cfg.batch_size == 0) throw DomainError("train_autoencoder: batch_size must be >= 1");

    AeTrainResult result;
    result.params = Seq2SeqParams::init(cfg.widths, cfg.dropout, rng);
    Seq2SeqParams& p = result.params;

    AdamState adam = AdamState::for_params(p.param_spans(), cfg.lr);
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.adam_eps;

    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle(order, rng);
        double epoch_sq_sum = 0.0;
        std::size_t epoch_steps = 0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            std::size_t batch_steps = 0;
            for (std::size_t b = start; b < end; ++b) batch_steps += corpus[order[b]].size();
            const double scale = 1.0 / static_cast<double>(batch_steps);

            StackGrads enc_acc = StackGrads::zeros_like(p.encoder);
            StackGrads dec_acc = StackGrads::zeros_like(p.decoder);
            Matrix proj_w_acc(1, p.decoder.top_units());
            Vec proj_b_acc(1, 0.0);

            for (std::size_t b = start; b < end; ++b) {
                auto g = detail::ae_sequence_pass(corpus[order[b]], p, RunMode::train, rng, scale);
                enc_acc.add(g.encoder);
                dec_acc.add(g.decoder);
                for (std::size_t i = 0; i < proj_w_acc.size(); ++i)
                    proj_w_acc.data[i] += g.proj_w.data[i];
                proj_b_acc[0] += g.proj_b[0];
                epoch_sq_sum += g.sq_error_sum;
            }
            epoch_steps += batch_steps;

            GradRefs grads = enc_acc.const_spans();
            for (auto& s : dec_acc.const_spans()) grads.push_back(s);
            grads.emplace_back(proj_w_acc.data);
            grads.emplace_back(proj_b_acc);
            adam_step(p.param_spans(), grads, adam);
        }
        result.epoch_loss.push_back(epoch_sq_sum / static_cast<double>(epoch_steps));
    }
    return result;
}

/// Reconstruct a series with the trained model (eval mode); output index t
/// estimates input element tau-1-t.
inline Vec reconstruct(const Vec& series, Seq2SeqParams& params) {
    Rng rng(0);
    const std::size_t tau = series.size();
    const Matrix x = detail::univariate_input(series);
    HiddenTrace enc_trace = stack_forward(x, params.encoder, RunMode::eval, rng);
    std::vector<Vec> enc_finals;
    for (std::size_t l = 0; l < params.encoder.num_layers(); ++l)
        enc_finals.push_back(enc_trace.final_state(l));
    const Matrix dec_in(tau, 1, 0.0);
    HiddenTrace dec_trace = stack_forward(dec_in, params.decoder, RunMode::eval, rng, &enc_finals);
    Vec out(tau);
    const Vec proj_row(params.proj_w.row(0), params.proj_w.row(0) + params.proj_w.cols);
    for (std::size_t t = 0; t < tau; ++t)
        out[t] = dot(proj_row, dec_trace.states.back()[t]) + params.proj_b[0];
    return out;
}

/// Mean squared reconstruction error over a corpus, evaluated without dropout.
inline double reconstruction_mse(const std::vector<Vec>& corpus, Seq2SeqParams& params) {
    double sq = 0.0;
    std::size_t steps = 0;
    for (const auto& s : corpus) {
        const Vec recon = reconstruct(s, params);
        for (std::size_t t = 0; t < s.size(); ++t) {
            const double err = recon[t] - s[s.size() - 1 - t];
            sq += err * err;
        }
        steps += s.size();
    }
    return sq / static_cast<double>(steps);
}

/// Embedding of a univariate series: final-timestep hidden states of all
/// encoder layers concatenated in layer order (length = sum of layer widths).
inline Vec encode_univariate(const Vec& series, const GruStackParams& encoder) {
    if (series.empty()) throw DomainError("encode_univariate: empty series");
    Rng rng(0);
    HiddenTrace trace = stack_forward(detail::univariate_input(series), encoder, RunMode::eval, rng);
    Vec z;
    z.reserve(encoder.total_units());
    for (std::size_t l = 0; l < encoder.num_layers(); ++l) {
        const Vec& f = trace.final_state(l);
        z.insert(z.end(), f.begin(), f.end());
    }
    return z;
}

/// Per-channel embeddings concatenated in channel order: m = n_channels * c.
inline Vec extract_features_multichannel(const MultivariateSeries& x,
                                         const GruStackParams& encoder) {
    if (x.num_channels() == 0) throw DomainError("extract_features_multichannel: no channels");
    Vec features;
    features.reserve(x.num_channels() * encoder.total_units());
    for (std::size_t j = 0; j < x.num_channels(); ++j) {
        const Vec z = encode_univariate(x.channel(j), encoder);
        features.insert(features.end(), z.begin(), z.end());
    }
    return features;
}

/// Per-channel z-scoring fit on the training split; constant channels pass
/// through unscaled.
struct ChannelScaler {
    Vec mean;
    Vec inv_std;

    static ChannelScaler fit(const std::vector<const MultivariateSeries*>& train) {
        if (train.empty()) throw DomainError("ChannelScaler::fit: empty training set");
        const std::size_t n = train.front()->num_channels();
        ChannelScaler s;
        s.mean.assign(n, 0.0);
        s.inv_std.assign(n, 1.0);
        std::vector<double> sq(n, 0.0);
        std::size_t total = 0;
        for (const auto* series : train) {
            if (series->num_channels() != n)
                throw DataError("ChannelScaler::fit: channel count varies across instances");
            total += series->length();
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t t = 0; t < series->length(); ++t) {
                    s.mean[j] += series->values(j, t);
                    sq[j] += series->values(j, t) * series->values(j, t);
                }
        }
        for (std::size_t j = 0; j < n; ++j) {
            s.mean[j] /= static_cast<double>(total);
            const double var = sq[j] / static_cast<double>(total) - s.mean[j] * s.mean[j];
            if (var > 1e-12) {
                s.inv_std[j] = 1.0 / std::sqrt(var);
            } else {
                s.mean[j] = 0.0; // constant channel: identity
                s.inv_std[j] = 1.0;
            }
        }
        return s;
    }

    MultivariateSeries apply(const MultivariateSeries& x) const {
        if (x.num_channels() != mean.size())
            throw DataError("ChannelScaler::apply: channel count mismatch");
        MultivariateSeries out = x;
        for (std::size_t j = 0; j < x.num_channels(); ++j)
            for (std::size_t t = 0; t < x.length(); ++t)
                out.values(j, t) = (x.values(j, t) - mean[j]) * inv_std[j];
        return out;
    }
};

} // namespace tsadapt
