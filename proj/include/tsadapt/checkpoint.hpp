#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "tsadapt/adapt.hpp"
#include "tsadapt/autoencoder.hpp"
#include "tsadapt/errors.hpp"
#include "tsadapt/gru.hpp"
#include "tsadapt/multitask.hpp"

#include "json.hpp"

namespace tsadapt {

using json = nlohmann::json;

/// FNV-1a 64-bit over the canonical (sorted-key) JSON dump; the hex digest is
/// embedded in every artifact so reruns can be tied back to their config.
inline std::string config_hash(const json& config) {
    const std::string s = config.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Shortest-round-trip decimal for a double; CSV artifacts reload bit-exactly.
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) {
        // Try shorter representations for readability.
        for (int prec = 1; prec < 17; ++prec) {
            char shorter[32];
            std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
            std::sscanf(shorter, "%lf", &back);
            if (back == v) return shorter;
        }
    }
    return buf;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << content;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return content;
}

inline json load_json_file(const std::filesystem::path& path) {
    try {
        return json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Model <-> JSON
// ---------------------------------------------------------------------------

inline json matrix_to_json(const Matrix& m) {
    return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

inline Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    m.data = j.at("data").get<Vec>();
    if (m.data.size() != m.rows * m.cols)
        throw DataError("matrix payload has wrong element count");
    return m;
}

inline json layer_to_json(const GruLayerParams& l) {
    return json{{"input_dim", l.input_dim()},
                {"units", l.units()},
                {"w_reset_ff", matrix_to_json(l.w_reset_ff)},
                {"w_update_ff", matrix_to_json(l.w_update_ff)},
                {"w_cand_ff", matrix_to_json(l.w_cand_ff)},
                {"w_reset_rec", matrix_to_json(l.w_reset_rec)},
                {"w_update_rec", matrix_to_json(l.w_update_rec)},
                {"w_cand_rec", matrix_to_json(l.w_cand_rec)},
                {"b_reset", l.b_reset},
                {"b_update", l.b_update},
                {"b_cand", l.b_cand}};
}

inline GruLayerParams layer_from_json(const json& j) {
    GruLayerParams l;
    l.w_reset_ff = matrix_from_json(j.at("w_reset_ff"));
    l.w_update_ff = matrix_from_json(j.at("w_update_ff"));
    l.w_cand_ff = matrix_from_json(j.at("w_cand_ff"));
    l.w_reset_rec = matrix_from_json(j.at("w_reset_rec"));
    l.w_update_rec = matrix_from_json(j.at("w_update_rec"));
    l.w_cand_rec = matrix_from_json(j.at("w_cand_rec"));
    l.b_reset = j.at("b_reset").get<Vec>();
    l.b_update = j.at("b_update").get<Vec>();
    l.b_cand = j.at("b_cand").get<Vec>();
    l.validate();
    return l;
}

inline json stack_to_json(const GruStackParams& s) {
    json layers = json::array();
    for (const auto& l : s.layers) layers.push_back(layer_to_json(l));
    return json{{"layers", layers}, {"dropout_rate", s.dropout_rate}};
}

inline GruStackParams stack_from_json(const json& j) {
    GruStackParams s;
    s.dropout_rate = j.at("dropout_rate").get<double>();
    for (const auto& l : j.at("layers")) s.layers.push_back(layer_from_json(l));
    s.validate();
    return s;
}

inline json seq2seq_to_json(const Seq2SeqParams& p) {
    return json{{"encoder", stack_to_json(p.encoder)},
                {"decoder", stack_to_json(p.decoder)},
                {"proj_w", matrix_to_json(p.proj_w)},
                {"proj_b", p.proj_b}};
}

inline Seq2SeqParams seq2seq_from_json(const json& j) {
    Seq2SeqParams p;
    p.encoder = stack_from_json(j.at("encoder"));
    p.decoder = stack_from_json(j.at("decoder"));
    p.proj_w = matrix_from_json(j.at("proj_w"));
    p.proj_b = j.at("proj_b").get<Vec>();
    p.validate();
    return p;
}

inline json healthnet_to_json(const HealthNetModel& m) {
    return json{{"stack", stack_to_json(m.stack)},
                {"head_w", matrix_to_json(m.head.w)},
                {"head_b", m.head.b},
                {"tasks", m.tasks},
                {"config_hash", m.config_hash}};
}

inline HealthNetModel healthnet_from_json(const json& j) {
    HealthNetModel m;
    m.stack = stack_from_json(j.at("stack"));
    m.head.w = matrix_from_json(j.at("head_w"));
    m.head.b = j.at("head_b").get<Vec>();
    m.tasks = j.at("tasks").get<std::vector<std::string>>();
    m.config_hash = j.value("config_hash", "");
    m.validate();
    return m;
}

inline json finetuned_to_json(const FinetunedModel& m) {
    const char* reg = m.reg == RegKind::none ? "none" : (m.reg == RegKind::l1 ? "l1" : "l2");
    return json{{"stack", stack_to_json(m.stack)},
                {"head_w", matrix_to_json(m.head_w)},
                {"head_b", m.head_b},
                {"reg", reg},
                {"lambda", m.lambda}};
}

inline FinetunedModel finetuned_from_json(const json& j) {
    FinetunedModel m;
    m.stack = stack_from_json(j.at("stack"));
    m.head_w = matrix_from_json(j.at("head_w"));
    m.head_b = j.at("head_b").get<Vec>();
    const std::string reg = j.at("reg").get<std::string>();
    m.reg = reg == "none" ? RegKind::none : (reg == "l1" ? RegKind::l1 : RegKind::l2);
    m.lambda = j.at("lambda").get<double>();
    return m;
}

inline json sparse_linear_to_json(const SparseLinearModel& m) {
    json layout;
    if (m.layout.per_channel) {
        layout = json{{"kind", "per_channel"},
                      {"n_channels", m.layout.n_channels},
                      {"per_channel_dims", m.layout.per_channel_dims},
                      {"channel_names", m.layout.channel_names}};
    } else {
        layout = json{{"kind", "flat"}};
    }
    return json{{"loss_kind", m.loss_kind == LinearLoss::squared ? "squared" : "logistic"},
                {"penalty", m.penalty},
                {"intercept", m.intercept},
                {"has_intercept", m.has_intercept},
                {"layout", layout},
                {"weights", m.w}};
}

inline SparseLinearModel sparse_linear_from_json(const json& j) {
    SparseLinearModel m;
    m.loss_kind =
        j.at("loss_kind").get<std::string>() == "squared" ? LinearLoss::squared : LinearLoss::logistic;
    m.penalty = j.at("penalty").get<double>();
    m.intercept = j.at("intercept").get<double>();
    m.has_intercept = j.value("has_intercept", true);
    m.w = j.at("weights").get<Vec>();
    const json& layout = j.at("layout");
    if (layout.at("kind").get<std::string>() == "per_channel") {
        m.layout = FeatureLayout::channels(
            layout.at("n_channels").get<std::size_t>(),
            layout.at("per_channel_dims").get<std::size_t>(),
            layout.value("channel_names", std::vector<std::string>{}));
        if (m.w.size() != m.layout.n_channels * m.layout.per_channel_dims)
            throw DataError("sparse linear model: layout does not match weight count");
    }
    return m;
}

inline json scaler_to_json(const ChannelScaler& s) {
    return json{{"mean", s.mean}, {"inv_std", s.inv_std}};
}

inline ChannelScaler scaler_from_json(const json& j) {
    ChannelScaler s;
    s.mean = j.at("mean").get<Vec>();
    s.inv_std = j.at("inv_std").get<Vec>();
    if (s.mean.size() != s.inv_std.size()) throw DataError("scaler payload size mismatch");
    return s;
}

// ---------------------------------------------------------------------------
// Checkpoint envelope
// ---------------------------------------------------------------------------

inline constexpr const char* kCheckpointVersion = "tsadapt-checkpoint-1";

inline void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                            json payload, std::uint64_t seed, const std::string& cfg_hash) {
    json envelope{{"format", kCheckpointVersion},
                  {"kind", kind},
                  {"seed", seed},
                  {"config_hash", cfg_hash},
                  {"payload", std::move(payload)}};
    write_text_file(path, envelope.dump());
}

inline json load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind) {
    if (!std::filesystem::exists(path))
        throw ConfigError("missing checkpoint: " + path.string());
    json envelope = load_json_file(path);
    if (envelope.value("format", "") != kCheckpointVersion)
        throw DataError(path.string() + ": unknown checkpoint format");
    if (envelope.value("kind", "") != expected_kind)
        throw DataError(path.string() + ": checkpoint kind '" + envelope.value("kind", "") +
                        "', expected '" + expected_kind + "'");
    return envelope;
}

} // namespace tsadapt
