#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tsadapt/bundle.hpp"
#include "tsadapt/checkpoint.hpp"
#include "tsadapt/experiment.hpp"
#include "tsadapt/synth.hpp"

#include "CLI11.hpp"

namespace tsadapt {

namespace cli_detail {

inline SynthConfig synth_config_from_json(const json& j) {
    SynthConfig cfg;
    cfg.n_channels = j.value("n_channels", cfg.n_channels);
    cfg.n_tasks = j.value("n_tasks", cfg.n_tasks);
    cfg.n_source_tasks = j.value("n_source_tasks", cfg.n_source_tasks);
    cfg.n_train = j.value("n_train", cfg.n_train);
    cfg.n_val = j.value("n_val", cfg.n_val);
    cfg.n_test = j.value("n_test", cfg.n_test);
    cfg.tau = j.value("tau", cfg.tau);
    cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
    cfg.template_norm = j.value("template_norm", cfg.template_norm);
    cfg.label_prevalence = j.value("label_prevalence", cfg.label_prevalence);
    cfg.target_prevalence = j.value("target_prevalence", cfg.target_prevalence);
    cfg.second_episode_prob = j.value("second_episode_prob", cfg.second_episode_prob);
    cfg.label_persistence = j.value("label_persistence", cfg.label_persistence);
    cfg.source_blend = j.value("source_blend", cfg.source_blend);
    cfg.target_source_corr = j.value("target_source_corr", cfg.target_source_corr);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

inline void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

inline std::string loss_log_csv(const std::string& cfg_hash, const std::vector<double>& train,
                                const std::vector<double>& val) {
    std::string out = "# config_hash=" + cfg_hash + "\n";
    out += val.empty() ? "epoch,train_loss\n" : "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < train.size(); ++e) {
        out += std::to_string(e + 1) + "," + fmt_double(train[e]);
        if (!val.empty()) out += "," + fmt_double(val[e]);
        out += "\n";
    }
    return out;
}

inline std::vector<Vec> split_features_timenet(const std::vector<EpisodeRecord>& recs,
                                               const ChannelScaler& scaler,
                                               const GruStackParams& encoder, std::size_t window) {
    std::vector<Vec> rows;
    rows.reserve(recs.size());
    for (const auto& r : recs)
        rows.push_back(
            extract_features_multichannel(scaler.apply(truncate_and_pad(r.series, window)), encoder));
    return rows;
}

inline void save_model_file(const std::filesystem::path& path, const SparseLinearModel& model,
                            const std::string& cfg_hash) {
    json envelope{{"format", "tsadapt-model-1"},
                  {"config_hash", cfg_hash},
                  {"model", sparse_linear_to_json(model)}};
    write_text_file(path, envelope.dump());
}

inline SparseLinearModel load_model_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("missing model file: " + path.string());
    const json envelope = load_json_file(path);
    if (envelope.value("format", "") != "tsadapt-model-1")
        throw DataError(path.string() + ": unknown model format");
    return sparse_linear_from_json(envelope.at("model"));
}

// --- subcommand bodies -----------------------------------------------------

inline void cmd_synth_data(const json& cfg, const std::filesystem::path& out) {
    const SynthConfig sc = synth_config_from_json(cfg);
    SynthResult res = synth_generate(sc);
    print_warnings(res.warnings);
    save_bundle(res.split, out, sc.seed, config_hash(cfg));
}

inline void cmd_load_data(const json& cfg, const std::filesystem::path& out) {
    const std::filesystem::path root = cfg.at("root").get<std::string>();
    const std::filesystem::path manifest = cfg.at("manifest").get<std::string>();
    LoadResult res = load_csv_dataset(root, manifest);
    print_warnings(res.warnings);
    if (res.split.train.empty() && res.split.validation.empty() && res.split.test.empty()) {
        // Nothing to write beyond an empty index.
        json index{{"schema_version", kBundleVersion},
                   {"seed", 0},
                   {"config_hash", config_hash(cfg)},
                   {"channels", json::array()},
                   {"mask_channels", json::array()},
                   {"tasks", json{{"source", res.split.source_tasks},
                                  {"target", res.split.target_tasks}}},
                   {"episodes", json::array()}};
        write_text_file(out / "index.json", index.dump());
        return;
    }
    save_bundle(res.split, out, 0, config_hash(cfg));
}

inline void cmd_pretrain_ae(const json& cfg, const std::filesystem::path& out) {
    const json corpus_cfg = cfg.value("corpus", json::object());
    const std::uint64_t seed = cfg.value("seed", 1ULL);
    const auto corpus = synth_univariate_corpus(corpus_cfg.value("count", 200),
                                                corpus_cfg.value("len_min", 24),
                                                corpus_cfg.value("len_max", 48),
                                                Rng::mix(seed, 0xae));
    AeConfig ae;
    if (cfg.contains("widths")) ae.widths = cfg.at("widths").get<std::vector<std::size_t>>();
    ae.epochs = cfg.value("epochs", ae.epochs);
    ae.batch_size = cfg.value("batch_size", ae.batch_size);
    ae.lr = cfg.value("lr", ae.lr);
    ae.dropout = cfg.value("dropout", ae.dropout);

    Rng rng(seed);
    AeTrainResult res = train_autoencoder(corpus, ae, rng);
    const std::string hash = config_hash(cfg);
    save_checkpoint(out / "ae.json", "autoencoder", seq2seq_to_json(res.params), seed, hash);
    write_text_file(out / "ae_loss.csv", loss_log_csv(hash, res.epoch_loss, {}));
}

inline void cmd_pretrain_hn(const json& cfg, const std::filesystem::path& out) {
    const DatasetSplit full = load_bundle(cfg.at("dataset").get<std::string>());
    if (full.source_tasks.empty()) throw DataError("dataset has no source tasks to pre-train on");
    const DatasetSplit clean = apply_leakage_rule(full);
    if (clean.train.empty())
        throw DomainError("leakage rule removed every training patient");

    const std::size_t window = cfg.value("window", 48);
    const std::uint64_t seed = cfg.value("seed", 1ULL);
    RnnTrainConfig rc = rnn_config_from_json(cfg);

    const ChannelScaler scaler = detail::fit_scaler_on_windows(clean.train, window);
    auto labels_of = [&](const EpisodeRecord& r) {
        std::vector<double> y;
        for (const auto& task : clean.source_tasks) {
            auto it = r.labels.find(task);
            if (it == r.labels.end())
                throw DataError("episode " + r.patient_id + " lacks source-task label " + task);
            y.push_back(static_cast<double>(it->second));
        }
        return y;
    };
    std::vector<MultivariateSeries> train_store, val_store;
    std::vector<LabeledInstance> train_inst, val_inst;
    for (const auto& r : clean.train) {
        train_store.push_back(scaler.apply(truncate_and_pad(r.series, window)));
    }
    for (std::size_t i = 0; i < clean.train.size(); ++i)
        train_inst.push_back({&train_store[i], labels_of(clean.train[i])});
    for (const auto& r : clean.validation)
        val_store.push_back(scaler.apply(truncate_and_pad(r.series, window)));
    for (std::size_t i = 0; i < clean.validation.size(); ++i)
        val_inst.push_back({&val_store[i], labels_of(clean.validation[i])});

    Rng rng(seed);
    MultitaskTrainResult res = train_multitask(train_inst, val_inst, clean.source_tasks, rc, rng);
    print_warnings(res.warnings);

    const std::string hash = config_hash(cfg);
    HnArtifact artifact{std::move(res.model), scaler};
    artifact.model.config_hash = hash;
    save_checkpoint(out / "hn.json", "healthnet", hn_artifact_to_json(artifact), seed, hash);
    write_text_file(out / "hn_loss.csv", loss_log_csv(hash, res.train_loss, res.val_loss));
}

inline void cmd_train_rnnc(const json& cfg, const std::filesystem::path& out) {
    const DatasetSplit split = load_bundle(cfg.at("dataset").get<std::string>());
    const std::string task = cfg.at("task").get<std::string>();
    const std::size_t window = cfg.value("window", 48);
    const std::uint64_t seed = cfg.value("seed", 1ULL);
    RnnTrainConfig rc = rnn_config_from_json(cfg);

    const ChannelScaler scaler = detail::fit_scaler_on_windows(split.train, window);
    const Vec y_train = detail::labels_for(split.train, task);
    const Vec y_val = detail::labels_for(split.validation, task);
    detail::RnnData train_data = detail::make_rnn_data(split.train, y_train, scaler, window);
    detail::RnnData val_data = detail::make_rnn_data(split.validation, y_val, scaler, window);

    Rng rng(seed);
    MultitaskTrainResult res =
        train_rnnc_baseline(train_data.instances, val_data.instances, task, rc, rng);
    print_warnings(res.warnings);

    const std::string hash = config_hash(cfg);
    HnArtifact artifact{std::move(res.model), scaler};
    artifact.model.config_hash = hash;
    save_checkpoint(out / "rnnc.json", "healthnet", hn_artifact_to_json(artifact), seed, hash);
    write_text_file(out / "rnnc_loss.csv", loss_log_csv(hash, res.train_loss, res.val_loss));
}

inline void cmd_finetune(const json& cfg, const std::filesystem::path& out) {
    const DatasetSplit split = load_bundle(cfg.at("dataset").get<std::string>());
    const std::string task = cfg.at("task").get<std::string>();
    const std::size_t window = cfg.value("window", 48);
    const std::uint64_t seed = cfg.value("seed", 1ULL);
    RnnTrainConfig rc = rnn_config_from_json(cfg);
    const std::string reg_name = cfg.value("reg", "none");
    const RegKind reg =
        reg_name == "none" ? RegKind::none : (reg_name == "l1" ? RegKind::l1 : RegKind::l2);
    if (reg_name != "none" && reg_name != "l1" && reg_name != "l2")
        throw ConfigError("finetune: reg must be none|l1|l2, got '" + reg_name + "'");
    const double lambda = cfg.value("lambda", 0.01);

    const json env = load_checkpoint(cfg.at("hn_checkpoint").get<std::string>(), "healthnet");
    const HnArtifact art = hn_artifact_from_json(env.at("payload"));
    detail::require_unseen_task(art, task);

    const Vec y_train = detail::labels_for(split.train, task);
    const Vec y_val = detail::labels_for(split.validation, task);
    detail::RnnData train_data = detail::make_rnn_data(split.train, y_train, art.scaler, window);
    detail::RnnData val_data = detail::make_rnn_data(split.validation, y_val, art.scaler, window);

    Rng rng(seed);
    FinetuneResult res =
        finetune(art.model, train_data.instances, val_data.instances, reg, lambda, rc, rng);
    print_warnings(res.warnings);

    const std::string hash = config_hash(cfg);
    json payload{{"model", finetuned_to_json(res.model)},
                 {"scaler", scaler_to_json(art.scaler)},
                 {"task", task}};
    save_checkpoint(out / "finetuned.json", "finetuned", payload, seed, hash);
    write_text_file(out / "finetune_loss.csv", loss_log_csv(hash, res.train_loss, res.val_loss));
}

inline void cmd_extract(const json& cfg, const std::filesystem::path& out) {
    const DatasetSplit split = load_bundle(cfg.at("dataset").get<std::string>());
    const std::string kind = cfg.value("kind", "timenet");
    const std::string part_name = cfg.value("split", "train");
    const std::size_t window = cfg.value("window", 48);
    const SplitKind part = part_name == "train"
                               ? SplitKind::train
                               : (part_name == "validation" ? SplitKind::validation
                                                            : SplitKind::test);
    const auto& recs = split.part(part);
    if (recs.empty()) throw DataError("split '" + part_name + "' is empty");

    std::vector<Vec> rows;
    if (kind == "timenet") {
        const json env = load_checkpoint(cfg.at("checkpoint").get<std::string>(), "autoencoder");
        const Seq2SeqParams ae = seq2seq_from_json(env.at("payload"));
        const ChannelScaler scaler = detail::fit_scaler_on_windows(split.train, window);
        rows = split_features_timenet(recs, scaler, ae.encoder, window);
    } else if (kind == "hn-top" || kind == "hn-all") {
        const json env = load_checkpoint(cfg.at("checkpoint").get<std::string>(), "healthnet");
        const HnArtifact art = hn_artifact_from_json(env.at("payload"));
        const HnLayers layers = kind == "hn-top" ? HnLayers::top_only : HnLayers::all;
        for (const auto& r : recs)
            rows.push_back(hn_extract(art.scaler.apply(truncate_and_pad(r.series, window)),
                                      art.model, layers));
    } else {
        throw ConfigError("extract: kind must be timenet|hn-top|hn-all, got '" + kind + "'");
    }

    std::string csv = "# config_hash=" + config_hash(cfg) + "\n";
    for (std::size_t i = 0; i < recs.size(); ++i) {
        csv += recs[i].patient_id + ":" + std::to_string(recs[i].episode_index);
        for (double v : rows[i]) csv += "," + fmt_double(v);
        csv += "\n";
    }
    write_text_file(out / "features.csv", csv);
}

inline void cmd_train_lasso(const json& cfg, const std::filesystem::path& out) {
    const DatasetSplit split = load_bundle(cfg.at("dataset").get<std::string>());
    const std::string task = cfg.at("task").get<std::string>();
    const std::size_t window = cfg.value("window", 48);
    const json env = load_checkpoint(cfg.at("ae_checkpoint").get<std::string>(), "autoencoder");
    const Seq2SeqParams ae = seq2seq_from_json(env.at("payload"));

    const ChannelScaler scaler = detail::fit_scaler_on_windows(split.train, window);
    const Matrix x_train =
        detail::rows_to_matrix(split_features_timenet(split.train, scaler, ae.encoder, window));
    const Vec y_train = detail::labels_for(split.train, task);

    SolverConfig solver;
    SolverResult best;
    double chosen_alpha;
    if (cfg.contains("alpha_grid")) {
        if (split.validation.empty())
            throw DataError("alpha grid tuning needs a validation split");
        const Matrix x_val = detail::rows_to_matrix(
            split_features_timenet(split.validation, scaler, ae.encoder, window));
        const Vec y_val = detail::labels_for(split.validation, task);
        auto tuned =
            tune_lasso(x_train, y_train, x_val, y_val, grid_from_json(cfg["alpha_grid"]), solver);
        best = std::move(tuned.best);
        chosen_alpha = tuned.best_value;
    } else {
        chosen_alpha = cfg.value("alpha", 1e-4);
        best = train_lasso(x_train, y_train, chosen_alpha, solver);
    }
    best.model.layout = FeatureLayout::channels(split.train.front().series.num_channels(),
                                                ae.encoder.total_units(),
                                                split.train.front().series.channel_names);
    save_model_file(out / "model.json", best.model, config_hash(cfg));
    json info{{"alpha", chosen_alpha},
              {"objective", best.objective},
              {"iterations", best.iterations},
              {"converged", best.converged},
              {"sparsity", sparsity_fraction(best.model)},
              {"config_hash", config_hash(cfg)}};
    write_text_file(out / "train_info.json", info.dump());
}

inline void cmd_train_lr(const json& cfg, const std::filesystem::path& out) {
    const DatasetSplit split = load_bundle(cfg.at("dataset").get<std::string>());
    const std::string task = cfg.at("task").get<std::string>();
    const std::size_t window = cfg.value("window", 48);
    const std::string layers_name = cfg.value("layers", "all");
    const HnLayers layers = layers_name == "top" ? HnLayers::top_only : HnLayers::all;

    const json env = load_checkpoint(cfg.at("hn_checkpoint").get<std::string>(), "healthnet");
    const HnArtifact art = hn_artifact_from_json(env.at("payload"));
    detail::require_unseen_task(art, task);

    auto feats = [&](const std::vector<EpisodeRecord>& recs) {
        std::vector<Vec> rows;
        for (const auto& r : recs)
            rows.push_back(hn_extract(art.scaler.apply(truncate_and_pad(r.series, window)),
                                      art.model, layers));
        return rows;
    };
    const Matrix x_train = detail::rows_to_matrix(feats(split.train));
    const Vec y_train = detail::labels_for(split.train, task);

    SolverConfig solver;
    SolverResult best;
    double chosen_lambda;
    if (cfg.contains("lambda")) {
        chosen_lambda = cfg.at("lambda").get<double>();
        best = train_l1_logreg(x_train, y_train, chosen_lambda, solver);
    } else {
        if (split.validation.empty())
            throw DataError("lambda grid tuning needs a validation split");
        const Matrix x_val = detail::rows_to_matrix(feats(split.validation));
        const Vec y_val = detail::labels_for(split.validation, task);
        std::vector<double> grid = {0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0};
        if (cfg.contains("lambda_grid")) grid = grid_from_json(cfg["lambda_grid"]);
        auto tuned = tune_l1_logreg(x_train, y_train, x_val, y_val, grid, solver);
        best = std::move(tuned.best);
        chosen_lambda = tuned.best_value;
    }
    save_model_file(out / "model.json", best.model, config_hash(cfg));
    json info{{"lambda", chosen_lambda},
              {"objective", best.objective},
              {"iterations", best.iterations},
              {"converged", best.converged},
              {"sparsity", sparsity_fraction(best.model)},
              {"config_hash", config_hash(cfg)}};
    write_text_file(out / "train_info.json", info.dump());
}

inline void cmd_evaluate(const json& cfg, const std::filesystem::path& out) {
    json plan_json = cfg;
    plan_json["methods"] = json::array({cfg.at("method").get<std::string>()});
    plan_json["tasks"] = json::array({cfg.at("task").get<std::string>()});
    plan_json["fractions"] = json::array({cfg.value("fraction", 1.0)});
    plan_json["seeds"] = json::array({cfg.value("seed", 1ULL)});
    plan_json.erase("method");
    plan_json.erase("task");
    plan_json.erase("fraction");
    plan_json.erase("seed");
    const ExperimentPlan plan = parse_plan(plan_json);
    const MatrixContext ctx = load_matrix_context(plan);
    const MatrixRunResult res = run_experiment_matrix(ctx);
    json metrics{{"format", "tsadapt-metrics-1"},
                 {"config_hash", config_hash(cfg)},
                 {"cell", cell_to_json(res.cells.front())}};
    write_text_file(out / "metrics.json", metrics.dump());
}

inline void cmd_sweep(const json& cfg, const std::filesystem::path& out) {
    const ExperimentPlan plan = parse_plan(cfg);
    const MatrixContext ctx = load_matrix_context(plan);
    const MatrixRunResult res = run_experiment_matrix(ctx);
    write_matrix_report(res, out);
}

inline void cmd_relevance(const std::filesystem::path& model_path,
                          const std::filesystem::path& out_file) {
    const json envelope = load_json_file(model_path);
    if (envelope.value("format", "") != "tsadapt-model-1")
        throw DataError(model_path.string() + ": unknown model format");
    const SparseLinearModel model = sparse_linear_from_json(envelope.at("model"));
    const RelevanceReport rep = relevance(model);

    std::vector<std::size_t> order(rep.raw.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (rep.normalized[a] != rep.normalized[b]) return rep.normalized[a] > rep.normalized[b];
        return a < b;
    });
    std::string csv = "# config_hash=" + envelope.value("config_hash", "") + "\n";
    csv += "channel,raw,normalized\n";
    for (std::size_t j : order)
        csv += rep.channel_names[j] + "," + fmt_double(rep.raw[j]) + "," +
               fmt_double(rep.normalized[j]) + "\n";
    write_text_file(out_file, csv);
}

inline void cmd_report(const json& cfg, const std::filesystem::path& out) {
    const std::filesystem::path report_path = cfg.at("report").get<std::string>();
    if (!std::filesystem::exists(report_path))
        throw ConfigError("missing report: " + report_path.string());
    const json report = load_json_file(report_path);
    std::string summary = "# config_hash=" + report.value("config_hash", "") + "\n";
    summary += summarize_report(report);
    write_text_file(out / "summary.csv", summary);
}

} // namespace cli_detail

/// Entry point shared by the tools binary and the test suites. Exit codes:
/// 0 success, 1 domain/data error, 2 configuration error.
inline int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Transfer-learning pipelines for multivariate time-series classification"};
    app.require_subcommand(1);

    std::string config_path, out_path, model_path;
    std::int64_t seed_override = -1;

    struct SubSpec {
        const char* name;
        const char* desc;
        bool needs_config;
    };
    const std::vector<SubSpec> specs = {
        {"synth-data", "generate a synthetic multi-task dataset bundle", true},
        {"load-data", "convert a benchmark-layout CSV dataset into a bundle", true},
        {"pretrain-ae", "pre-train the sequence autoencoder feature extractor", true},
        {"pretrain-hn", "pre-train the multi-task RNN on source tasks", true},
        {"extract", "write per-instance feature vectors as CSV", true},
        {"train-lasso", "train a LASSO classifier on autoencoder features", true},
        {"train-lr", "train an L1 logistic classifier on frozen RNN features", true},
        {"finetune", "fine-tune a pre-trained RNN for a target task", true},
        {"train-rnnc", "train the from-scratch RNN baseline", true},
        {"evaluate", "run a single evaluation cell", true},
        {"sweep", "run the full experiment matrix", true},
        {"report", "summarize a sweep report", true},
    };
    for (const auto& spec : specs) {
        CLI::App* sub = app.add_subcommand(spec.name, spec.desc);
        sub->add_option("--config", config_path, "JSON config file")->required(spec.needs_config);
        sub->add_option("--out", out_path, "output directory")->required();
        sub->add_option("--seed", seed_override, "override the config seed");
    }
    CLI::App* rel = app.add_subcommand("relevance", "export per-channel relevance scores");
    rel->add_option("--model", model_path, "sparse linear model JSON")->required();
    rel->add_option("--out", out_path, "output CSV file")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const std::string sub = app.get_subcommands().front()->get_name();
        if (sub == "relevance") {
            cli_detail::cmd_relevance(model_path, out_path);
            return 0;
        }
        json cfg = load_json_file(config_path);
        if (seed_override >= 0) {
            cfg["seed"] = static_cast<std::uint64_t>(seed_override);
            if (cfg.contains("seeds"))
                cfg["seeds"] = json::array({static_cast<std::uint64_t>(seed_override)});
        }
        const std::filesystem::path out = out_path;
        std::filesystem::create_directories(out);

        if (sub == "synth-data") cli_detail::cmd_synth_data(cfg, out);
        else if (sub == "load-data") cli_detail::cmd_load_data(cfg, out);
        else if (sub == "pretrain-ae") cli_detail::cmd_pretrain_ae(cfg, out);
        else if (sub == "pretrain-hn") cli_detail::cmd_pretrain_hn(cfg, out);
        else if (sub == "extract") cli_detail::cmd_extract(cfg, out);
        else if (sub == "train-lasso") cli_detail::cmd_train_lasso(cfg, out);
        else if (sub == "train-lr") cli_detail::cmd_train_lr(cfg, out);
        else if (sub == "finetune") cli_detail::cmd_finetune(cfg, out);
        else if (sub == "train-rnnc") cli_detail::cmd_train_rnnc(cfg, out);
        else if (sub == "evaluate") cli_detail::cmd_evaluate(cfg, out);
        else if (sub == "sweep") cli_detail::cmd_sweep(cfg, out);
        else if (sub == "report") cli_detail::cmd_report(cfg, out);
        else throw ConfigError("unknown subcommand " + sub);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace tsadapt
