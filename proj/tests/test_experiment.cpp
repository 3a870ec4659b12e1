#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "tsadapt/cli.hpp"
#include "tsadapt/experiment.hpp"

using namespace tsadapt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_json(const fs::path& p, const json& j) { write_text_file(p, j.dump()); }

/// Small end-to-end workspace: bundle + AE + HN checkpoints, built once.
struct Workspace {
    TempDir dir{"tsadapt_test_experiment"};
    json synth_cfg;

    Workspace() {
        synth_cfg = {{"n_channels", 4}, {"n_tasks", 4},  {"n_source_tasks", 3},
                     {"n_train", 48},   {"n_val", 24},   {"n_test", 32},
                     {"tau", 16},       {"seed", 1},     {"noise_sigma", 0.4},
                     {"template_norm", 1.4}};
        write_json(dir.path / "synth.json", synth_cfg);
        REQUIRE(run_cli({"synth-data", "--config", (dir.path / "synth.json").string(), "--out",
                         (dir.path / "data").string()}) == 0);

        const json ae_cfg = {{"widths", json::array({4})}, {"epochs", 5},
                             {"batch_size", 8},            {"lr", 0.02},
                             {"corpus", json{{"count", 12}, {"len_min", 8}, {"len_max", 16}}},
                             {"seed", 2}};
        write_json(dir.path / "ae.json", ae_cfg);
        REQUIRE(run_cli({"pretrain-ae", "--config", (dir.path / "ae.json").string(), "--out",
                         (dir.path / "ae").string()}) == 0);

        const json hn_cfg = {{"dataset", (dir.path / "data").string()},
                             {"widths", json::array({6, 6})},
                             {"max_epochs", 4},
                             {"patience", 10},
                             {"batch_size", 16},
                             {"lr", 0.02},
                             {"dropout", 0.0},
                             {"window", 16},
                             {"seed", 1}};
        write_json(dir.path / "hn.json", hn_cfg);
        REQUIRE(run_cli({"pretrain-hn", "--config", (dir.path / "hn.json").string(), "--out",
                         (dir.path / "hn").string()}) == 0);
    }

    json base_plan() const {
        return json{{"dataset", (dir.path / "data").string()},
                    {"ae_checkpoint", (dir.path / "ae" / "ae.json").string()},
                    {"hn_checkpoints", json{{"1", (dir.path / "hn" / "hn.json").string()}}},
                    {"tasks", json::array({"tgt1"})},
                    {"fractions", json::array({1.0})},
                    {"seeds", json::array({1})},
                    {"window", 16},
                    {"rnn", json{{"widths", json::array({6})},
                                 {"max_epochs", 3},
                                 {"batch_size", 16},
                                 {"lr", 0.02},
                                 {"dropout", 0.0}}},
                    {"finetune", json{{"max_epochs", 3},
                                      {"batch_size", 16},
                                      {"lr", 0.01},
                                      {"dropout", 0.0},
                                      {"lambda", 0.01}}},
                    {"lasso", json{{"alpha", 0.001}}},
                    {"threads", 2}};
    }
};

Workspace& workspace() {
    static Workspace ws;
    return ws;
}

} // namespace

TEST_CASE("plan parsing rejects unknown methods") {
    json plan = {{"dataset", "x"}, {"methods", json::array({"Nonsense"})},
                 {"tasks", json::array({"t"})}};
    CHECK_THROWS_AS(parse_plan(plan), ConfigError);
}

TEST_CASE("grid specs parse both shapes") {
    CHECK(grid_from_json(json::array({0.1, 0.2})) == std::vector<double>{0.1, 0.2});
    const auto lin = grid_from_json(json{{"min", 1e-5}, {"max", 1e-3}, {"count", 5}});
    CHECK(lin.size() == 5);
    CHECK(lin[1] == Catch::Approx(2.575e-4));
    const auto lg =
        grid_from_json(json{{"min", 0.1}, {"max", 1e4}, {"count", 6}, {"spacing", "log"}});
    CHECK(lg[1] == Catch::Approx(1.0).epsilon(1e-9));
    CHECK_THROWS_AS(grid_from_json(json{{"min", 1.0}, {"max", 2.0}, {"spacing", "cubic"}}),
                    ConfigError);
}

TEST_CASE("windowed mean score composes enumerate_windows + predict + mean") {
    Rng rng(3);
    GruStackParams enc = GruStackParams::init(1, {3}, 0.0, rng);
    SparseLinearModel model;
    model.w.assign(2 * 3, 0.0);
    for (auto& v : model.w) v = rng.normal();
    model.intercept = 0.2;
    model.loss_kind = LinearLoss::squared;

    MultivariateSeries s;
    s.channel_names = {"a", "b"};
    s.values = Matrix(2, 96);
    for (auto& v : s.values.data) v = rng.normal();

    auto score_one = [&](const MultivariateSeries& w) {
        return predict_proba(model, extract_features_multichannel(truncate_and_pad(w, 48), enc));
    };
    const double got = windowed_mean_score(score_one, s, 48, 24);

    const auto wins = enumerate_windows(s, 48, 24);
    REQUIRE(wins.size() == 4);
    double expected = 0.0;
    for (const auto& w : wins)
        expected += predict_proba(model, extract_features_multichannel(w, enc));
    expected /= 4.0;
    CHECK(got == expected);
}

TEST_CASE("single-cell plan produces exactly one report row") {
    auto& ws = workspace();
    json plan = ws.base_plan();
    plan["methods"] = json::array({"LR"});
    const MatrixContext ctx = load_matrix_context(parse_plan(plan));
    const MatrixRunResult res = run_experiment_matrix(ctx);
    REQUIRE(res.cells.size() == 1);
    CHECK(res.cells[0].key.method == "LR");
    CHECK(res.cells[0].metrics.auroc.has_value());
}

TEST_CASE("matrix results are identical across runs and worker counts") {
    auto& ws = workspace();
    json plan = ws.base_plan();
    plan["methods"] = json::array({"LR", "TimeNet-48", "HN-LR-2"});
    plan["fractions"] = json::array({1.0, 0.5});

    json serial = plan;
    serial["threads"] = 1;
    const MatrixRunResult a = run_experiment_matrix(load_matrix_context(parse_plan(plan)));
    const MatrixRunResult b = run_experiment_matrix(load_matrix_context(parse_plan(serial)));
    // thread count is config, so hashes differ, but every cell is bit-identical
    REQUIRE(a.cells.size() == b.cells.size());
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        CHECK(a.cells[i].key.method == b.cells[i].key.method);
        CHECK(*a.cells[i].metrics.auroc == *b.cells[i].metrics.auroc);
        CHECK(*a.cells[i].metrics.auprc == *b.cells[i].metrics.auprc);
        if (a.cells[i].sparsity) CHECK(*a.cells[i].sparsity == *b.cells[i].sparsity);
    }
}

TEST_CASE("every method family runs end to end") {
    auto& ws = workspace();
    json plan = ws.base_plan();
    plan["methods"] = json::array({"LR", "RNN-C", "TimeNet-48", "TimeNet-All", "TimeNet-48-Eps",
                                   "TimeNet-All-Eps", "HN-Tune", "HN-L1", "HN-L2", "HN-LR-1",
                                   "HN-LR-2"});
    const MatrixRunResult res = run_experiment_matrix(load_matrix_context(parse_plan(plan)));
    REQUIRE(res.cells.size() == 11);
    for (const auto& c : res.cells) {
        INFO(c.key.method);
        CHECK(c.metrics.auroc.has_value());
        CHECK(c.metrics.n_pos + c.metrics.n_neg == 32);
    }
    // linear-model methods report sparsity, RNN methods do not
    for (const auto& c : res.cells) {
        const bool linear = c.key.method == "LR" || c.key.method.rfind("TimeNet", 0) == 0 ||
                            c.key.method.rfind("HN-LR", 0) == 0;
        CHECK(c.sparsity.has_value() == linear);
    }
}

TEST_CASE("missing checkpoints are configuration errors naming the artifact") {
    auto& ws = workspace();
    json plan = ws.base_plan();
    plan["methods"] = json::array({"HN-L1"});
    plan["seeds"] = json::array({7}); // no checkpoint for seed 7
    CHECK_THROWS_MATCHES(load_matrix_context(parse_plan(plan)), ConfigError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("seed 7")));

    json plan2 = ws.base_plan();
    plan2["methods"] = json::array({"TimeNet-48"});
    plan2.erase("ae_checkpoint");
    CHECK_THROWS_AS(load_matrix_context(parse_plan(plan2)), ConfigError);
}

TEST_CASE("target task must be absent from the pre-training manifest") {
    auto& ws = workspace();
    json plan = ws.base_plan();
    plan["methods"] = json::array({"HN-LR-1"});
    plan["tasks"] = json::array({"src1"});
    const MatrixContext ctx = load_matrix_context(parse_plan(plan));
    CHECK_THROWS_AS(run_experiment_matrix(ctx), ConfigError); // wraps the cell's DataError
}

TEST_CASE("cli sweep artifacts are deterministic and carry the pinned columns") {
    auto& ws = workspace();
    json plan = ws.base_plan();
    plan["methods"] = json::array({"TimeNet-48", "HN-LR-2"});
    write_json(ws.dir.path / "plan.json", plan);

    REQUIRE(run_cli({"sweep", "--config", (ws.dir.path / "plan.json").string(), "--out",
                     (ws.dir.path / "run1").string()}) == 0);
    REQUIRE(run_cli({"sweep", "--config", (ws.dir.path / "plan.json").string(), "--out",
                     (ws.dir.path / "run2").string()}) == 0);

    const std::string r1 = read_text_file(ws.dir.path / "run1" / "report.json");
    const std::string r2 = read_text_file(ws.dir.path / "run2" / "report.json");
    CHECK(r1 == r2);
    const std::string c1 = read_text_file(ws.dir.path / "run1" / "curves.csv");
    const std::string c2 = read_text_file(ws.dir.path / "run2" / "curves.csv");
    CHECK(c1 == c2);
    CHECK(c1.find("method,task,fraction,seed,auroc\n") != std::string::npos);

    // report summarization runs off the report file
    const json report_cfg = {{"report", (ws.dir.path / "run1" / "report.json").string()}};
    write_json(ws.dir.path / "report_cfg.json", report_cfg);
    REQUIRE(run_cli({"report", "--config", (ws.dir.path / "report_cfg.json").string(), "--out",
                     (ws.dir.path / "summary").string()}) == 0);
    const std::string summary = read_text_file(ws.dir.path / "summary" / "summary.csv");
    CHECK(summary.find("auroc_mean") != std::string::npos);
    CHECK(summary.find("TimeNet-48,tgt1,1") != std::string::npos);
}

TEST_CASE("evaluate reproduces the matching sweep cell bit-exactly") {
    auto& ws = workspace();
    json plan = ws.base_plan();
    plan["methods"] = json::array({"TimeNet-48"});
    write_json(ws.dir.path / "plan_eval.json", plan);
    REQUIRE(run_cli({"sweep", "--config", (ws.dir.path / "plan_eval.json").string(), "--out",
                     (ws.dir.path / "sweep_eval").string()}) == 0);

    json eval_cfg = ws.base_plan();
    eval_cfg.erase("tasks");
    eval_cfg.erase("fractions");
    eval_cfg.erase("seeds");
    eval_cfg["method"] = "TimeNet-48";
    eval_cfg["task"] = "tgt1";
    eval_cfg["fraction"] = 1.0;
    eval_cfg["seed"] = 1;
    write_json(ws.dir.path / "eval.json", eval_cfg);
    REQUIRE(run_cli({"evaluate", "--config", (ws.dir.path / "eval.json").string(), "--out",
                     (ws.dir.path / "eval_out").string()}) == 0);

    const json report = load_json_file(ws.dir.path / "sweep_eval" / "report.json");
    const json metrics = load_json_file(ws.dir.path / "eval_out" / "metrics.json");
    const json& cell_sweep = report.at("cells")[0];
    const json& cell_eval = metrics.at("cell");
    CHECK(cell_eval.at("auroc") == cell_sweep.at("auroc"));
    CHECK(cell_eval.at("auprc") == cell_sweep.at("auprc"));
    CHECK(cell_eval.at("min_se_pp") == cell_sweep.at("min_se_pp"));
    CHECK(cell_eval.at("sparsity") == cell_sweep.at("sparsity"));
}

TEST_CASE("cli error codes") {
    SECTION("unknown subcommand exits 2") {
        CHECK(run_cli({"frobnicate"}) == 2);
    }
    SECTION("missing config file exits 2") {
        CHECK(run_cli({"sweep", "--config", "/nonexistent/plan.json", "--out", "/tmp/x"}) == 2);
    }
    SECTION("domain errors exit 1") {
        TempDir dir("tsadapt_test_cli_err");
        write_json(dir.path / "bad_synth.json", json{{"n_tasks", 1}});
        CHECK(run_cli({"synth-data", "--config", (dir.path / "bad_synth.json").string(), "--out",
                       (dir.path / "out").string()}) == 1);
    }
}

TEST_CASE("cli relevance export is sorted by normalized relevance") {
    auto& ws = workspace();
    const json cfg = {{"dataset", (ws.dir.path / "data").string()},
                      {"ae_checkpoint", (ws.dir.path / "ae" / "ae.json").string()},
                      {"task", "tgt1"},
                      {"window", 16},
                      {"alpha", 0.001}};
    write_json(ws.dir.path / "lasso_cfg.json", cfg);
    REQUIRE(run_cli({"train-lasso", "--config", (ws.dir.path / "lasso_cfg.json").string(), "--out",
                     (ws.dir.path / "lasso").string()}) == 0);
    REQUIRE(run_cli({"relevance", "--model", (ws.dir.path / "lasso" / "model.json").string(),
                     "--out", (ws.dir.path / "rel.csv").string()}) == 0);
    std::ifstream in(ws.dir.path / "rel.csv");
    std::string line;
    std::getline(in, line); // config hash comment
    std::getline(in, line);
    CHECK(line == "channel,raw,normalized");
    double prev = 2.0;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        const auto comma = line.rfind(',');
        const double norm = std::stod(line.substr(comma + 1));
        CHECK(norm <= prev);
        prev = norm;
        ++rows;
    }
    CHECK(rows == 4); // one per raw channel
}
