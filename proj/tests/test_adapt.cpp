#include <catch2/catch_amalgamated.hpp>

#include "tsadapt/adapt.hpp"
#include "tsadapt/multitask.hpp"

using namespace tsadapt;

namespace {

Matrix random_features(std::size_t n, std::size_t m, Rng& rng) {
    Matrix x(n, m);
    for (auto& v : x.data) v = rng.normal();
    return x;
}

HealthNetModel tiny_healthnet(std::size_t channels, const std::vector<std::size_t>& widths,
                              Rng& rng) {
    HealthNetModel m;
    m.stack = GruStackParams::init(channels, widths, 0.0, rng);
    m.head.w = glorot_init(2, widths.back(), rng);
    m.head.b.assign(2, 0.0);
    m.tasks = {"srcA", "srcB"};
    return m;
}

} // namespace

TEST_CASE("lasso with a dominating penalty returns exactly zero weights") {
    Rng rng(3);
    Matrix x = random_features(20, 6, rng);
    Vec y(20);
    for (std::size_t i = 0; i < 20; ++i) y[i] = (i % 3 == 0) ? 1.0 : 0.0;
    const SolverResult res = train_lasso(x, y, 1e6);
    for (double w : res.model.w) CHECK(w == 0.0);
    // intercept alone: least-squares minimizer is the class prior
    double prior = 0.0;
    for (double v : y) prior += v;
    prior /= 20.0;
    CHECK(res.model.intercept == Catch::Approx(prior).margin(1e-6));
}

TEST_CASE("lasso matches the single-feature closed form") {
    // (1/N) sum z^2 = 1, (1/N) sum zy = 1, alpha = 1, no intercept -> w = 1 - alpha/2
    Matrix x(2, 1);
    x(0, 0) = 1.0;
    x(1, 0) = -1.0;
    const Vec y = {1.0, -1.0};
    SolverConfig cfg;
    cfg.fit_intercept = false;
    const SolverResult res = train_lasso(x, y, 1.0, cfg);
    CHECK(res.model.w[0] == Catch::Approx(0.5).margin(1e-6));
    CHECK(res.converged);
}

TEST_CASE("lasso closed form across random standardized problems") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 30;
        Matrix x(n, 1);
        double m2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            x(i, 0) = rng.normal();
            m2 += x(i, 0) * x(i, 0);
        }
        // standardize so (1/N) sum z^2 == 1 exactly
        const double scale = std::sqrt(static_cast<double>(n) / m2);
        for (std::size_t i = 0; i < n; ++i) x(i, 0) *= scale;
        Vec y(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        double rho = 0.0;
        for (std::size_t i = 0; i < n; ++i) rho += x(i, 0) * y[i];
        rho /= static_cast<double>(n);

        const double alpha = 0.05 + 0.2 * rng.uniform();
        SolverConfig cfg;
        cfg.fit_intercept = false;
        const SolverResult res = train_lasso(x, y, alpha, cfg);
        const double expected =
            (rho > alpha / 2.0) ? rho - alpha / 2.0 : (rho < -alpha / 2.0 ? rho + alpha / 2.0 : 0.0);
        CHECK(res.model.w[0] == Catch::Approx(expected).margin(1e-6));
    }
}

TEST_CASE("lasso satisfies KKT conditions on random problems") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        Matrix x = random_features(50, 20, rng);
        Vec y(50);
        for (auto& v : y) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
        const SolverResult res = train_lasso(x, y, 0.05);
        CHECK(kkt_violation(x, y, res.model) < 1e-6);
        CHECK(res.converged);
    }
}

TEST_CASE("lasso input validation") {
    Rng rng(9);
    Matrix x = random_features(10, 3, rng);
    Vec y(10, 1.0);
    CHECK_THROWS_AS(train_lasso(x, y, 0.1), DomainError); // single class
    y[0] = 0.0;
    x(3, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(train_lasso(x, y, 0.1), DataError);
}

TEST_CASE("l1 logistic regression") {
    Rng rng(11);
    SECTION("dominating penalty leaves only the intercept, matching the prior") {
        Matrix x = random_features(40, 5, rng);
        Vec y(40);
        for (std::size_t i = 0; i < 40; ++i) y[i] = (i < 12) ? 1.0 : 0.0;
        const SolverResult res = train_l1_logreg(x, y, 1e6);
        for (double w : res.model.w) CHECK(w == 0.0);
        CHECK(sigmoid(res.model.intercept) == Catch::Approx(0.3).margin(1e-3));
    }
    SECTION("separable two-feature set reaches training accuracy 1.0") {
        Matrix x(20, 2);
        Vec y(20);
        Rng r(13);
        for (std::size_t i = 0; i < 20; ++i) {
            const bool pos = i < 10;
            x(i, 0) = (pos ? 2.0 : -2.0) + 0.2 * r.normal();
            x(i, 1) = r.normal();
            y[i] = pos ? 1.0 : 0.0;
        }
        const SolverResult res = train_l1_logreg(x, y, 0.1);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < 20; ++i) {
            Vec row(x.row(i), x.row(i) + 2);
            correct += (predict_proba(res.model, row) >= 0.5) == (y[i] == 1.0);
        }
        CHECK(correct == 20);
    }
    SECTION("returned objective never exceeds the zero start") {
        Matrix x = random_features(25, 8, rng);
        Vec y(25);
        for (auto& v : y) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
        y[0] = 1.0;
        y[1] = 0.0;
        const SolverResult res = train_l1_logreg(x, y, 0.5);
        detail::ProximalProblem prob{x, y, LinearLoss::logistic, 0.5, true};
        CHECK(res.objective <= prob.objective(Vec(8, 0.0), 0.0) + 1e-15);
        CHECK(kkt_violation(x, y, res.model) < 1e-6);
    }
}

TEST_CASE("relevance scores") {
    SECTION("forced example") {
        SparseLinearModel m;
        m.w = {0.3, -0.2, 0.0, 0.0};
        m.layout = FeatureLayout::channels(2, 2, {"glucose", "pulse"});
        const RelevanceReport rep = relevance(m);
        CHECK(rep.raw[0] == 0.5);
        CHECK(rep.raw[1] == 0.0);
        CHECK(rep.normalized[0] == 1.0);
        CHECK(rep.normalized[1] == 0.0);
        CHECK(rep.channel_names[0] == "glucose");
    }
    SECTION("all-zero weights normalize to all zeros") {
        SparseLinearModel m;
        m.w.assign(6, 0.0);
        m.layout = FeatureLayout::channels(3, 2);
        const RelevanceReport rep = relevance(m);
        for (double v : rep.raw) CHECK(v == 0.0);
        for (double v : rep.normalized) CHECK(v == 0.0);
    }
    SECTION("random weights match the absolute-sum oracle") {
        Rng rng(17);
        SparseLinearModel m;
        m.w.resize(15);
        for (auto& v : m.w) v = rng.normal();
        m.layout = FeatureLayout::channels(5, 3);
        const RelevanceReport rep = relevance(m);
        for (std::size_t j = 0; j < 5; ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < 3; ++k) sum += std::abs(m.w[j * 3 + k]);
            CHECK(std::abs(rep.raw[j] - sum) < 1e-12);
        }
    }
    SECTION("flat layout is a domain error") {
        SparseLinearModel m;
        m.w = {0.1, 0.2};
        CHECK_THROWS_AS(relevance(m), DomainError);
    }
}

TEST_CASE("predict_proba") {
    SECTION("zero squared-loss model clamps the zero score to 0") {
        SparseLinearModel m;
        m.w.assign(3, 0.0);
        m.loss_kind = LinearLoss::squared;
        CHECK(predict_proba(m, {1.0, -2.0, 0.5}) == 0.0);
    }
    SECTION("logistic model with unit score") {
        SparseLinearModel m;
        m.w = {1.0};
        m.loss_kind = LinearLoss::logistic;
        CHECK(std::abs(predict_proba(m, {1.0}) - 0.7310585786) < 1e-9);
    }
    SECTION("uniform softmax head gives 0.5") {
        Rng rng(19);
        FinetunedModel m;
        m.stack = GruStackParams::init(2, {3}, 0.0, rng);
        m.head_w = Matrix(2, 3);
        m.head_b.assign(2, 0.0);
        MultivariateSeries x;
        x.values = Matrix(2, 4, 0.3);
        CHECK(predict_proba(m, x) == 0.5);
    }
    SECTION("dimension mismatch is a data error") {
        SparseLinearModel m;
        m.w = {1.0, 2.0};
        CHECK_THROWS_AS(predict_proba(m, {1.0}), DataError);
    }
    SECTION("monotone in the linear score") {
        SparseLinearModel lin, logi;
        lin.w = {1.0};
        lin.loss_kind = LinearLoss::squared;
        logi.w = {1.0};
        logi.loss_kind = LinearLoss::logistic;
        double prev_lin = -1.0, prev_log = -1.0;
        for (double z = -3.0; z <= 3.0; z += 0.25) {
            CHECK(predict_proba(lin, {z}) >= prev_lin);
            CHECK(predict_proba(logi, {z}) >= prev_log);
            prev_lin = predict_proba(lin, {z});
            prev_log = predict_proba(logi, {z});
        }
    }
}

TEST_CASE("grid helpers") {
    const auto lin = linear_grid(1e-5, 1e-3, 5);
    CHECK(lin.size() == 5);
    CHECK(lin.front() == Catch::Approx(1e-5));
    CHECK(lin.back() == Catch::Approx(1e-3));
    const auto lg = log_grid(0.1, 1e4, 6);
    CHECK(lg.size() == 6);
    CHECK(lg[1] == Catch::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("finetune penalty values and gradients") {
    Rng rng(23);
    HealthNetModel hn = tiny_healthnet(2, {3, 3}, rng);

    SECTION("penalty gradients: ff blocks only, matching sign/2w forms") {
        const double lambda = 0.01;
        for (RegKind reg : {RegKind::l1, RegKind::l2}) {
            const StackGrads g = finetune_penalty_grads(hn.stack, reg, lambda);
            for (std::size_t l = 0; l < hn.stack.layers.size(); ++l) {
                const auto& p = hn.stack.layers[l];
                const auto& gl = g.layers[l];
                for (std::size_t i = 0; i < p.w_reset_ff.size(); ++i) {
                    const double w = p.w_reset_ff.data[i];
                    const double expected =
                        reg == RegKind::l1 ? lambda * (w > 0 ? 1.0 : (w < 0 ? -1.0 : 0.0))
                                           : 2.0 * lambda * w;
                    CHECK(gl.w_reset_ff.data[i] == Catch::Approx(expected).margin(1e-15));
                }
                for (double v : gl.w_reset_rec.data) CHECK(v == 0.0);
                for (double v : gl.w_update_rec.data) CHECK(v == 0.0);
                for (double v : gl.w_cand_rec.data) CHECK(v == 0.0);
                for (double v : gl.b_reset) CHECK(v == 0.0);
            }
        }
    }
    SECTION("penalty gradient matches finite differences of the penalty value") {
        const double lambda = 0.01;
        const double step = 1e-6;
        for (RegKind reg : {RegKind::l1, RegKind::l2}) {
            const StackGrads g = finetune_penalty_grads(hn.stack, reg, lambda);
            // one ff weight and one rec weight
            double& w_ff = hn.stack.layers[0].w_cand_ff.data[1];
            const double base_ff = w_ff;
            w_ff = base_ff + step;
            const double up = finetune_penalty_value(hn.stack, reg, lambda);
            w_ff = base_ff - step;
            const double down = finetune_penalty_value(hn.stack, reg, lambda);
            w_ff = base_ff;
            CHECK(std::abs((up - down) / (2 * step) - g.layers[0].w_cand_ff.data[1]) < 1e-6);

            double& w_rec = hn.stack.layers[1].w_update_rec.data[2];
            const double base_rec = w_rec;
            w_rec = base_rec + step;
            const double up2 = finetune_penalty_value(hn.stack, reg, lambda);
            w_rec = base_rec - step;
            const double down2 = finetune_penalty_value(hn.stack, reg, lambda);
            w_rec = base_rec;
            CHECK(std::abs((up2 - down2) / (2 * step)) < 1e-9);
        }
    }
}

TEST_CASE("finetune first-step gradients: recurrent blocks identical across lambda") {
    Rng init_rng(29);
    HealthNetModel hn = tiny_healthnet(2, {3, 3}, init_rng);
    hn.stack.dropout_rate = 0.3;

    std::vector<MultivariateSeries> storage;
    std::vector<LabeledInstance> batch;
    Rng data_rng(31);
    for (int i = 0; i < 6; ++i) {
        MultivariateSeries s;
        s.values = Matrix(2, 5);
        for (auto& v : s.values.data) v = data_rng.normal();
        storage.push_back(std::move(s));
    }
    for (int i = 0; i < 6; ++i)
        batch.push_back({&storage[i], {i % 2 == 0 ? 1.0 : 0.0}});

    // Identical model state (same head init) and identical dropout masks.
    Rng head_a(37), head_b(37);
    FinetunedModel a, b;
    a.stack = hn.stack;
    a.head_w = glorot_init(2, 3, head_a);
    a.head_b.assign(2, 0.0);
    b.stack = hn.stack;
    b.head_w = glorot_init(2, 3, head_b);
    b.head_b.assign(2, 0.0);

    Rng mask_a(41), mask_b(41);
    FinetuneBatchGrads ga = finetune_batch_gradients(a, batch, RunMode::train, mask_a);
    FinetuneBatchGrads gb = finetune_batch_gradients(b, batch, RunMode::train, mask_b);
    // data-loss gradients are bit-identical
    ga.stack.add(finetune_penalty_grads(a.stack, RegKind::none, 0.0));
    gb.stack.add(finetune_penalty_grads(b.stack, RegKind::l1, 0.01));
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(ga.stack.layers[l].w_reset_rec.data == gb.stack.layers[l].w_reset_rec.data);
        CHECK(ga.stack.layers[l].w_update_rec.data == gb.stack.layers[l].w_update_rec.data);
        CHECK(ga.stack.layers[l].w_cand_rec.data == gb.stack.layers[l].w_cand_rec.data);
        CHECK(ga.stack.layers[l].w_reset_ff.data != gb.stack.layers[l].w_reset_ff.data);
    }
}

TEST_CASE("finetune with zero epochs copies the stack bit-exactly") {
    Rng init_rng(43);
    HealthNetModel hn = tiny_healthnet(2, {4}, init_rng);
    std::vector<MultivariateSeries> storage;
    std::vector<LabeledInstance> data;
    MultivariateSeries s;
    s.values = Matrix(2, 3, 0.2);
    storage.push_back(s);
    data.push_back({&storage[0], {1.0}});

    RnnTrainConfig cfg;
    cfg.max_epochs = 0;
    cfg.dropout = hn.stack.dropout_rate;
    Rng rng(47);
    FinetuneResult res = finetune(hn, data, {}, RegKind::none, 0.0, cfg, rng);
    CHECK(flatten(res.model.stack) == flatten(hn.stack));
    Rng rng2(47);
    const Matrix head = glorot_init(2, 4, rng2);
    CHECK(res.model.head_w.data == head.data);
}

TEST_CASE("finetune warns when a regularizer is requested with lambda zero") {
    Rng init_rng(53);
    HealthNetModel hn = tiny_healthnet(2, {3}, init_rng);
    std::vector<MultivariateSeries> storage(2);
    storage[0].values = Matrix(2, 3, 0.1);
    storage[1].values = Matrix(2, 3, -0.1);
    std::vector<LabeledInstance> data = {{&storage[0], {1.0}}, {&storage[1], {0.0}}};
    RnnTrainConfig cfg;
    cfg.max_epochs = 1;
    cfg.dropout = 0.0;
    Rng rng(59);
    FinetuneResult res = finetune(hn, data, {}, RegKind::l1, 0.0, cfg, rng);
    REQUIRE(res.warnings.size() == 1);
}

TEST_CASE("grid tuning prefers the sparser model on ties") {
    // A pure-noise problem: every lambda gives w=0 on validation, so the
    // largest lambda must win.
    Rng rng(61);
    Matrix x = random_features(20, 4, rng);
    Vec y(20);
    for (std::size_t i = 0; i < 20; ++i) y[i] = (i % 2) ? 1.0 : 0.0;
    auto tuned = tune_l1_logreg(x, y, x, y, {1e5, 1e6});
    CHECK(tuned.best_value == 1e6);
}

TEST_CASE("sparsity fraction uses the 0.001 threshold strictly") {
    CHECK(sparsity_fraction({0.0, 0.0009, -0.0009, 0.001, 0.5}) == 0.6);
    CHECK(sparsity_fraction(Vec{}) == 0.0);
}
