#include <catch2/catch_amalgamated.hpp>

#include "tsadapt/metrics.hpp"
#include "tsadapt/multitask.hpp"

using namespace tsadapt;

namespace {

/// Two-channel toy set: the class is the sign of the channel mean.
struct ToySet {
    std::vector<MultivariateSeries> storage;
    std::vector<LabeledInstance> instances;
};

ToySet separable_toy(std::size_t n, std::size_t tau, Rng& rng) {
    ToySet set;
    set.storage.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = rng.bernoulli(0.5) ? 1 : 0;
        MultivariateSeries s;
        s.channel_names = {"c0", "c1"};
        s.values = Matrix(2, tau);
        const double shift = y ? 0.5 : -0.5;
        for (auto& v : s.values.data) v = shift + 0.3 * rng.normal();
        set.storage.push_back(std::move(s));
        set.instances.push_back({nullptr, {static_cast<double>(y)}});
    }
    for (std::size_t i = 0; i < n; ++i) set.instances[i].x = &set.storage[i];
    return set;
}

} // namespace

TEST_CASE("bce is zero (clamped) when the prediction equals the label") {
    CHECK(bce(1.0, 1.0) < 1e-12);
    CHECK(bce(0.0, 0.0) < 1e-12);
    CHECK(bce(1.0, 0.5) == Catch::Approx(std::log(2.0)).margin(1e-12));
    CHECK(std::isfinite(bce(1.0, 0.0)));
    CHECK(std::isfinite(bce(0.0, 1.0)));
}

TEST_CASE("multitask loss decomposes into independent per-task cross-entropies") {
    Rng rng(3);
    const std::size_t k = 4, n = 12;
    ToySet toy = separable_toy(n, 5, rng);
    // random K-bit labels
    for (auto& inst : toy.instances) {
        inst.y.resize(k);
        for (auto& y : inst.y) y = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    RnnTrainConfig cfg;
    cfg.widths = {3};
    cfg.max_epochs = 0;
    Rng train_rng(5);
    auto res = train_multitask(toy.instances, {}, {"t1", "t2", "t3", "t4"}, cfg, train_rng);

    const double joint = multitask_loss(res.model, toy.instances);
    double per_task_sum = 0.0;
    for (std::size_t task = 0; task < k; ++task) {
        double task_loss = 0.0;
        for (const auto& inst : toy.instances) {
            const Vec p = hn_predict(res.model, *inst.x);
            task_loss += bce(inst.y[task], p[task]);
        }
        per_task_sum += task_loss / static_cast<double>(n);
    }
    CHECK(std::abs(joint - per_task_sum / static_cast<double>(k)) < 1e-12);
}

TEST_CASE("separable toy task trains to high AUROC within 50 epochs") {
    Rng data_rng(7);
    ToySet train = separable_toy(60, 8, data_rng);
    RnnTrainConfig cfg;
    cfg.widths = {8};
    cfg.dropout = 0.0;
    cfg.lr = 0.02;
    cfg.batch_size = 8;
    cfg.max_epochs = 50;
    cfg.patience = 50;
    Rng rng(11);
    auto res = train_multitask(train.instances, {}, {"toy"}, cfg, rng);

    Vec scores;
    std::vector<int> labels;
    for (const auto& inst : train.instances) {
        scores.push_back(hn_predict(res.model, *inst.x)[0]);
        labels.push_back(inst.y[0] != 0.0 ? 1 : 0);
    }
    CHECK(*auroc(scores, labels) > 0.95);
}

TEST_CASE("zero epochs returns the initialization unchanged") {
    Rng data_rng(13);
    ToySet train = separable_toy(10, 4, data_rng);
    RnnTrainConfig cfg;
    cfg.widths = {4, 4};
    cfg.max_epochs = 0;
    Rng a(17);
    auto res = train_multitask(train.instances, {}, {"toy"}, cfg, a);

    Rng b(17);
    GruStackParams stack = GruStackParams::init(2, cfg.widths, cfg.dropout, b);
    Matrix head_w = glorot_init(1, 4, b);
    CHECK(flatten(res.model.stack) == flatten(stack));
    CHECK(res.model.head.w.data == head_w.data);
    CHECK(res.model.head.b == Vec{0.0});
    CHECK(res.train_loss.empty());
}

TEST_CASE("label vector length mismatches are data errors") {
    Rng data_rng(19);
    ToySet train = separable_toy(4, 3, data_rng);
    train.instances[2].y = {1.0, 0.0}; // wrong K
    RnnTrainConfig cfg;
    cfg.widths = {3};
    Rng rng(1);
    CHECK_THROWS_AS(train_multitask(train.instances, {}, {"toy"}, cfg, rng), DataError);
}

TEST_CASE("single-class task warns but trains") {
    Rng data_rng(23);
    ToySet train = separable_toy(6, 3, data_rng);
    for (auto& inst : train.instances) inst.y = {1.0};
    RnnTrainConfig cfg;
    cfg.widths = {3};
    cfg.max_epochs = 2;
    Rng rng(1);
    auto res = train_multitask(train.instances, {}, {"toy"}, cfg, rng);
    REQUIRE(res.warnings.size() == 1);
    CHECK(res.warnings[0].find("single class") != std::string::npos);
}

TEST_CASE("model selection picks the minimum validation loss, earliest on ties") {
    Rng data_rng(29);
    ToySet train = separable_toy(24, 6, data_rng);
    ToySet val = separable_toy(16, 6, data_rng);
    RnnTrainConfig cfg;
    cfg.widths = {6};
    cfg.dropout = 0.0;
    cfg.lr = 0.03;
    cfg.batch_size = 8;
    cfg.max_epochs = 25;
    cfg.patience = 25;
    Rng rng(31);
    auto res = train_multitask(train.instances, val.instances, {"toy"}, cfg, rng);
    REQUIRE(!res.val_loss.empty());
    const double best = res.val_loss[res.best_epoch];
    for (std::size_t e = 0; e < res.val_loss.size(); ++e) {
        CHECK(res.val_loss[e] >= best);
        if (e < res.best_epoch) CHECK(res.val_loss[e] > best);
    }
}

TEST_CASE("rnn-c baseline shares the multitask code path bit-for-bit") {
    Rng data_rng(37);
    ToySet train = separable_toy(16, 5, data_rng);
    ToySet val = separable_toy(8, 5, data_rng);
    RnnTrainConfig cfg;
    cfg.widths = {5};
    cfg.lr = 0.02;
    cfg.batch_size = 4;
    cfg.max_epochs = 6;
    Rng a(41), b(41);
    auto r1 = train_rnnc_baseline(train.instances, val.instances, "toy", cfg, a);
    auto r2 = train_multitask(train.instances, val.instances, {"toy"}, cfg, b);
    CHECK(flatten(r1.model.stack) == flatten(r2.model.stack));
    CHECK(r1.model.head.w.data == r2.model.head.w.data);
    CHECK(r1.val_loss == r2.val_loss);
}

TEST_CASE("a huge net on 10 instances overfits: train loss below validation loss") {
    // weak signal + strong noise: the train set can be memorized, fresh
    // samples cannot
    auto noisy_toy = [](std::size_t n, Rng& rng) {
        ToySet set;
        for (std::size_t i = 0; i < n; ++i) {
            const int y = (i % 2 == 0) ? 1 : 0;
            MultivariateSeries s;
            s.channel_names = {"c0", "c1"};
            s.values = Matrix(2, 6);
            const double shift = y ? 0.1 : -0.1;
            for (auto& v : s.values.data) v = shift + 0.6 * rng.normal();
            set.storage.push_back(std::move(s));
            set.instances.push_back({nullptr, {static_cast<double>(y)}});
        }
        for (std::size_t i = 0; i < n; ++i) set.instances[i].x = &set.storage[i];
        return set;
    };
    Rng data_rng(43);
    ToySet train = noisy_toy(10, data_rng);
    ToySet val = noisy_toy(10, data_rng);
    RnnTrainConfig cfg;
    cfg.widths = {300};
    cfg.dropout = 0.0;
    cfg.lr = 5e-3;
    cfg.batch_size = 10;
    cfg.max_epochs = 100;
    cfg.patience = 100;
    Rng rng(47);
    auto res = train_rnnc_baseline(train.instances, val.instances, "toy", cfg, rng);
    const double final_train = multitask_loss(res.model, train.instances);
    const double final_val = multitask_loss(res.model, val.instances);
    CHECK(final_train < final_val);
}

TEST_CASE("lr=0 leaves the initialization unchanged") {
    Rng data_rng(53);
    ToySet train = separable_toy(8, 4, data_rng);
    RnnTrainConfig cfg;
    cfg.widths = {4};
    cfg.lr = 0.0;
    cfg.max_epochs = 3;
    cfg.dropout = 0.0;
    Rng a(59);
    auto res = train_rnnc_baseline(train.instances, {}, "toy", cfg, a);
    Rng b(59);
    GruStackParams fresh = GruStackParams::init(2, cfg.widths, cfg.dropout, b);
    CHECK(flatten(res.model.stack) == flatten(fresh));
}

TEST_CASE("hn_extract shapes and slicing") {
    Rng rng(61);
    ToySet toy = separable_toy(2, 5, rng);
    RnnTrainConfig cfg;
    cfg.widths = {6, 6};
    cfg.max_epochs = 0;
    Rng t(63);
    auto res = train_multitask(toy.instances, {}, {"toy"}, cfg, t);

    const Vec all = hn_extract(*toy.instances[0].x, res.model, HnLayers::all);
    const Vec top = hn_extract(*toy.instances[0].x, res.model, HnLayers::top_only);
    CHECK(all.size() == 12);
    CHECK(top.size() == 6);
    // top slice of `all` equals top_only bit-exactly (layer 1 first)
    for (std::size_t i = 0; i < 6; ++i) CHECK(all[6 + i] == top[i]);

    SECTION("L=1: top_only equals all") {
        RnnTrainConfig c1;
        c1.widths = {5};
        c1.max_epochs = 0;
        Rng t1(67);
        auto m1 = train_multitask(toy.instances, {}, {"toy"}, c1, t1);
        CHECK(hn_extract(*toy.instances[0].x, m1.model, HnLayers::top_only) ==
              hn_extract(*toy.instances[0].x, m1.model, HnLayers::all));
    }
    SECTION("zero model gives the zero vector") {
        auto zero = res.model;
        for (auto& span : zero.stack.param_spans())
            for (double& v : span) v = 0.0;
        for (double v : hn_extract(*toy.instances[0].x, zero, HnLayers::all)) CHECK(v == 0.0);
    }
    SECTION("channel mismatch is a data error") {
        MultivariateSeries wrong;
        wrong.values = Matrix(3, 5, 0.1);
        CHECK_THROWS_AS(hn_extract(wrong, res.model, HnLayers::all), DataError);
    }
}
