#include <gtest/gtest.h>

#include <cmath>

#include "pdno/pde_gen.hpp"
#include "pdno/trainer.hpp"

using namespace pdno;

namespace {

// Predicts eps exactly: loss and gradient are identically zero.
struct PerfectStub {
    std::size_t n = 3;
    std::size_t num_params() const { return n; }
    double loss_and_grad(std::span<const double>, const NoiseSchedule&, std::span<const TrainSample>,
                         std::span<double> g) {
        std::fill(g.begin(), g.end(), 0.0);
        return 0.0;
    }
};

struct NanStub {
    int calls = 0;
    std::size_t num_params() const { return 1; }
    double loss_and_grad(std::span<const double>, const NoiseSchedule&, std::span<const TrainSample>,
                         std::span<double> g) {
        g[0] = 0.0;
        return ++calls == 3 ? std::nan("") : 1.0;
    }
};

// Records the (t, first eps value, first u0 value) of every element seen.
struct RecordingStub {
    std::vector<std::vector<std::tuple<int, double, double>>> batches;
    std::size_t num_params() const { return 1; }
    double loss_and_grad(std::span<const double>, const NoiseSchedule&, std::span<const TrainSample> b,
                         std::span<double> g) {
        g[0] = 0.0;
        batches.emplace_back();
        for (const auto& s : b) batches.back().emplace_back(s.t, s.eps[0], s.u0[0]);
        return 1.0;
    }
};

PairDataset small_dataset(int n) { return build_dataset(Problem::elliptic1d, n, 16, 3, {}); }

TrainConfig tiny_config(int epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 3;
    c.lr0 = 1e-3;
    c.lr_halving_period = 2;
    c.seed = 5;
    c.init_seed = 9;
    return c;
}

} // namespace

TEST(Adam, FirstStepIsMinusLr) {
    std::vector<double> x{0.0};
    const std::vector<double> g{1.0};
    AdamState<double> st(1);
    adam_step<double>(x, g, st, 1e-4, 0.9, 0.999, 1e-8);
    EXPECT_NEAR(x[0], -1e-4 / (1.0 + 1e-8), 1e-19); // m_hat = g, v_hat = g^2
    EXPECT_EQ(st.step, 1);
    EXPECT_NEAR(st.m[0], 0.1, 1e-16);
    EXPECT_NEAR(st.v[0], 0.001, 1e-18);
}

TEST(Adam, ZeroGradientLeavesParams) {
    std::vector<double> x{1.5, -2.0};
    const std::vector<double> g{0.0, 0.0};
    AdamState<double> st(2);
    for (int i = 0; i < 5; ++i) adam_step<double>(x, g, st, 1e-3, 0.9, 0.999, 1e-8);
    EXPECT_EQ(x, (std::vector<double>{1.5, -2.0}));
}

TEST(Adam, DescendsQuadratic) {
    std::vector<double> x{1.0};
    AdamState<double> st(1);
    double prev = 1.0;
    for (int i = 0; i < 10; ++i) {
        const std::vector<double> g{2.0 * x[0]};
        adam_step<double>(x, g, st, 0.05, 0.9, 0.999, 1e-8);
        EXPECT_LT(std::abs(x[0]), prev);
        prev = std::abs(x[0]);
    }
}

TEST(Adam, ShapeMismatch) {
    std::vector<double> x{1.0, 2.0};
    const std::vector<double> g{1.0};
    AdamState<double> st(2);
    EXPECT_THROW(adam_step<double>(x, g, st, 1e-3, 0.9, 0.999, 1e-8), ValidationError);
}

TEST(TrainConfig, LearningRateHalves) {
    TrainConfig c;
    EXPECT_EQ(c.lr_at(0), 1e-4);
    EXPECT_EQ(c.lr_at(99), 1e-4);
    EXPECT_EQ(c.lr_at(100), 5e-5);
    EXPECT_EQ(c.lr_at(250), 2.5e-5);
    c.lr_halving_period = 0;
    EXPECT_EQ(c.lr_at(1000), 1e-4);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.epochs = 0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.lr0 = 0.0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.optimizer = "sgd";
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(TrainLoop, PerfectStubKeepsParams) {
    PerfectStub stub;
    const auto ds = small_dataset(1);
    const auto sched = make_schedule(ScheduleKind::cosine, 10);
    auto cfg = tiny_config(1);
    const std::vector<double> p0{0.5, -1.0, 2.0};
    const auto res = train_loop<double>(stub, ds, sched, cfg, p0, AdamState<double>(3));
    ASSERT_EQ(res.log.size(), 1u);
    EXPECT_EQ(res.log[0].epoch, 1);
    EXPECT_EQ(res.log[0].mean_loss, 0.0);
    EXPECT_EQ(res.params, p0);
}

TEST(TrainLoop, NonFiniteLossAborts) {
    NanStub stub;
    const auto ds = small_dataset(4);
    const auto sched = make_schedule(ScheduleKind::cosine, 10);
    auto cfg = tiny_config(3);
    cfg.batch_size = 2;
    try {
        train_loop<double>(stub, ds, sched, cfg, std::vector<double>{0.0}, AdamState<double>(1));
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_EQ(e.epoch(), 2);
        EXPECT_EQ(e.batch(), 0);
        EXPECT_TRUE(std::isnan(e.loss()));
    }
}

TEST(TrainLoop, FreshDrawsEveryEpochAndFullCoverage) {
    RecordingStub stub;
    const auto ds = small_dataset(7);
    const auto sched = make_schedule(ScheduleKind::cosine, 50);
    auto cfg = tiny_config(2);
    train_loop<double>(stub, ds, sched, cfg, std::vector<double>{0.0}, AdamState<double>(1));
    ASSERT_EQ(stub.batches.size(), 6u); // ceil(7/3) per epoch
    EXPECT_EQ(stub.batches[2].size(), 1u);
    std::vector<double> seen0, seen1, eps0, eps1;
    for (int b = 0; b < 3; ++b)
        for (const auto& [t, e, u] : stub.batches[static_cast<std::size_t>(b)]) {
            EXPECT_GE(t, 1);
            EXPECT_LE(t, 50);
            seen0.push_back(u);
            eps0.push_back(e);
        }
    for (int b = 3; b < 6; ++b)
        for (const auto& [t, e, u] : stub.batches[static_cast<std::size_t>(b)]) {
            seen1.push_back(u);
            eps1.push_back(e);
        }
    // every sample visited once per epoch, in a different order and with new noise
    std::vector<double> all;
    for (const auto& row : ds.outputs) all.push_back(row[0]);
    auto sorted = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v;
    };
    EXPECT_EQ(sorted(seen0), sorted(all));
    EXPECT_EQ(sorted(seen1), sorted(all));
    EXPECT_NE(eps0, eps1);
}

TEST(Train, DeterministicForSameSeed) {
    const auto ds = small_dataset(6);
    const auto sched = make_schedule(ScheduleKind::cosine, 20);
    const auto cfg = tiny_config(3);
    const auto a = train<float>(ds, ArchSpec::tiny(), sched, cfg);
    const auto b = train<float>(ds, ArchSpec::tiny(), sched, cfg);
    EXPECT_EQ(a.pred.params, b.pred.params);
    EXPECT_EQ(a.adam, b.adam);
    ASSERT_EQ(a.log.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(a.log[i].mean_loss, b.log[i].mean_loss);
        EXPECT_EQ(a.log[i].lr, b.log[i].lr);
    }
    EXPECT_EQ(a.log[2].lr, 5e-4);
    auto other = cfg;
    other.seed = 6;
    EXPECT_NE(train<float>(ds, ArchSpec::tiny(), sched, other).pred.params, a.pred.params);
}

TEST(Train, ResumeMatchesUninterrupted) {
    const auto ds = small_dataset(6);
    const auto sched = make_schedule(ScheduleKind::cosine, 20);
    const auto full = train<float>(ds, ArchSpec::tiny(), sched, tiny_config(4));
    const auto half = train<float>(ds, ArchSpec::tiny(), sched, tiny_config(2));
    const auto resumed = resume_training(half, ds, tiny_config(4));
    EXPECT_EQ(resumed.epoch, 4);
    EXPECT_EQ(resumed.pred.params, full.pred.params);
    EXPECT_EQ(resumed.adam, full.adam);
    ASSERT_EQ(resumed.log.size(), 4u);
    EXPECT_EQ(resumed.log[3].mean_loss, full.log[3].mean_loss);
}

TEST(Train, LossFiniteAndLogged) {
    const auto ds = small_dataset(6);
    const auto sched = make_schedule(ScheduleKind::cosine, 20);
    std::vector<EpochRecord> seen;
    const auto tm = train<float>(ds, ArchSpec::tiny(), sched, tiny_config(3),
                                 [&](const EpochRecord& r) { seen.push_back(r); });
    ASSERT_EQ(seen.size(), 3u);
    for (const auto& r : seen) {
        EXPECT_TRUE(std::isfinite(r.mean_loss));
        EXPECT_GE(r.wall_ms, 0.0);
    }
    const auto j = to_json(seen[0]);
    for (const char* k : {"epoch", "mean_loss", "lr", "wall_ms"}) EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_EQ(tm.log.size(), 3u);
}

TEST(Train, NormalizationRecorded) {
    const auto ds = small_dataset(6);
    const auto sched = make_schedule(ScheduleKind::cosine, 20);
    auto cfg = tiny_config(1);
    cfg.normalize = true;
    const auto tm = train<float>(ds, ArchSpec::tiny(), sched, cfg);
    EXPECT_TRUE(tm.normalized);
    EXPECT_EQ(tm.norm, normalize_stats(ds));
    const auto nd = apply_normalization(ds, tm.norm);
    const auto st = normalize_stats(nd);
    EXPECT_NEAR(st.in_mean, 0.0, 1e-12);
    EXPECT_NEAR(st.out_std, 1.0, 1e-12);
}

TEST(Train, GradientClippingBoundsStep) {
    const auto ds = small_dataset(3);
    const auto sched = make_schedule(ScheduleKind::cosine, 20);
    auto cfg = tiny_config(1);
    cfg.max_grad_norm = 1e-6;
    EXPECT_NO_THROW(train<float>(ds, ArchSpec::tiny(), sched, cfg));
    cfg.max_grad_norm = -1.0;
    EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Train, RejectsInadmissibleLength) {
    const auto ds = build_dataset(Problem::elliptic1d, 2, 15, 1, {});
    const auto sched = make_schedule(ScheduleKind::cosine, 20);
    EXPECT_THROW(train<float>(ds, ArchSpec::tiny(), sched, tiny_config(1)), ValidationError);
}
