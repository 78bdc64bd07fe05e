#include <gtest/gtest.h>

#include <cmath>

#include "pdno/inference.hpp"
#include "pdno/pde_gen.hpp"
#include "pdno/trainer.hpp"
#include "test_util.hpp"

using namespace pdno;
using testutil::TempDir;

namespace {

// Returns the noise that actually separates u_t from the exact elliptic solution of a.
struct OracleStub {
    const NoiseSchedule* sched;
    Grid1D grid;

    void predict(std::span<const int> ts, std::span<const double> a, std::span<const double> ut, int L,
                 std::span<double> out) const {
        const auto Lz = static_cast<std::size_t>(L);
        for (std::size_t b = 0; b < ts.size(); ++b) {
            const std::vector<double> av(a.begin() + b * Lz, a.begin() + (b + 1) * Lz);
            const auto u0 = solve_elliptic1d(Field(grid, av));
            const double ab = sched->alpha_bar(ts[b]);
            for (std::size_t l = 0; l < Lz; ++l)
                out[b * Lz + l] = (ut[b * Lz + l] - std::sqrt(ab) * u0[l]) / std::sqrt(1.0 - ab);
        }
    }
};

struct ZeroStub {
    void predict(std::span<const int>, std::span<const double>, std::span<const double>, int,
                 std::span<double> out) const {
        std::fill(out.begin(), out.end(), 0.0);
    }
};

PairDataset elliptic(int n, int m, std::uint64_t seed) { return build_dataset(Problem::elliptic1d, n, m, seed, {}); }

} // namespace

TEST(Sampling, OracleStubRecoversExactSolution) {
    const auto s = make_schedule(ScheduleKind::cosine, 50);
    const auto ds = elliptic(3, 32, 1);
    OracleStub stub{&s, ds.grid};
    const auto out = sample_conditional(stub, s, CovMode::noise_free(), ds.input(0), 2, 7);
    ASSERT_EQ(out.size(), 2u);
    for (const auto& f : out)
        for (std::size_t j = 0; j < f.size(); ++j) EXPECT_NEAR(f[j], ds.outputs[0][j], 1e-10);
}

TEST(Sampling, SingleSampleSufficesForDiracTarget) {
    const auto s = make_schedule(ScheduleKind::cosine, 50);
    const auto ds = elliptic(1, 32, 2);
    OracleStub stub{&s, ds.grid};
    const auto a = sample_conditional(stub, s, CovMode::noise_free(), ds.input(0), 1, 1);
    const auto b = sample_conditional(stub, s, CovMode::noise_free(), ds.input(0), 1, 999);
    for (std::size_t j = 0; j < a[0].size(); ++j) EXPECT_NEAR(a[0][j], b[0][j], 1e-10);
}

TEST(Sampling, ZeroPredictorMatchesVarianceRecursion) {
    const auto s = make_schedule(ScheduleKind::linear, 100);
    for (const auto& cov : {CovMode::noise_free(), CovMode::gaussian_noise()}) {
        // v_T = 1, v_{t-1} = v_t / alpha_t + Sigma_t
        double v = 1.0;
        for (int t = s.t_max(); t >= 1; --t) v = v / s.alpha(t) + cov.variance(s, t);
        const int n = 100000;
        const std::vector<double> a{0.0};
        std::vector<const std::vector<double>*> inputs(n, &a);
        std::vector<std::uint64_t> seeds;
        for (int i = 0; i < n; ++i) seeds.push_back(chain_seed(3, 0, static_cast<std::size_t>(i)));
        ZeroStub stub;
        const auto out = run_chains(stub, s, cov, inputs, seeds);
        double s1 = 0.0, s2 = 0.0, s4 = 0.0;
        for (const auto& u : out) s1 += u[0], s2 += u[0] * u[0], s4 += std::pow(u[0], 4);
        const double var = s2 / n;
        const double se = std::sqrt((s4 / n - var * var) / n);
        EXPECT_LT(std::abs(var - v), 3.0 * se) << to_string(cov.kind) << " closed form " << v;
        EXPECT_LT(std::abs(s1 / n), 3.0 * std::sqrt(var / n));
    }
}

TEST(Sampling, DeterministicAndBatchInvariant) {
    const auto tm = init_params<float>(ArchSpec::tiny(), 3);
    auto pred = tm;
    Rng rng(4);
    for (auto& p : pred.params) p += static_cast<float>(0.1 * rng.normal());
    const auto s = make_schedule(ScheduleKind::cosine, 10);
    const auto ds = elliptic(2, 16, 5);
    NetPredictor<float> net(pred);
    const auto a = sample_conditional(net, s, CovMode::gaussian_noise(), ds.input(1), 5, 11);
    const auto b = sample_conditional(net, s, CovMode::gaussian_noise(), ds.input(1), 5, 11);
    SampleOptions small;
    small.max_batch_points = 16;
    const auto c = sample_conditional(net, s, CovMode::gaussian_noise(), ds.input(1), 5, 11, small);
    const auto d = sample_conditional(net, s, CovMode::gaussian_noise(), ds.input(1), 5, 12);
    for (std::size_t k = 0; k < 5; ++k) {
        EXPECT_EQ(a[k].values, b[k].values);
        for (std::size_t j = 0; j < a[k].size(); ++j) EXPECT_NEAR(a[k][j], c[k][j], 1e-4);
        EXPECT_NE(a[k].values, d[k].values);
    }
    EXPECT_NE(a[0].values, a[1].values);
}

TEST(Sampling, NormalizationIsInverted) {
    const auto s = make_schedule(ScheduleKind::cosine, 20);
    const auto ds = elliptic(1, 16, 5);
    SampleOptions opts;
    opts.normalization = NormalizationStats{0.0, 1.0, 10.0, 2.0};
    ZeroStub stub;
    const auto raw = sample_conditional(stub, s, CovMode::noise_free(), ds.input(0), 1, 3);
    const auto mapped = sample_conditional(stub, s, CovMode::noise_free(), ds.input(0), 1, 3, opts);
    for (std::size_t j = 0; j < raw[0].size(); ++j) EXPECT_NEAR(mapped[0][j], raw[0][j] * 2.0 + 10.0, 1e-12);
}

TEST(Sampling, DenoisedRangeLeavesExactPredictorAlone) {
    const auto s = make_schedule(ScheduleKind::cosine, 50);
    const auto ds = elliptic(1, 32, 3);
    OracleStub stub{&s, ds.grid};
    SampleOptions opts;
    opts.denoised_range = std::pair{-0.5, 1.5};
    const auto plain = sample_conditional(stub, s, CovMode::noise_free(), ds.input(0), 2, 4);
    const auto clamped = sample_conditional(stub, s, CovMode::noise_free(), ds.input(0), 2, 4, opts);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t j = 0; j < plain[k].size(); ++j) EXPECT_NEAR(clamped[k][j], plain[k][j], 1e-12);
}

TEST(Sampling, DegenerateRangeForcesConstant) {
    // with lo == hi every step sees the exact noise for u0 = lo, whatever the predictor says
    const auto s = make_schedule(ScheduleKind::cosine, 100);
    const auto ds = elliptic(1, 16, 4);
    ZeroStub stub;
    SampleOptions opts;
    opts.denoised_range = std::pair{0.3, 0.3};
    for (const auto& f : sample_conditional(stub, s, CovMode::noise_free(), ds.input(0), 3, 5, opts))
        for (double v : f.values) EXPECT_NEAR(v, 0.3, 1e-10);
    opts.normalization = NormalizationStats{0.0, 1.0, 10.0, 2.0};
    opts.denoised_range = std::pair{12.0, 12.0};
    for (const auto& f : sample_conditional(stub, s, CovMode::noise_free(), ds.input(0), 2, 6, opts))
        for (double v : f.values) EXPECT_NEAR(v, 12.0, 1e-9);
}

TEST(Sampling, RejectsBadLengthAndCount) {
    const auto pred = init_params<float>(ArchSpec::tiny(), 3);
    NetPredictor<float> net(pred);
    const auto s = make_schedule(ScheduleKind::cosine, 10);
    const auto ds = elliptic(1, 15, 5);
    EXPECT_THROW(sample_conditional(net, s, CovMode::noise_free(), ds.input(0), 1, 1), ValidationError);
    ZeroStub z;
    EXPECT_THROW(sample_conditional(z, s, CovMode::noise_free(), ds.input(0), 0, 1), ValidationError);
}

TEST(Metrics, MrleExamples) {
    PairDataset ds;
    ds.grid = Grid1D(0.0, 1.0, 2);
    ds.inputs = {{0.0, 0.0}};
    ds.outputs = {{1.0, 0.0}};
    EXPECT_DOUBLE_EQ(mrle(ds, {{1.0, 1.0}}), 1.0);
    EXPECT_EQ(mrle(ds, {{1.0, 0.0}}), 0.0);
    ds.outputs = {{0.0, 0.0}};
    EXPECT_THROW(mrle(ds, {{1.0, 0.0}}), ValidationError);
}

TEST(Metrics, MrleScaleInvariant) {
    const auto ds = elliptic(4, 16, 9);
    Rng rng(1);
    std::vector<std::vector<double>> preds;
    for (const auto& u : ds.outputs) {
        auto p = u;
        for (auto& v : p) v += 0.05 * rng.normal();
        preds.push_back(p);
    }
    auto scaled = ds;
    auto spreds = preds;
    for (auto& r : scaled.outputs)
        for (auto& v : r) v *= -3.5;
    for (auto& r : spreds)
        for (auto& v : r) v *= -3.5;
    EXPECT_NEAR(mrle(ds, preds), mrle(scaled, spreds), 1e-14);
}

TEST(Metrics, MstdExamples) {
    PairDataset ds;
    ds.grid = Grid1D(0.0, 1.0, 2);
    ds.inputs = {{0.0, 0.0}};
    ds.outputs = {{1.0, 1.0}};
    ds.grid.m = 1;
    ds.inputs = {{0.0}};
    ds.outputs = {{1.0}};
    const auto half = mstd(ds, {{{0.0}, {2.0}}}, 2);
    EXPECT_TRUE(half.defined);
    EXPECT_DOUBLE_EQ(half.value, 0.5);
    EXPECT_DOUBLE_EQ(mstd(ds, {{{0.0}, {2.0}}}, 2, true).value, 1.0 / std::sqrt(2.0));
    EXPECT_EQ(mstd(ds, {{{3.0}, {3.0}, {3.0}}}, 3).value, 0.0);
    const auto one = mstd(ds, {{{3.0}}}, 1);
    EXPECT_FALSE(one.defined);
    EXPECT_EQ(one.value, 0.0);
}

TEST(Evaluate, OracleStubGivesZeroMrle) {
    const auto s = make_schedule(ScheduleKind::cosine, 30);
    const auto ds = elliptic(3, 32, 4);
    OracleStub stub{&s, ds.grid};
    EvalOptions opts;
    opts.store_fields = {1};
    const auto r = evaluate(stub, s, CovMode::noise_free(), ds, 1, 5, opts);
    EXPECT_LT(r.mrle, 1e-12);
    EXPECT_EQ(r.per_sample_rle.size(), 3u);
    EXPECT_FALSE(r.mstd_defined);
    EXPECT_EQ(r.mstd, 0.0);
    ASSERT_EQ(r.fields.size(), 1u);
    EXPECT_EQ(r.fields[0].index, 1u);
    for (double v : r.fields[0].std) EXPECT_EQ(v, 0.0);
}

TEST(Evaluate, ReportJsonRoundTrip) {
    const auto s = make_schedule(ScheduleKind::cosine, 10);
    const auto ds = elliptic(3, 16, 4);
    ZeroStub stub;
    EvalOptions opts;
    opts.store_fields = {0, 2};
    opts.mstd_sqrt_n = true;
    const auto r = evaluate(stub, s, CovMode::gaussian_noise(), ds, 3, 8, opts);
    EXPECT_TRUE(r.mstd_defined);
    EXPECT_GT(r.mstd, 0.0);
    TempDir dir("report");
    write_eval_report(r, dir / "sub/report.json");
    EXPECT_EQ(read_eval_report(dir / "sub/report.json"), r);
    const auto j = to_json(r);
    EXPECT_EQ(j.at("mstd_normalization"), "sqrt_n_s");
    EXPECT_EQ(j.at("n_test"), 3);
}

TEST(JointHistogram, ExactStubGivesIdenticalMatrices) {
    const auto s = make_schedule(ScheduleKind::cosine, 20);
    const auto ds = elliptic(40, 32, 6);
    OracleStub stub{&s, ds.grid};
    std::vector<Field> inputs;
    for (std::size_t i = 0; i < ds.n(); ++i) inputs.push_back(ds.input(i));
    const auto h = joint_histogram(stub, s, CovMode::noise_free(), inputs, 8, 20, 6, 3);
    EXPECT_EQ(h.total(h.model_counts), 40);
    EXPECT_EQ(h.total(h.exact_counts), 40);
    EXPECT_EQ(h.model_counts, h.exact_counts);
    EXPECT_EQ(h.edges_x1.size(), 7u);
    const auto csv = histogram_csv(h);
    EXPECT_EQ(csv.rfind("x1_edges,", 0), 0u);
    EXPECT_NE(csv.find("\nexact,5,"), std::string::npos);
}

TEST(JointHistogram, ConservesCountsForAnyModel) {
    const auto s = make_schedule(ScheduleKind::cosine, 10);
    const auto ds = elliptic(25, 16, 6);
    ZeroStub stub;
    std::vector<Field> inputs;
    for (std::size_t i = 0; i < ds.n(); ++i) inputs.push_back(ds.input(i));
    const auto h = joint_histogram(stub, s, CovMode::gaussian_noise(), inputs, 0, 15, 4, 3);
    EXPECT_EQ(h.total(h.model_counts), 25);
    EXPECT_EQ(h.total(h.exact_counts), 25);
    EXPECT_THROW(joint_histogram(stub, s, CovMode::gaussian_noise(), inputs, 0, 16, 4, 3), ValidationError);
}

TEST(CiRecovery, CalibratedGaussianCoverage) {
    // With the exact noise predictor, the gaussian_noise chain ends in u0 + sqrt(beta_1) z.
    const auto s = make_schedule(ScheduleKind::linear, 10);
    const double sigma = std::sqrt(s.beta(1));
    const auto ds = elliptic(20, 32, 12);
    OracleStub stub{&s, ds.grid};
    const auto r = ci_recovery(stub, s, ds, sigma, 100, 4);
    const double expect = std::erf(2.0 / std::sqrt(2.0)); // 0.9545
    const double se = std::sqrt(expect * (1.0 - expect) / (20.0 * 32.0 * 100.0));
    EXPECT_NEAR(r.coverage, expect, 3.0 * se);
    EXPECT_NEAR(r.sigma_hat, sigma, 0.02 * sigma);
    EXPECT_GT(r.truth_coverage, 0.99);
    EXPECT_THROW(ci_recovery(stub, s, ds, sigma, 1, 4), ValidationError);
}

TEST(CiRecovery, NoiseFreeModelHasNoSpread) {
    const auto s = make_schedule(ScheduleKind::cosine, 20);
    const auto ds = elliptic(5, 32, 12);
    OracleStub stub{&s, ds.grid};
    const auto r = ci_recovery(stub, s, ds, 0.0, 10, 4, CovMode::noise_free());
    EXPECT_LT(r.sigma_hat, 1e-10);
}
