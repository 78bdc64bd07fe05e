#pragma once

// Inference stage (ancestral sampling from u_T ~ N(0, I) down to u_0) and evaluation metrics.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core_data.hpp"
#include "diffusion.hpp"
#include "pde_gen.hpp"
#include "rng.hpp"
#include "unet.hpp"

namespace pdno {

/// Batched noise prediction: `a` and `ut` hold B samples of length L back to back; eps_hat goes to `out`.
template <class P>
concept NoisePredictor = requires(P p, std::span<const int> ts, std::span<const double> a,
                                  std::span<const double> ut, int L, std::span<double> out) {
    p.predict(ts, a, ut, L, out);
};

/// NoisePredictor backed by a UNet parameter set.
template <class S>
class NetPredictor {
public:
    explicit NetPredictor(const EpsilonPredictor<S>& pred) : pred_(pred), net_(pred.arch) {
        require(net_.num_params() == pred.params.size(), "NetPredictor: parameter count does not match arch");
    }

    void predict(std::span<const int> ts, std::span<const double> a, std::span<const double> ut, int L,
                 std::span<double> out) {
        const int B = static_cast<int>(ts.size());
        pred_.arch.check_length(static_cast<std::size_t>(L));
        x_.resize(2, B, L);
        // channel-major layout: channel 0 is a for every sample, then channel 1 is u_t
        std::transform(a.begin(), a.end(), x_.v.begin(), [](double v) { return static_cast<S>(v); });
        std::transform(ut.begin(), ut.end(), x_.v.begin() + static_cast<std::ptrdiff_t>(a.size()),
                       [](double v) { return static_cast<S>(v); });
        net_.forward(pred_.params, ts, x_, y_, false);
        std::transform(y_.v.begin(), y_.v.end(), out.begin(), [](S v) { return static_cast<double>(v); });
    }

private:
    const EpsilonPredictor<S>& pred_;
    UNet1d<S> net_;
    nn::Tensor<S> x_, y_;
};

struct SampleOptions {
    /// Inputs are standardized before sampling and samples mapped back when set.
    std::optional<NormalizationStats> normalization;
    /// Data-space range [lo, hi] for the predicted u0 at every step (see clamp_denoised). Off when unset.
    std::optional<std::pair<double, double>> denoised_range;
    /// Upper bound on batch size * length per network call.
    std::size_t max_batch_points = 1u << 15;
};

inline std::uint64_t chain_seed(std::uint64_t seed, std::size_t input_index, std::size_t sample_index) {
    return combine_seeds(combine_seeds(seed, input_index), sample_index);
}

/// Runs one reverse chain per (input, seed) pair and returns the terminal states.
/// Each chain draws u_T and every step's noise from its own generator, so the random streams do
/// not depend on how chains are batched (network rounding may, slightly).
template <NoisePredictor P>
std::vector<std::vector<double>> run_chains(P& model, const NoiseSchedule& sched, const CovMode& cov,
                                            const std::vector<const std::vector<double>*>& inputs,
                                            std::span<const std::uint64_t> seeds, const SampleOptions& opts = {}) {
    require(inputs.size() == seeds.size(), "run_chains: one seed per chain required");
    cov.validate();
    if (inputs.empty()) return {};
    const std::size_t L = inputs.front()->size();
    for (const auto* in : inputs) require(in->size() == L, "run_chains: inputs differ in length");
    const std::size_t chunk = std::max<std::size_t>(1, opts.max_batch_points / std::max<std::size_t>(L, 1));
    std::optional<std::pair<double, double>> range = opts.denoised_range;
    if (range && opts.normalization)
        range = std::pair{(range->first - opts.normalization->out_mean) / opts.normalization->out_std,
                          (range->second - opts.normalization->out_mean) / opts.normalization->out_std};

    std::vector<std::vector<double>> result(inputs.size());
    std::vector<double> a_buf, ut_buf, eps_buf, noise(L);
    std::vector<int> ts;
    for (std::size_t first = 0; first < inputs.size(); first += chunk) {
        const std::size_t B = std::min(chunk, inputs.size() - first);
        std::vector<Rng> rngs;
        rngs.reserve(B);
        a_buf.assign(B * L, 0.0);
        ut_buf.assign(B * L, 0.0);
        eps_buf.assign(B * L, 0.0);
        for (std::size_t b = 0; b < B; ++b) {
            rngs.emplace_back(seeds[first + b]);
            const auto& a = *inputs[first + b];
            for (std::size_t l = 0; l < L; ++l) {
                double v = a[l];
                if (opts.normalization) v = (v - opts.normalization->in_mean) / opts.normalization->in_std;
                a_buf[b * L + l] = v;
                ut_buf[b * L + l] = rngs[b].normal();
            }
        }
        for (int t = sched.t_max(); t >= 1; --t) {
            ts.assign(B, t);
            model.predict(ts, a_buf, ut_buf, static_cast<int>(L), eps_buf);
            for (std::size_t b = 0; b < B; ++b) {
                rngs[b].fill_normal(noise);
                std::span<double> ut(ut_buf.data() + b * L, L);
                std::span<double> eh(eps_buf.data() + b * L, L);
                if (range) clamp_denoised(sched, eh, ut, t, range->first, range->second);
                const auto next = reverse_step(sched, cov, eh, ut, t, noise);
                std::copy(next.begin(), next.end(), ut.begin());
            }
        }
        for (std::size_t b = 0; b < B; ++b) {
            std::vector<double> u(ut_buf.begin() + static_cast<std::ptrdiff_t>(b * L),
                                  ut_buf.begin() + static_cast<std::ptrdiff_t>((b + 1) * L));
            if (opts.normalization)
                for (auto& v : u) v = v * opts.normalization->out_std + opts.normalization->out_mean;
            result[first + b] = std::move(u);
        }
    }
    return result;
}

/// n_samples independent draws from the learned conditional distribution of u given a.
template <NoisePredictor P>
std::vector<Field> sample_conditional(P& model, const NoiseSchedule& sched, const CovMode& cov, const Field& a,
                                      int n_samples, std::uint64_t seed, const SampleOptions& opts = {}) {
    require(n_samples >= 1, "sample_conditional: n_samples must be >= 1");
    a.validate();
    std::vector<const std::vector<double>*> inputs(static_cast<std::size_t>(n_samples), &a.values);
    std::vector<std::uint64_t> seeds;
    for (int k = 0; k < n_samples; ++k) seeds.push_back(chain_seed(seed, 0, static_cast<std::size_t>(k)));
    auto raw = run_chains(model, sched, cov, inputs, seeds, opts);
    std::vector<Field> out;
    out.reserve(raw.size());
    for (auto& u : raw) out.emplace_back(a.grid, std::move(u));
    return out;
}

/// Samples for every input: result[i][k] is draw k for input i (chain seed from (seed, i, k)).
template <NoisePredictor P>
std::vector<std::vector<std::vector<double>>> sample_sets(P& model, const NoiseSchedule& sched, const CovMode& cov,
                                                          const std::vector<std::vector<double>>& inputs, int n_s,
                                                          std::uint64_t seed, const SampleOptions& opts = {}) {
    require(n_s >= 1, "sample_sets: n_s must be >= 1");
    std::vector<const std::vector<double>*> chains;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        for (int k = 0; k < n_s; ++k) {
            chains.push_back(&inputs[i]);
            seeds.push_back(chain_seed(seed, i, static_cast<std::size_t>(k)));
        }
    auto flat = run_chains(model, sched, cov, chains, seeds, opts);
    std::vector<std::vector<std::vector<double>>> out(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i)
        for (int k = 0; k < n_s; ++k)
            out[i].push_back(std::move(flat[i * static_cast<std::size_t>(n_s) + static_cast<std::size_t>(k)]));
    return out;
}

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline std::vector<double> pointwise_mean(const std::vector<std::vector<double>>& samples) {
    require(!samples.empty(), "pointwise_mean: no samples");
    std::vector<double> m(samples.front().size(), 0.0);
    for (const auto& s : samples)
        for (std::size_t j = 0; j < m.size(); ++j) m[j] += s[j];
    for (auto& v : m) v /= static_cast<double>(samples.size());
    return m;
}

/// Population standard deviation across samples at every grid point.
inline std::vector<double> pointwise_std(const std::vector<std::vector<double>>& samples) {
    const auto mean = pointwise_mean(samples);
    std::vector<double> sd(mean.size(), 0.0);
    for (const auto& s : samples)
        for (std::size_t j = 0; j < sd.size(); ++j) sd[j] += (s[j] - mean[j]) * (s[j] - mean[j]);
    for (auto& v : sd) v = std::sqrt(v / static_cast<double>(samples.size()));
    return sd;
}

inline double relative_l2_error(std::span<const double> pred, std::span<const double> truth) {
    require(pred.size() == truth.size(), "relative_l2_error: length mismatch");
    const double tn = l2_norm(truth);
    require(tn > 0.0, "relative_l2_error: zero-norm truth");
    double s = 0.0;
    for (std::size_t j = 0; j < pred.size(); ++j) s += (pred[j] - truth[j]) * (pred[j] - truth[j]);
    return std::sqrt(s) / tn;
}

/// Mean relative L2 error of predicted mean fields against the test outputs.
inline double mrle(const PairDataset& test, const std::vector<std::vector<double>>& predictions) {
    require(predictions.size() == test.n(), "mrle: prediction count does not match test size");
    require(test.n() > 0, "mrle: empty test set");
    double acc = 0.0;
    for (std::size_t i = 0; i < test.n(); ++i) acc += relative_l2_error(predictions[i], test.outputs[i]);
    return acc / static_cast<double>(test.n());
}

struct MstdValue {
    double value = 0.0;
    bool defined = true;
};

/// Mean over inputs of ||pointwise std||_2 / N_s (or / sqrt(N_s) with sqrt_n). Undefined (reported 0) for N_s = 1.
inline MstdValue mstd(const PairDataset& test, const std::vector<std::vector<std::vector<double>>>& sample_sets,
                      int n_s, bool sqrt_n = false) {
    require(sample_sets.size() == test.n(), "mstd: sample-set count does not match test size");
    require(n_s >= 1, "mstd: n_s must be >= 1");
    if (n_s == 1) return {0.0, false};
    double acc = 0.0;
    for (const auto& set : sample_sets) {
        require(set.size() == static_cast<std::size_t>(n_s), "mstd: sample set has wrong size");
        acc += l2_norm(pointwise_std(set));
    }
    const double denom = sqrt_n ? std::sqrt(static_cast<double>(n_s)) : static_cast<double>(n_s);
    return {acc / denom / static_cast<double>(sample_sets.size()), true};
}

struct StoredField {
    std::size_t index = 0;
    std::vector<double> mean;
    std::vector<double> std;
    bool operator==(const StoredField&) const = default;
};

struct EvalReport {
    double mrle = 0.0;
    double mstd = 0.0;
    bool mstd_defined = true;
    bool mstd_sqrt_n = false;
    std::vector<double> per_sample_rle;
    int n_samples_per_input = 1;
    std::uint64_t seed = 0;
    std::vector<StoredField> fields;

    bool operator==(const EvalReport&) const = default;
};

inline nlohmann::json to_json(const EvalReport& r) {
    auto fields = nlohmann::json::array();
    for (const auto& f : r.fields) fields.push_back({{"index", f.index}, {"mean", f.mean}, {"std", f.std}});
    return {{"mrle", r.mrle},
            {"mstd", r.mstd},
            {"mstd_defined", r.mstd_defined},
            {"mstd_normalization", r.mstd_sqrt_n ? "sqrt_n_s" : "n_s"},
            {"n_samples_per_input", r.n_samples_per_input},
            {"n_test", r.per_sample_rle.size()},
            {"seed", r.seed},
            {"per_sample_rle", r.per_sample_rle},
            {"fields", fields}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
        r.mrle = j.at("mrle").get<double>();
        r.mstd = j.at("mstd").get<double>();
        r.mstd_defined = j.at("mstd_defined").get<bool>();
        r.mstd_sqrt_n = j.at("mstd_normalization").get<std::string>() == "sqrt_n_s";
        r.n_samples_per_input = j.at("n_samples_per_input").get<int>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.per_sample_rle = j.at("per_sample_rle").get<std::vector<double>>();
        for (const auto& f : j.at("fields"))
            r.fields.push_back({f.at("index").get<std::size_t>(), f.at("mean").get<std::vector<double>>(),
                                f.at("std").get<std::vector<double>>()});
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad eval report: ") + e.what());
    }
    return r;
}

inline void write_eval_report(const EvalReport& r, const std::filesystem::path& file) {
    if (file.has_parent_path()) detail::ensure_directory(file.parent_path());
    detail::write_text_file(file, to_json(r).dump(2) + "\n");
}

inline EvalReport read_eval_report(const std::filesystem::path& file) {
    return eval_report_from_json(detail::read_json_file(file));
}

struct EvalOptions {
    bool mstd_sqrt_n = false;
    /// Test indices whose predicted mean and std fields are stored in the report.
    std::vector<std::size_t> store_fields;
    SampleOptions sampling;
};

/// Samples n_s draws per test input and computes MRLE, MSTD and per-input relative errors.
template <NoisePredictor P>
EvalReport evaluate(P& model, const NoiseSchedule& sched, const CovMode& cov, const PairDataset& test, int n_s,
                    std::uint64_t seed, const EvalOptions& opts = {}) {
    require(test.n() > 0, "evaluate: empty test set");
    test.validate();
    const auto sets = sample_sets(model, sched, cov, test.inputs, n_s, seed, opts.sampling);
    EvalReport r;
    r.n_samples_per_input = n_s;
    r.seed = seed;
    r.mstd_sqrt_n = opts.mstd_sqrt_n;
    std::vector<std::vector<double>> means;
    means.reserve(test.n());
    for (std::size_t i = 0; i < test.n(); ++i) {
        means.push_back(pointwise_mean(sets[i]));
        r.per_sample_rle.push_back(relative_l2_error(means.back(), test.outputs[i]));
    }
    r.mrle = mrle(test, means);
    const auto m = mstd(test, sets, n_s, opts.mstd_sqrt_n);
    r.mstd = m.value;
    r.mstd_defined = m.defined;
    for (std::size_t idx : opts.store_fields) {
        require(idx < test.n(), "evaluate: stored field index out of range");
        r.fields.push_back({idx, means[idx], pointwise_std(sets[idx])});
    }
    return r;
}

struct JointHistogram {
    int bins = 0;
    std::vector<double> edges_x1, edges_x2;
    std::vector<std::vector<long>> model_counts; ///< [bin along x1][bin along x2]
    std::vector<std::vector<long>> exact_counts;

    long total(const std::vector<std::vector<long>>& c) const {
        long s = 0;
        for (const auto& row : c)
            for (long v : row) s += v;
        return s;
    }
};

namespace detail {
inline std::vector<double> shared_edges(double lo, double hi, int bins) {
    if (!(hi > lo)) {
        const double pad = std::max(1e-12, 1e-9 * std::abs(lo));
        lo -= pad;
        hi += pad;
    }
    std::vector<double> e(static_cast<std::size_t>(bins) + 1);
    for (int k = 0; k <= bins; ++k) e[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / bins;
    return e;
}

inline int bin_of(double v, const std::vector<double>& edges) {
    const int bins = static_cast<int>(edges.size()) - 1;
    const double lo = edges.front(), hi = edges.back();
    int k = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
    return std::clamp(k, 0, bins - 1);
}
} // namespace detail

/// One model sample per input plus the exact solution, both read at nodes (x1, x2) and binned on a shared range.
template <NoisePredictor P, class ExactSolver>
JointHistogram joint_histogram(P& model, const NoiseSchedule& sched, const CovMode& cov,
                               const std::vector<Field>& inputs, int x1, int x2, int bins, std::uint64_t seed,
                               ExactSolver&& exact, const SampleOptions& opts = {}) {
    require(!inputs.empty(), "joint_histogram: no inputs");
    require(bins >= 1, "joint_histogram: bins must be >= 1");
    const int m = inputs.front().grid.m;
    require(x1 >= 0 && x1 < m && x2 >= 0 && x2 < m, "joint_histogram: node index out of range");
    std::vector<std::vector<double>> raw;
    raw.reserve(inputs.size());
    for (const auto& f : inputs) raw.push_back(f.values);
    const auto sets = sample_sets(model, sched, cov, raw, 1, seed, opts);

    std::vector<double> m1, m2, e1, e2;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Field u = exact(inputs[i]);
        m1.push_back(sets[i][0][static_cast<std::size_t>(x1)]);
        m2.push_back(sets[i][0][static_cast<std::size_t>(x2)]);
        e1.push_back(u[static_cast<std::size_t>(x1)]);
        e2.push_back(u[static_cast<std::size_t>(x2)]);
    }
    auto range = [](const std::vector<double>& a, const std::vector<double>& b) {
        const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
        const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
        return std::pair{std::min(*amin, *bmin), std::max(*amax, *bmax)};
    };
    JointHistogram h;
    h.bins = bins;
    const auto [lo1, hi1] = range(m1, e1);
    const auto [lo2, hi2] = range(m2, e2);
    h.edges_x1 = detail::shared_edges(lo1, hi1, bins);
    h.edges_x2 = detail::shared_edges(lo2, hi2, bins);
    h.model_counts.assign(static_cast<std::size_t>(bins), std::vector<long>(static_cast<std::size_t>(bins), 0));
    h.exact_counts = h.model_counts;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        ++h.model_counts[static_cast<std::size_t>(detail::bin_of(m1[i], h.edges_x1))]
                        [static_cast<std::size_t>(detail::bin_of(m2[i], h.edges_x2))];
        ++h.exact_counts[static_cast<std::size_t>(detail::bin_of(e1[i], h.edges_x1))]
                        [static_cast<std::size_t>(detail::bin_of(e2[i], h.edges_x2))];
    }
    return h;
}

template <NoisePredictor P>
JointHistogram joint_histogram(P& model, const NoiseSchedule& sched, const CovMode& cov,
                               const std::vector<Field>& inputs, int x1, int x2, int bins, std::uint64_t seed,
                               const SampleOptions& opts = {}) {
    return joint_histogram(model, sched, cov, inputs, x1, x2, bins, seed,
                           [](const Field& a) { return solve_elliptic1d(a); }, opts);
}

/// CSV: two edge rows, then one row per x1 bin for each matrix ("model,<i>,counts...", "exact,<i>,counts...").
inline std::string histogram_csv(const JointHistogram& h) {
    std::ostringstream os;
    os.precision(17);
    auto row = [&os](const char* tag, const std::vector<double>& v) {
        os << tag;
        for (double x : v) os << ',' << x;
        os << '\n';
    };
    row("x1_edges", h.edges_x1);
    row("x2_edges", h.edges_x2);
    auto counts = [&os](const char* tag, const std::vector<std::vector<long>>& c) {
        for (std::size_t i = 0; i < c.size(); ++i) {
            os << tag << ',' << i;
            for (long v : c[i]) os << ',' << v;
            os << '\n';
        }
    };
    counts("model", h.model_counts);
    counts("exact", h.exact_counts);
    return os.str();
}

struct CiRecovery {
    double sigma_hat = 0.0;
    /// Fraction of model samples inside truth +/- 2 sigma_true.
    double coverage = 0.0;
    /// Fraction of truth points inside sample mean +/- 2 pointwise std.
    double truth_coverage = 0.0;
};

/// sigma_hat is the mean pointwise sample std over all test inputs and grid points.
template <NoisePredictor P>
CiRecovery ci_recovery(P& model, const NoiseSchedule& sched, const PairDataset& test_noise_free, double sigma_true,
                       int n_s, std::uint64_t seed, const CovMode& cov = CovMode::gaussian_noise(),
                       const SampleOptions& opts = {}) {
    require(n_s >= 2, "ci_recovery: n_s must be >= 2");
    require(sigma_true >= 0.0, "ci_recovery: sigma_true must be >= 0");
    require(test_noise_free.n() > 0, "ci_recovery: empty test set");
    const auto sets = sample_sets(model, sched, cov, test_noise_free.inputs, n_s, seed, opts);
    double sd_sum = 0.0;
    std::size_t points = 0, truth_inside = 0, draws = 0, draws_inside = 0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        const auto& truth = test_noise_free.outputs[i];
        const auto mean = pointwise_mean(sets[i]);
        const auto sd = pointwise_std(sets[i]);
        for (std::size_t j = 0; j < mean.size(); ++j) {
            sd_sum += sd[j];
            ++points;
            if (std::abs(truth[j] - mean[j]) <= 2.0 * sd[j]) ++truth_inside;
        }
        for (const auto& s : sets[i])
            for (std::size_t j = 0; j < s.size(); ++j) {
                ++draws;
                if (std::abs(s[j] - truth[j]) <= 2.0 * sigma_true) ++draws_inside;
            }
    }
    return {sd_sum / static_cast<double>(points), static_cast<double>(draws_inside) / static_cast<double>(draws),
            static_cast<double>(truth_inside) / static_cast<double>(points)};
}

} // namespace pdno
