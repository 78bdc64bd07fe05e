#pragma once

// Training stage: epoch-shuffled minibatches, one fresh (t, eps) draw per sample visit,
// Adam updates and a step-halving learning-rate schedule.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core_data.hpp"
#include "diffusion.hpp"
#include "rng.hpp"
#include "unet.hpp"

namespace pdno {

struct TrainConfig {
    int epochs = 300;
    int batch_size = 50;
    double lr0 = 1e-4;
    int lr_halving_period = 100; ///< 0 keeps the rate fixed
    std::string optimizer = "adam";
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    std::uint64_t init_seed = 0;
    CovMode cov_mode = CovMode::noise_free();
    bool normalize = false;
    std::optional<double> max_grad_norm;

    void validate() const {
        require(epochs >= 1, "train: epochs must be >= 1");
        require(batch_size >= 1, "train: batch_size must be >= 1");
        require(lr0 > 0.0, "train: lr0 must be > 0");
        require(lr_halving_period >= 0, "train: lr_halving_period must be >= 0");
        require(optimizer == "adam", "train: only the adam optimizer is supported");
        require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "train: adam_beta1 must lie in [0, 1)");
        require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "train: adam_beta2 must lie in [0, 1)");
        require(adam_eps > 0.0, "train: adam_eps must be > 0");
        require(!max_grad_norm || *max_grad_norm > 0.0, "train: max_grad_norm must be > 0");
        cov_mode.validate();
    }

    /// lr0 * 2^(-floor(epoch / period)), epoch counted from 0.
    double lr_at(int epoch) const {
        if (lr_halving_period <= 0) return lr0;
        return lr0 * std::ldexp(1.0, -(epoch / lr_halving_period));
    }
};

template <class S>
struct AdamState {
    std::vector<S> m, v;
    std::int64_t step = 0;

    explicit AdamState(std::size_t n = 0) : m(n, S(0)), v(n, S(0)) {}
    bool operator==(const AdamState&) const = default;
};

/// One Adam update with bias correction; increments state.step first.
template <class S>
void adam_step(std::span<S> params, std::span<const S> grad, AdamState<S>& st, double lr, double beta1, double beta2,
               double eps) {
    require(params.size() == grad.size() && st.m.size() == grad.size() && st.v.size() == grad.size(),
            "adam_step: shape mismatch");
    ++st.step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        const double m = beta1 * st.m[i] + (1.0 - beta1) * g;
        const double v = beta2 * st.v[i] + (1.0 - beta2) * g * g;
        st.m[i] = static_cast<S>(m);
        st.v[i] = static_cast<S>(v);
        params[i] = static_cast<S>(params[i] - lr * (m / c1) / (std::sqrt(v / c2) + eps));
    }
}

struct EpochRecord {
    int epoch = 0; ///< 1-based
    double mean_loss = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

inline nlohmann::json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"lr", r.lr}, {"wall_ms", r.wall_ms}};
}

class TrainingError : public std::runtime_error {
public:
    TrainingError(int epoch, int batch, double loss)
        : std::runtime_error(describe(epoch, batch, loss)), epoch_(epoch), batch_(batch), loss_(loss) {}
    int epoch() const { return epoch_; }
    int batch() const { return batch_; }
    double loss() const { return loss_; }

private:
    static std::string describe(int epoch, int batch, double loss) {
        std::ostringstream os;
        os << "non-finite loss " << loss << " at epoch " << epoch << ", batch " << batch;
        return os.str();
    }
    int epoch_, batch_;
    double loss_;
};

/// Anything exposing the UNet1d loss interface. Lets tests inject stub predictors.
template <class M, class S>
concept LossModel = requires(M m, std::span<const S> p, const NoiseSchedule& s, std::span<const TrainSample> b,
                             std::span<S> g) {
    { m.num_params() } -> std::convertible_to<std::size_t>;
    { m.loss_and_grad(p, s, b, g) } -> std::convertible_to<double>;
};

/// Applies (x - mean) / std to all inputs and outputs.
inline PairDataset apply_normalization(const PairDataset& ds, const NormalizationStats& st) {
    PairDataset out = ds;
    for (auto& row : out.inputs)
        for (auto& v : row) v = (v - st.in_mean) / st.in_std;
    for (auto& row : out.outputs)
        for (auto& v : row) v = (v - st.out_mean) / st.out_std;
    return out;
}

template <class S>
struct TrainResult {
    std::vector<S> params;
    AdamState<S> adam;
    std::vector<EpochRecord> log;
    int epochs_done = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs epochs [start_epoch, cfg.epochs) starting from `params` / `adam`. The data must already be
/// normalized if normalization is wanted. Randomness for epoch e comes from (cfg.seed, e) only, so
/// a run resumed at an epoch boundary reproduces the uninterrupted one.
template <class S, LossModel<S> Model>
TrainResult<S> train_loop(Model& model, const PairDataset& ds, const NoiseSchedule& sched, const TrainConfig& cfg,
                          std::vector<S> params, AdamState<S> adam, int start_epoch = 0,
                          const EpochCallback& on_epoch = {}) {
    cfg.validate();
    ds.validate();
    require(ds.n() > 0, "train: empty dataset");
    require(params.size() == model.num_params(), "train: parameter count mismatch");
    require(adam.m.size() == params.size(), "train: optimizer state size mismatch");
    require(start_epoch >= 0 && start_epoch <= cfg.epochs, "train: start epoch out of range");

    const std::size_t n = ds.n();
    const std::size_t L = static_cast<std::size_t>(ds.grid.m);
    std::vector<S> grad(params.size());
    std::vector<std::vector<double>> eps;
    std::vector<TrainSample> batch;
    std::vector<std::size_t> order(n);
    TrainResult<S> out;

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng rng(combine_seeds(cfg.seed, static_cast<std::uint64_t>(epoch)));
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng.engine());
        const double lr = cfg.lr_at(epoch);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        int batch_index = 0;
        for (std::size_t first = 0; first < n; first += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
            const std::size_t count = std::min(static_cast<std::size_t>(cfg.batch_size), n - first);
            eps.resize(count);
            batch.clear();
            for (std::size_t k = 0; k < count; ++k) {
                const std::size_t idx = order[first + k];
                const int t = static_cast<int>(rng.uniform_int(1, sched.t_max()));
                eps[k].resize(L);
                rng.fill_normal(eps[k]);
                batch.push_back({t, ds.outputs[idx], ds.inputs[idx], eps[k]});
            }
            const double loss = model.loss_and_grad(params, sched, batch, grad);
            if (!std::isfinite(loss)) throw TrainingError(epoch + 1, batch_index, loss);
            if (cfg.max_grad_norm) {
                double sq = 0.0;
                for (S g : grad) sq += static_cast<double>(g) * g;
                const double norm = std::sqrt(sq);
                if (norm > *cfg.max_grad_norm) {
                    const S scale = static_cast<S>(*cfg.max_grad_norm / norm);
                    for (S& g : grad) g *= scale;
                }
            }
            adam_step<S>(params, grad, adam, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            loss_sum += loss * static_cast<double>(count);
            seen += count;
        }
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(seen), lr, ms};
        out.log.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    out.params = std::move(params);
    out.adam = std::move(adam);
    out.epochs_done = cfg.epochs;
    return out;
}

inline std::optional<std::pair<double, double>> output_range(const PairDataset& ds) {
    std::optional<std::pair<double, double>> r;
    for (const auto& u : ds.outputs)
        for (double v : u) r = r ? std::pair{std::min(r->first, v), std::max(r->second, v)} : std::pair{v, v};
    return r;
}

/// Trained predictor plus everything needed to sample from it or continue training.
template <class S>
struct TrainedModel {
    EpsilonPredictor<S> pred;
    NoiseSchedule sched;
    CovMode cov;
    NormalizationStats norm = NormalizationStats::identity();
    bool normalized = false;
    /// Min and max of the raw training outputs.
    std::optional<std::pair<double, double>> output_range;
    AdamState<S> adam;
    int epoch = 0;
    std::vector<EpochRecord> log;
};

/// Fresh training run: initializes parameters from cfg.init_seed and trains for cfg.epochs.
template <class S = float>
TrainedModel<S> train(const PairDataset& ds, const ArchSpec& arch, const NoiseSchedule& sched, const TrainConfig& cfg,
                      const EpochCallback& on_epoch = {}) {
    cfg.validate();
    arch.check_length(static_cast<std::size_t>(ds.grid.m));
    TrainedModel<S> tm;
    tm.pred = init_params<S>(arch, cfg.init_seed);
    tm.sched = sched;
    tm.cov = cfg.cov_mode;
    tm.normalized = cfg.normalize;
    if (cfg.normalize) tm.norm = normalize_stats(ds);
    tm.output_range = output_range(ds);
    const PairDataset data = cfg.normalize ? apply_normalization(ds, tm.norm) : ds;
    UNet1d<S> net(arch);
    auto res = train_loop<S>(net, data, sched, cfg, std::move(tm.pred.params), AdamState<S>(net.num_params()), 0,
                             on_epoch);
    tm.pred.params = std::move(res.params);
    tm.adam = std::move(res.adam);
    tm.epoch = res.epochs_done;
    tm.log = std::move(res.log);
    return tm;
}

/// Continues a model to cfg.epochs total epochs.
template <class S>
TrainedModel<S> resume_training(TrainedModel<S> tm, const PairDataset& ds, const TrainConfig& cfg,
                                const EpochCallback& on_epoch = {}) {
    const PairDataset data = tm.normalized ? apply_normalization(ds, tm.norm) : ds;
    UNet1d<S> net(tm.pred.arch);
    auto res = train_loop<S>(net, data, tm.sched, cfg, std::move(tm.pred.params), std::move(tm.adam), tm.epoch,
                             on_epoch);
    tm.pred.params = std::move(res.params);
    tm.adam = std::move(res.adam);
    tm.epoch = res.epochs_done;
    tm.log.insert(tm.log.end(), res.log.begin(), res.log.end());
    return tm;
}

} // namespace pdno
