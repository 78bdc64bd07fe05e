#pragma once

// Conditional noise predictor eps_theta(t, u_t, a): a 1D UNet over the two-channel input [a; u_t]
// with a sinusoidal time embedding injected into every residual block as a per-channel shift.
//
// Layout (depth-first, fixed order):
//   time_mlp.0, time_mlp.1, conv_in,
//   down.<level>.<block>, down.<level>.downsample, ...
//   mid.0, mid.1,
//   up.<level>.<block>, up.<level>.upsample, ...
//   out_norm, conv_out

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffusion.hpp"
#include "errors.hpp"
#include "nn/layers.hpp"
#include "nn/resblock.hpp"
#include "rng.hpp"

namespace pdno {

struct ArchSpec {
    int base_channels = 16;
    std::vector<int> channel_mults{1, 2, 4};
    int blocks_per_res = 1;
    int time_embed_dim = 64;
    int in_channels = 2;
    int groups = 8;

    /// Test-scale default.
    static ArchSpec desk() { return {}; }
    /// Table-scale UNet: 32 base channels, (1, 2, 4, 8), two blocks per resolution.
    static ArchSpec paper() { return {32, {1, 2, 4, 8}, 2, 128, 2, 8}; }
    /// Smallest configuration used for finite-difference checks. Two groups keep the per-channel
    /// time shift from being normalized away (one channel per group would cancel it).
    static ArchSpec tiny() { return {4, {1, 2}, 1, 8, 2, 2}; }

    int levels() const { return static_cast<int>(channel_mults.size()); }
    int length_divisor() const { return 1 << (levels() - 1); }

    void validate() const {
        require(base_channels >= 2 && base_channels % 2 == 0, "arch: base_channels must be even and >= 2");
        require(!channel_mults.empty(), "arch: channel_mults must be nonempty");
        for (int m : channel_mults) require(m >= 1, "arch: channel multipliers must be >= 1");
        require(blocks_per_res >= 1, "arch: blocks_per_res must be >= 1");
        require(time_embed_dim >= 1, "arch: time_embed_dim must be >= 1");
        require(in_channels == 2, "arch: in_channels must be 2 (a and u_t)");
        require(groups >= 1, "arch: groups must be >= 1");
    }

    void check_length(std::size_t len) const {
        const auto d = static_cast<std::size_t>(length_divisor());
        if (len == 0 || len % d != 0)
            throw ValidationError("input length " + std::to_string(len) + " is not divisible by " + std::to_string(d));
    }

    bool operator==(const ArchSpec&) const = default;
};

inline nlohmann::json to_json(const ArchSpec& a) {
    return {{"base_channels", a.base_channels}, {"channel_mults", a.channel_mults},
            {"blocks_per_res", a.blocks_per_res}, {"time_embed_dim", a.time_embed_dim},
            {"in_channels", a.in_channels},       {"groups", a.groups}};
}

inline ArchSpec arch_from_json(const nlohmann::json& j) {
    static const char* keys[] = {"base_channels", "channel_mults", "blocks_per_res",
                                 "time_embed_dim", "in_channels", "groups"};
    for (const auto& [k, v] : j.items()) {
        if (std::find(std::begin(keys), std::end(keys), k) == std::end(keys))
            throw ValidationError("arch: unknown key '" + k + "'");
    }
    ArchSpec a;
    a.base_channels = j.value("base_channels", a.base_channels);
    a.channel_mults = j.value("channel_mults", a.channel_mults);
    a.blocks_per_res = j.value("blocks_per_res", a.blocks_per_res);
    a.time_embed_dim = j.value("time_embed_dim", a.time_embed_dim);
    a.in_channels = j.value("in_channels", a.in_channels);
    a.groups = j.value("groups", a.groups);
    a.validate();
    return a;
}

/// [sin(t w_0) .. sin(t w_{d/2-1}), cos(t w_0) .. cos(t w_{d/2-1})], w_i = 10000^(-2i/d).
inline std::vector<double> time_embedding(int t, int dim) {
    require(dim > 0 && dim % 2 == 0, "time_embedding: dim must be even");
    require(t >= 0, "time_embedding: t must be >= 0");
    const int half = dim / 2;
    std::vector<double> e(static_cast<std::size_t>(dim));
    for (int i = 0; i < half; ++i) {
        const double w = std::pow(10000.0, -2.0 * i / dim);
        e[static_cast<std::size_t>(i)] = std::sin(t * w);
        e[static_cast<std::size_t>(i + half)] = std::cos(t * w);
    }
    return e;
}

struct ParamEntry {
    std::string name;
    std::size_t offset = 0;
    std::vector<int> shape;

    std::size_t size() const {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
    }
    bool operator==(const ParamEntry&) const = default;
};

template <class S>
struct EpsilonPredictor {
    ArchSpec arch;
    std::vector<S> params;
    std::vector<ParamEntry> layout;

    std::size_t num_params() const { return params.size(); }

    const ParamEntry& entry(const std::string& name) const {
        for (const auto& e : layout)
            if (e.name == name) return e;
        throw ValidationError("no parameter block named '" + name + "'");
    }

    template <class T>
    EpsilonPredictor<T> cast() const {
        return {arch, std::vector<T>(params.begin(), params.end()), layout};
    }
};

/// One training element: u_t is built from (u0, eps) at step t.
struct TrainSample {
    int t = 1;
    std::span<const double> u0;
    std::span<const double> a;
    std::span<const double> eps;
};

/// Forward/backward engine for a given ArchSpec. Owns activation caches; parameters are passed in.
template <class S>
class UNet1d {
public:
    explicit UNet1d(ArchSpec arch) : arch_(std::move(arch)) {
        arch_.validate();
        build();
    }

    const ArchSpec& arch() const { return arch_; }
    std::size_t num_params() const { return lb_.total; }

    std::vector<ParamEntry> layout() const {
        std::vector<ParamEntry> out;
        out.reserve(lb_.entries.size());
        for (const auto& e : lb_.entries) out.push_back({e.name, e.offset, e.shape});
        return out;
    }

    /// eps_hat for a batch. `x` is [2][B][L] with channel 0 = a and channel 1 = u_t.
    /// With keep = true the activations needed by backward() are retained.
    void forward(std::span<const S> p, std::span<const int> ts, const nn::Tensor<S>& x, nn::Tensor<S>& y, bool keep) {
        require(p.size() == num_params(), "UNet1d: parameter vector has wrong length");
        require(x.C == 2, "UNet1d: input must have 2 channels");
        require(static_cast<int>(ts.size()) == x.B, "UNet1d: one time step per batch element required");
        arch_.check_length(static_cast<std::size_t>(x.L));
        const S* P = p.data();
        const int B = x.B;

        // time embedding MLP
        const int d0 = arch_.base_channels;
        temb_in_.resize(d0, B);
        for (int b = 0; b < B; ++b) {
            const auto e = time_embedding(ts[static_cast<std::size_t>(b)], d0);
            for (int i = 0; i < d0; ++i) temb_in_(i, b) = static_cast<S>(e[static_cast<std::size_t>(i)]);
        }
        time0_.forward(P, temb_in_, temb_z0_, keep);
        silu_mat(temb_z0_, temb_a0_);
        time1_.forward(P, temb_a0_, temb_z1_, keep);
        silu_mat(temb_z1_, temb_act_);

        conv_in_.forward(P, x, down_out_[0], keep);
        for (std::size_t k = 0; k < down_ops_.size(); ++k) {
            const auto& op = down_ops_[k];
            if (op.is_res)
                down_res_[op.index].forward(P, down_out_[k], temb_act_, down_out_[k + 1], keep);
            else
                down_conv_[op.index].forward(P, down_out_[k], down_out_[k + 1], keep);
        }
        mid_[0].forward(P, down_out_.back(), temb_act_, mid_out_[0], keep);
        mid_[1].forward(P, mid_out_[0], temb_act_, mid_out_[1], keep);

        const nn::Tensor<S>* h = &mid_out_[1];
        std::size_t skip = down_out_.size();
        for (std::size_t j = 0; j < up_ops_.size(); ++j) {
            const auto& op = up_ops_[j];
            if (op.is_res) {
                nn::concat_channels(*h, down_out_[--skip], up_in_[j]);
                up_res_[op.index].forward(P, up_in_[j], temb_act_, up_out_[j], keep);
            } else {
                nn::upsample_nearest2(*h, up_in_[j]);
                up_conv_[op.index].forward(P, up_in_[j], up_out_[j], keep);
            }
            h = &up_out_[j];
        }
        out_norm_.forward(P, *h, out_t0_, keep);
        out_act_.forward(out_t0_, out_t1_, keep);
        conv_out_.forward(P, out_t1_, y, keep);
    }

    /// Accumulates d(loss)/d(params) into g given dy = d(loss)/d(eps_hat). Requires a kept forward pass.
    void backward(std::span<const S> p, std::span<S> g, const nn::Tensor<S>& dy) {
        require(g.size() == num_params(), "UNet1d: gradient vector has wrong length");
        const S* P = p.data();
        S* G = g.data();
        const int B = dy.B;

        d_temb_act_.setZero(arch_.time_embed_dim, B);
        conv_out_.backward(P, G, dy, &out_t1_);
        out_act_.backward(out_t1_, out_t0_);
        out_norm_.backward(P, G, out_t0_, dh_);

        d_down_.resize(down_out_.size());
        for (std::size_t k = 0; k < down_out_.size(); ++k)
            d_down_[k].resize_zero(down_out_[k].C, down_out_[k].B, down_out_[k].L);

        std::size_t skip = down_out_.size() - up_res_count_;
        for (std::size_t j = up_ops_.size(); j-- > 0;) {
            const auto& op = up_ops_[j];
            if (op.is_res) {
                up_res_[op.index].backward(P, G, dh_, dcat_, d_temb_act_);
                const int ch = dcat_.C - down_out_[skip].C;
                nn::split_channels(dcat_, ch, dh_, dskip_);
                nn::add_into(d_down_[skip], dskip_);
                ++skip;
            } else {
                up_conv_[op.index].backward(P, G, dh_, &dtmp_);
                nn::upsample_nearest2_backward(dtmp_, dh_);
            }
        }
        mid_[1].backward(P, G, dh_, dtmp_, d_temb_act_);
        mid_[0].backward(P, G, dtmp_, dh_, d_temb_act_);
        nn::add_into(d_down_.back(), dh_);

        for (std::size_t k = down_ops_.size(); k-- > 0;) {
            const auto& op = down_ops_[k];
            if (op.is_res)
                down_res_[op.index].backward(P, G, d_down_[k + 1], dtmp_, d_temb_act_);
            else
                down_conv_[op.index].backward(P, G, d_down_[k + 1], &dtmp_);
            nn::add_into(d_down_[k], dtmp_);
        }
        conv_in_.backward(P, G, d_down_[0], nullptr);

        silu_mat_backward(temb_z1_, d_temb_act_, d_z_);
        time1_.backward(P, G, d_z_, &d_a_);
        silu_mat_backward(temb_z0_, d_a_, d_z_);
        time0_.backward(P, G, d_z_, nullptr);
    }

    /// Batch-mean of per-point mean squared noise error; gradient written to `grad` (overwritten).
    double loss_and_grad(std::span<const S> p, const NoiseSchedule& sched, std::span<const TrainSample> batch,
                         std::span<S> grad) {
        require(!batch.empty(), "loss_and_grad: empty batch");
        require(grad.size() == num_params(), "loss_and_grad: gradient vector has wrong length");
        const auto L = batch[0].u0.size();
        const int B = static_cast<int>(batch.size());
        x_.resize(2, B, static_cast<int>(L));
        ts_.resize(batch.size());
        for (int b = 0; b < B; ++b) {
            const auto& s = batch[static_cast<std::size_t>(b)];
            require(s.u0.size() == L && s.a.size() == L && s.eps.size() == L, "loss_and_grad: shape mismatch");
            sched.check_step(s.t);
            ts_[static_cast<std::size_t>(b)] = s.t;
            const double ca = std::sqrt(sched.alpha_bar(s.t)), cn = std::sqrt(1.0 - sched.alpha_bar(s.t));
            for (std::size_t l = 0; l < L; ++l) {
                x_.at(0, b, static_cast<int>(l)) = static_cast<S>(s.a[l]);
                x_.at(1, b, static_cast<int>(l)) = static_cast<S>(ca * s.u0[l] + cn * s.eps[l]);
            }
        }
        forward(p, ts_, x_, y_, true);
        dy_.resize(1, B, static_cast<int>(L));
        double loss = 0.0;
        const double norm = 1.0 / (static_cast<double>(B) * static_cast<double>(L));
        for (int b = 0; b < B; ++b) {
            const auto& s = batch[static_cast<std::size_t>(b)];
            for (std::size_t l = 0; l < L; ++l) {
                const double r = s.eps[l] - static_cast<double>(y_.at(0, b, static_cast<int>(l)));
                loss += r * r;
                dy_.at(0, b, static_cast<int>(l)) = static_cast<S>(-2.0 * r * norm);
            }
        }
        std::fill(grad.begin(), grad.end(), S(0));
        backward(p, grad, dy_);
        return loss * norm;
    }

private:
    struct Op {
        bool is_res;
        std::size_t index;
    };

    void build() {
        const int c0 = arch_.base_channels, E = arch_.time_embed_dim, G = arch_.groups;
        time0_ = nn::Linear<S>(lb_, "time_mlp.0", c0, E);
        time1_ = nn::Linear<S>(lb_, "time_mlp.1", E, E);
        conv_in_ = nn::Conv1d<S>(lb_, "conv_in", arch_.in_channels, c0);

        std::vector<int> skip_ch{c0};
        int ch = c0;
        const int nl = arch_.levels();
        for (int i = 0; i < nl; ++i) {
            const int co = c0 * arch_.channel_mults[static_cast<std::size_t>(i)];
            for (int b = 0; b < arch_.blocks_per_res; ++b) {
                down_res_.emplace_back(lb_, "down." + std::to_string(i) + "." + std::to_string(b), ch, co, E, G);
                down_ops_.push_back({true, down_res_.size() - 1});
                ch = co;
                skip_ch.push_back(ch);
            }
            if (i != nl - 1) {
                down_conv_.emplace_back(lb_, "down." + std::to_string(i) + ".downsample", ch, ch, 3, 2);
                down_ops_.push_back({false, down_conv_.size() - 1});
                skip_ch.push_back(ch);
            }
        }
        mid_.emplace_back(lb_, "mid.0", ch, ch, E, G);
        mid_.emplace_back(lb_, "mid.1", ch, ch, E, G);
        for (int i = nl - 1; i >= 0; --i) {
            const int co = c0 * arch_.channel_mults[static_cast<std::size_t>(i)];
            for (int b = 0; b <= arch_.blocks_per_res; ++b) {
                const int sc = skip_ch.back();
                skip_ch.pop_back();
                up_res_.emplace_back(lb_, "up." + std::to_string(i) + "." + std::to_string(b), ch + sc, co, E, G);
                up_ops_.push_back({true, up_res_.size() - 1});
                ch = co;
            }
            if (i != 0) {
                up_conv_.emplace_back(lb_, "up." + std::to_string(i) + ".upsample", ch, ch, 3, 1);
                up_ops_.push_back({false, up_conv_.size() - 1});
            }
        }
        out_norm_ = nn::GroupNorm<S>(lb_, "out_norm", ch, G);
        conv_out_ = nn::Conv1d<S>(lb_, "conv_out", ch, 1);

        up_res_count_ = up_res_.size();
        down_out_.resize(down_ops_.size() + 1);
        mid_out_.resize(2);
        up_in_.resize(up_ops_.size());
        up_out_.resize(up_ops_.size());
    }

    static void silu_mat(const nn::RowMat<S>& z, nn::RowMat<S>& a) {
        a.resize(z.rows(), z.cols());
        for (Eigen::Index i = 0; i < z.size(); ++i) a.data()[i] = z.data()[i] * nn::sigmoid(z.data()[i]);
    }
    static void silu_mat_backward(const nn::RowMat<S>& z, const nn::RowMat<S>& da, nn::RowMat<S>& dz) {
        dz.resize(z.rows(), z.cols());
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            const S x = z.data()[i], s = nn::sigmoid(x);
            dz.data()[i] = da.data()[i] * s * (S(1) + x * (S(1) - s));
        }
    }

    ArchSpec arch_;
    nn::LayoutBuilder lb_;
    nn::Linear<S> time0_, time1_;
    nn::Conv1d<S> conv_in_, conv_out_;
    std::vector<nn::ResBlock<S>> down_res_, mid_, up_res_;
    std::vector<nn::Conv1d<S>> down_conv_, up_conv_;
    std::vector<Op> down_ops_, up_ops_;
    nn::GroupNorm<S> out_norm_;
    nn::SiLU<S> out_act_;
    std::size_t up_res_count_ = 0;

    // activations
    nn::RowMat<S> temb_in_, temb_z0_, temb_a0_, temb_z1_, temb_act_;
    std::vector<nn::Tensor<S>> down_out_, mid_out_, up_in_, up_out_;
    nn::Tensor<S> out_t0_, out_t1_;
    // backward scratch
    nn::RowMat<S> d_temb_act_, d_z_, d_a_;
    std::vector<nn::Tensor<S>> d_down_;
    nn::Tensor<S> dh_, dcat_, dskip_, dtmp_;
    // loss_and_grad scratch
    nn::Tensor<S> x_, y_, dy_;
    std::vector<int> ts_;
};

/// Fan-in scaled uniform convolution and dense weights, zero biases, unit GN scale, zero output conv.
template <class S = float>
EpsilonPredictor<S> init_params(const ArchSpec& arch, std::uint64_t seed) {
    UNet1d<S> net(arch);
    EpsilonPredictor<S> pred{arch, std::vector<S>(net.num_params(), S(0)), net.layout()};
    Rng rng(seed);
    for (const auto& e : pred.layout) {
        const auto& name = e.name;
        auto ends_with = [&](const std::string& suffix) {
            return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
        };
        S* dst = pred.params.data() + e.offset;
        if (ends_with(".scale")) {
            std::fill(dst, dst + e.size(), S(1));
        } else if (ends_with(".weight") && name.rfind("conv_out", 0) != 0) {
            std::size_t fan_in = 1;
            for (std::size_t d = 1; d < e.shape.size(); ++d) fan_in *= static_cast<std::size_t>(e.shape[d]);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (std::size_t i = 0; i < e.size(); ++i) dst[i] = static_cast<S>(rng.uniform(-bound, bound));
        }
    }
    return pred;
}

/// Single-input convenience wrapper around UNet1d::forward.
template <class S>
std::vector<double> forward(const EpsilonPredictor<S>& pred, int t, std::span<const double> ut,
                            std::span<const double> a) {
    require(ut.size() == a.size(), "forward: u_t and a lengths differ");
    pred.arch.check_length(ut.size());
    UNet1d<S> net(pred.arch);
    require(net.num_params() == pred.params.size(), "forward: parameter count does not match arch");
    nn::Tensor<S> x, y;
    const int L = static_cast<int>(ut.size());
    x.resize(2, 1, L);
    for (int l = 0; l < L; ++l) {
        x.at(0, 0, l) = static_cast<S>(a[static_cast<std::size_t>(l)]);
        x.at(1, 0, l) = static_cast<S>(ut[static_cast<std::size_t>(l)]);
    }
    const int ts[1] = {t};
    net.forward(pred.params, ts, x, y, false);
    return std::vector<double>(y.v.begin(), y.v.end());
}

template <class S>
struct LossGrad {
    double loss = 0.0;
    std::vector<S> grad;
};

template <class S>
LossGrad<S> loss_and_grad(const EpsilonPredictor<S>& pred, std::span<const TrainSample> batch,
                          const NoiseSchedule& sched) {
    UNet1d<S> net(pred.arch);
    require(net.num_params() == pred.params.size(), "loss_and_grad: parameter count does not match arch");
    for (const auto& s : batch) pred.arch.check_length(s.u0.size());
    LossGrad<S> out{0.0, std::vector<S>(pred.params.size())};
    out.loss = net.loss_and_grad(pred.params, sched, batch, out.grad);
    return out;
}

} // namespace pdno
