#pragma once

#include <optional>
#include <string>

#include "layers.hpp"

namespace pdno::nn {

/// GN -> SiLU -> conv -> (+ time shift) -> GN -> SiLU -> conv, plus identity or 1x1 skip.
template <class S>
struct ResBlock {
    int cin = 0, cout = 0;
    GroupNorm<S> gn1, gn2;
    SiLU<S> act1, act2;
    Conv1d<S> conv1, conv2;
    Linear<S> temb_proj;
    std::optional<Conv1d<S>> skip;

    ResBlock() = default;
    ResBlock(LayoutBuilder& lb, const std::string& name, int cin_, int cout_, int temb_dim, int groups)
        : cin(cin_), cout(cout_) {
        gn1 = GroupNorm<S>(lb, name + ".norm1", cin, groups);
        conv1 = Conv1d<S>(lb, name + ".conv1", cin, cout);
        temb_proj = Linear<S>(lb, name + ".temb_proj", temb_dim, cout);
        gn2 = GroupNorm<S>(lb, name + ".norm2", cout, groups);
        conv2 = Conv1d<S>(lb, name + ".conv2", cout, cout);
        if (cin != cout) skip = Conv1d<S>(lb, name + ".skip", cin, cout, 1);
    }

    /// `temb_act` is SiLU(time embedding), shape [temb_dim][B].
    void forward(const S* p, const Tensor<S>& x, const RowMat<S>& temb_act, Tensor<S>& y, bool keep) {
        gn1.forward(p, x, t0_, keep);
        act1.forward(t0_, t1_, keep);
        conv1.forward(p, t1_, t2_, keep);
        temb_proj.forward(p, temb_act, shift_, keep);
        for (int c = 0; c < cout; ++c)
            for (int b = 0; b < x.B; ++b) {
                const S s = shift_(c, b);
                S* r = t2_.row(c) + static_cast<std::size_t>(b) * x.L;
                for (int l = 0; l < x.L; ++l) r[l] += s;
            }
        gn2.forward(p, t2_, t0_, keep);
        act2.forward(t0_, t1_, keep);
        conv2.forward(p, t1_, y, keep);
        if (skip) {
            skip->forward(p, x, t2_, keep);
            add_into(y, t2_);
        } else {
            add_into(y, x);
        }
    }

    /// Writes dx; accumulates parameter gradients into g and the time-embedding gradient into d_temb_act.
    void backward(const S* p, S* g, const Tensor<S>& dy, Tensor<S>& dx, RowMat<S>& d_temb_act) {
        conv2.backward(p, g, dy, &t0_);
        act2.backward(t0_, t1_);
        gn2.backward(p, g, t1_, t0_); // t0_ = d(conv1 output + shift)
        dshift_.resize(cout, dy.B);
        for (int c = 0; c < cout; ++c)
            for (int b = 0; b < dy.B; ++b) {
                const S* r = t0_.row(c) + static_cast<std::size_t>(b) * dy.L;
                S acc = 0;
                for (int l = 0; l < dy.L; ++l) acc += r[l];
                dshift_(c, b) = acc;
            }
        temb_proj.backward(p, g, dshift_, &dtemb_);
        d_temb_act += dtemb_;
        conv1.backward(p, g, t0_, &t1_);
        act1.backward(t1_, t2_);
        gn1.backward(p, g, t2_, dx);
        if (skip) {
            skip->backward(p, g, dy, &t1_);
            add_into(dx, t1_);
        } else {
            add_into(dx, dy);
        }
    }

private:
    Tensor<S> t0_, t1_, t2_;
    RowMat<S> shift_, dshift_, dtemb_;
};

} // namespace pdno::nn
