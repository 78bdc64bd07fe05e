#pragma once

// Batched 1D layers with explicit backward passes.
//
// Activations use a channel-major layout [C][B][L]: row c holds the B*L values of channel c,
// so a convolution over the whole batch is one GEMM against an im2col matrix.
// Parameters live in one flat vector; layers keep offsets into it.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace pdno::nn {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<RowMat<S>>;
template <class S>
using CMatMap = Eigen::Map<const RowMat<S>>;

template <class S>
struct Tensor {
    int C = 0, B = 0, L = 0;
    std::vector<S> v;

    void resize(int c, int b, int l) {
        C = c;
        B = b;
        L = l;
        v.resize(static_cast<std::size_t>(c) * b * l);
    }
    void zero() { std::fill(v.begin(), v.end(), S(0)); }
    void resize_zero(int c, int b, int l) {
        resize(c, b, l);
        zero();
    }
    std::size_t n() const { return static_cast<std::size_t>(B) * L; }
    S* row(int c) { return v.data() + static_cast<std::size_t>(c) * n(); }
    const S* row(int c) const { return v.data() + static_cast<std::size_t>(c) * n(); }
    S& at(int c, int b, int l) { return v[(static_cast<std::size_t>(c) * B + b) * L + l]; }
    S at(int c, int b, int l) const { return v[(static_cast<std::size_t>(c) * B + b) * L + l]; }
    MatMap<S> mat() { return MatMap<S>(v.data(), C, static_cast<Eigen::Index>(n())); }
    CMatMap<S> mat() const { return CMatMap<S>(v.data(), C, static_cast<Eigen::Index>(n())); }
};

/// Registers parameter blocks in traversal order and hands out offsets.
struct LayoutBuilder {
    struct Entry {
        std::string name;
        std::size_t offset;
        std::vector<int> shape;
        std::size_t size() const {
            std::size_t s = 1;
            for (int d : shape) s *= static_cast<std::size_t>(d);
            return s;
        }
    };
    std::vector<Entry> entries;
    std::size_t total = 0;

    std::size_t add(std::string name, std::vector<int> shape) {
        Entry e{std::move(name), total, std::move(shape)};
        total += e.size();
        entries.push_back(std::move(e));
        return entries.back().offset;
    }
};

template <class S>
inline S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------

template <class S>
struct SiLU {
    Tensor<S> in;

    void forward(const Tensor<S>& x, Tensor<S>& y, bool keep) {
        y.resize(x.C, x.B, x.L);
        const std::size_t n = x.v.size();
        for (std::size_t i = 0; i < n; ++i) y.v[i] = x.v[i] * sigmoid(x.v[i]);
        if (keep) in = x;
    }

    void backward(const Tensor<S>& dy, Tensor<S>& dx) const {
        dx.resize(in.C, in.B, in.L);
        const std::size_t n = in.v.size();
        for (std::size_t i = 0; i < n; ++i) {
            const S x = in.v[i], s = sigmoid(x);
            dx.v[i] = dy.v[i] * s * (S(1) + x * (S(1) - s));
        }
    }
};

// ---------------------------------------------------------------------------

/// Conv1d with zero padding. Weight [cout][cin][k], bias [cout].
template <class S>
struct Conv1d {
    int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
    std::size_t w_off = 0, b_off = 0;
    Tensor<S> cols; // im2col of the last kept input
    int lin = 0;

    Conv1d() = default;
    Conv1d(LayoutBuilder& lb, const std::string& name, int cin_, int cout_, int k_ = 3, int stride_ = 1)
        : cin(cin_), cout(cout_), k(k_), stride(stride_), pad(k_ / 2) {
        w_off = lb.add(name + ".weight", {cout, cin, k});
        b_off = lb.add(name + ".bias", {cout});
    }

    int out_len(int l) const { return (l + 2 * pad - k) / stride + 1; }

    void im2col(const Tensor<S>& x, Tensor<S>& c) const {
        const int lout = out_len(x.L);
        c.resize(cin * k, x.B, lout);
        for (int ci = 0; ci < cin; ++ci)
            for (int kk = 0; kk < k; ++kk) {
                S* dst = c.row(ci * k + kk);
                const S* src = x.row(ci);
                for (int b = 0; b < x.B; ++b) {
                    S* d = dst + static_cast<std::size_t>(b) * lout;
                    const S* s = src + static_cast<std::size_t>(b) * x.L;
                    for (int lo = 0; lo < lout; ++lo) {
                        const int li = lo * stride + kk - pad;
                        d[lo] = (li >= 0 && li < x.L) ? s[li] : S(0);
                    }
                }
            }
    }

    void forward(const S* p, const Tensor<S>& x, Tensor<S>& y, bool keep) {
        assert(x.C == cin);
        lin = x.L;
        const int lout = out_len(x.L);
        y.resize(cout, x.B, lout);
        CMatMap<S> w(p + w_off, cout, cin * k);
        const bool direct = (k == 1 && stride == 1);
        if (direct) {
            y.mat().noalias() = w * x.mat();
            if (keep) cols = x;
        } else {
            Tensor<S>& c = keep ? cols : scratch_;
            im2col(x, c);
            y.mat().noalias() = w * c.mat();
        }
        const S* bias = p + b_off;
        const std::size_t n = y.n();
        for (int co = 0; co < cout; ++co) {
            S* r = y.row(co);
            for (std::size_t i = 0; i < n; ++i) r[i] += bias[co];
        }
    }

    /// Accumulates parameter gradients into g; writes (not accumulates) dx.
    void backward(const S* p, S* g, const Tensor<S>& dy, Tensor<S>* dx) {
        MatMap<S> gw(g + w_off, cout, cin * k);
        gw.noalias() += dy.mat() * cols.mat().transpose();
        S* gb = g + b_off;
        const std::size_t n = dy.n();
        for (int co = 0; co < cout; ++co) {
            const S* r = dy.row(co);
            S acc = 0;
            for (std::size_t i = 0; i < n; ++i) acc += r[i];
            gb[co] += acc;
        }
        if (!dx) return;
        CMatMap<S> w(p + w_off, cout, cin * k);
        dx->resize(cin, dy.B, lin);
        if (k == 1 && stride == 1) {
            dx->mat().noalias() = w.transpose() * dy.mat();
            return;
        }
        scratch_.resize(cin * k, dy.B, dy.L);
        scratch_.mat().noalias() = w.transpose() * dy.mat();
        dx->zero();
        const int lout = dy.L;
        for (int ci = 0; ci < cin; ++ci) {
            S* dst = dx->row(ci);
            for (int kk = 0; kk < k; ++kk) {
                const S* src = scratch_.row(ci * k + kk);
                for (int b = 0; b < dy.B; ++b) {
                    S* d = dst + static_cast<std::size_t>(b) * lin;
                    const S* s = src + static_cast<std::size_t>(b) * lout;
                    for (int lo = 0; lo < lout; ++lo) {
                        const int li = lo * stride + kk - pad;
                        if (li >= 0 && li < lin) d[li] += s[lo];
                    }
                }
            }
        }
    }

private:
    Tensor<S> scratch_;
};

// ---------------------------------------------------------------------------

/// Largest divisor of `channels` not exceeding `requested`.
inline int group_count(int channels, int requested) {
    int g = std::max(1, std::min(requested, channels));
    while (channels % g != 0) --g;
    return g;
}

/// Group normalization over (channels in group) x length, per batch element.
template <class S>
struct GroupNorm {
    int channels = 0, groups = 1;
    std::size_t scale_off = 0, shift_off = 0;
    S eps = S(1e-5);
    Tensor<S> xhat;
    std::vector<S> inv_std; // [b * groups + g]

    GroupNorm() = default;
    GroupNorm(LayoutBuilder& lb, const std::string& name, int c, int requested_groups)
        : channels(c), groups(group_count(c, requested_groups)) {
        scale_off = lb.add(name + ".scale", {c});
        shift_off = lb.add(name + ".shift", {c});
    }

    void forward(const S* p, const Tensor<S>& x, Tensor<S>& y, bool keep) {
        assert(x.C == channels);
        const int cpg = channels / groups;
        y.resize(x.C, x.B, x.L);
        Tensor<S>& xh = keep ? xhat : y;
        if (keep) xhat.resize(x.C, x.B, x.L);
        inv_std.resize(static_cast<std::size_t>(x.B) * groups);
        const double count = static_cast<double>(cpg) * x.L;
        for (int b = 0; b < x.B; ++b)
            for (int gi = 0; gi < groups; ++gi) {
                double sum = 0.0;
                for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
                    const S* r = x.row(c) + static_cast<std::size_t>(b) * x.L;
                    for (int l = 0; l < x.L; ++l) sum += r[l];
                }
                const double mean = sum / count;
                double sq = 0.0;
                for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
                    const S* r = x.row(c) + static_cast<std::size_t>(b) * x.L;
                    for (int l = 0; l < x.L; ++l) {
                        const double d = r[l] - mean;
                        sq += d * d;
                    }
                }
                const S is = static_cast<S>(1.0 / std::sqrt(sq / count + static_cast<double>(eps)));
                inv_std[static_cast<std::size_t>(b) * groups + gi] = is;
                const S mu = static_cast<S>(mean);
                for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
                    const S* r = x.row(c) + static_cast<std::size_t>(b) * x.L;
                    S* h = xh.row(c) + static_cast<std::size_t>(b) * x.L;
                    for (int l = 0; l < x.L; ++l) h[l] = (r[l] - mu) * is;
                }
            }
        const S* scale = p + scale_off;
        const S* shift = p + shift_off;
        const std::size_t n = y.n();
        for (int c = 0; c < channels; ++c) {
            const S* h = xh.row(c);
            S* r = y.row(c);
            for (std::size_t i = 0; i < n; ++i) r[i] = h[i] * scale[c] + shift[c];
        }
    }

    void backward(const S* p, S* g, const Tensor<S>& dy, Tensor<S>& dx) const {
        const int cpg = channels / groups;
        const S* scale = p + scale_off;
        S* gscale = g + scale_off;
        S* gshift = g + shift_off;
        const std::size_t n = dy.n();
        for (int c = 0; c < channels; ++c) {
            const S* d = dy.row(c);
            const S* h = xhat.row(c);
            S a = 0, b = 0;
            for (std::size_t i = 0; i < n; ++i) {
                a += d[i] * h[i];
                b += d[i];
            }
            gscale[c] += a;
            gshift[c] += b;
        }
        dx.resize(dy.C, dy.B, dy.L);
        const S count = static_cast<S>(cpg * dy.L);
        for (int b = 0; b < dy.B; ++b)
            for (int gi = 0; gi < groups; ++gi) {
                S mean_d = 0, mean_dh = 0;
                for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
                    const S* d = dy.row(c) + static_cast<std::size_t>(b) * dy.L;
                    const S* h = xhat.row(c) + static_cast<std::size_t>(b) * dy.L;
                    for (int l = 0; l < dy.L; ++l) {
                        const S dh = d[l] * scale[c];
                        mean_d += dh;
                        mean_dh += dh * h[l];
                    }
                }
                mean_d /= count;
                mean_dh /= count;
                const S is = inv_std[static_cast<std::size_t>(b) * groups + gi];
                for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
                    const S* d = dy.row(c) + static_cast<std::size_t>(b) * dy.L;
                    const S* h = xhat.row(c) + static_cast<std::size_t>(b) * dy.L;
                    S* o = dx.row(c) + static_cast<std::size_t>(b) * dy.L;
                    for (int l = 0; l < dy.L; ++l) o[l] = is * (d[l] * scale[c] - mean_d - h[l] * mean_dh);
                }
            }
    }
};

// ---------------------------------------------------------------------------

/// Dense layer on [in][B] columns. Weight [out][in], bias [out].
template <class S>
struct Linear {
    int in = 0, out = 0;
    std::size_t w_off = 0, b_off = 0;
    RowMat<S> x_cache;

    Linear() = default;
    Linear(LayoutBuilder& lb, const std::string& name, int in_, int out_) : in(in_), out(out_) {
        w_off = lb.add(name + ".weight", {out, in});
        b_off = lb.add(name + ".bias", {out});
    }

    void forward(const S* p, const RowMat<S>& x, RowMat<S>& y, bool keep) {
        CMatMap<S> w(p + w_off, out, in);
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> b(p + b_off, out);
        y.noalias() = w * x;
        y.colwise() += b;
        if (keep) x_cache = x;
    }

    void backward(const S* p, S* g, const RowMat<S>& dy, RowMat<S>* dx) const {
        MatMap<S> gw(g + w_off, out, in);
        gw.noalias() += dy * x_cache.transpose();
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> gb(g + b_off, out);
        gb += dy.rowwise().sum();
        if (dx) {
            CMatMap<S> w(p + w_off, out, in);
            dx->noalias() = w.transpose() * dy;
        }
    }
};

// ---------------------------------------------------------------------------

template <class S>
inline void upsample_nearest2(const Tensor<S>& x, Tensor<S>& y) {
    y.resize(x.C, x.B, 2 * x.L);
    const std::size_t rows = static_cast<std::size_t>(x.C) * x.B;
    for (std::size_t r = 0; r < rows; ++r) {
        const S* s = x.v.data() + r * x.L;
        S* d = y.v.data() + r * y.L;
        for (int l = 0; l < x.L; ++l) d[2 * l] = d[2 * l + 1] = s[l];
    }
}

template <class S>
inline void upsample_nearest2_backward(const Tensor<S>& dy, Tensor<S>& dx) {
    dx.resize(dy.C, dy.B, dy.L / 2);
    const std::size_t rows = static_cast<std::size_t>(dy.C) * dy.B;
    for (std::size_t r = 0; r < rows; ++r) {
        const S* s = dy.v.data() + r * dy.L;
        S* d = dx.v.data() + r * dx.L;
        for (int l = 0; l < dx.L; ++l) d[l] = s[2 * l] + s[2 * l + 1];
    }
}

/// y = [a; b] along channels.
template <class S>
inline void concat_channels(const Tensor<S>& a, const Tensor<S>& b, Tensor<S>& y) {
    assert(a.B == b.B && a.L == b.L);
    y.resize(a.C + b.C, a.B, a.L);
    std::copy(a.v.begin(), a.v.end(), y.v.begin());
    std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
}

template <class S>
inline void split_channels(const Tensor<S>& y, int ca, Tensor<S>& a, Tensor<S>& b) {
    a.resize(ca, y.B, y.L);
    b.resize(y.C - ca, y.B, y.L);
    const auto cut = static_cast<std::ptrdiff_t>(a.v.size());
    std::copy(y.v.begin(), y.v.begin() + cut, a.v.begin());
    std::copy(y.v.begin() + cut, y.v.end(), b.v.begin());
}

template <class S>
inline void add_into(Tensor<S>& acc, const Tensor<S>& x) {
    assert(acc.v.size() == x.v.size());
    for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += x.v[i];
}

} // namespace pdno::nn
