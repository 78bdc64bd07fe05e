#pragma once

// Random input fields:
//  - log-normal trigonometric field a = exp(beta * V), V = n^{-1/2} sum_k A_k cos(pi k x) + B_k sin(pi k x)
//  - Gaussian field with covariance (-d_xx + tau^2)^{-r} under zero Neumann conditions on [0, 1],
//    sampled through its cosine eigen-expansion truncated at k_max.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "core_data.hpp"
#include "rng.hpp"

namespace pdno {

struct TrigGrfSpec {
    int n_modes = 5;
    double beta = 0.1;
    Grid1D grid{-1.0, 1.0, 64};

    void validate() const {
        grid.validate();
        require(n_modes >= 1, "TrigGrfSpec: n_modes must be >= 1");
        require(beta > 0.0, "TrigGrfSpec: beta must be > 0");
    }
};

struct SpectralGrfSpec {
    double tau = 100.0;
    double r = 2.0;
    int k_max = 0; ///< 0 selects grid.m / 2
    Grid1D grid{0.0, 1.0, 256};

    int modes() const { return k_max > 0 ? k_max : grid.m / 2; }

    void validate() const {
        grid.validate();
        require(tau > 0.0, "SpectralGrfSpec: tau must be > 0");
        require(r > 0.0, "SpectralGrfSpec: r must be > 0");
        require(k_max >= 0, "SpectralGrfSpec: k_max must be >= 1 (or 0 for default)");
    }
};

/// V(x_j) for explicit coefficients; `cos_coef[k-1]` and `sin_coef[k-1]` multiply mode k.
inline std::vector<double> trig_potential(const Grid1D& grid, const std::vector<double>& cos_coef,
                                          const std::vector<double>& sin_coef) {
    require(cos_coef.size() == sin_coef.size() && !cos_coef.empty(), "trig_potential: coefficient mismatch");
    const double scale = 1.0 / std::sqrt(static_cast<double>(cos_coef.size()));
    std::vector<double> v(static_cast<std::size_t>(grid.m), 0.0);
    for (int j = 0; j < grid.m; ++j) {
        const double x = grid.x(j);
        double acc = 0.0;
        for (std::size_t k = 1; k <= cos_coef.size(); ++k) {
            const double w = std::numbers::pi * static_cast<double>(k) * x;
            acc += cos_coef[k - 1] * std::cos(w) + sin_coef[k - 1] * std::sin(w);
        }
        v[static_cast<std::size_t>(j)] = scale * acc;
    }
    return v;
}

/// Draws the 2*n_modes Gaussian coefficients (A_1..A_n, then B_1..B_n).
inline std::vector<double> draw_trig_coefficients(const TrigGrfSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    return rng.normals(2 * static_cast<std::size_t>(spec.n_modes));
}

inline Field lognormal_field_from_coefficients(const TrigGrfSpec& spec, const std::vector<double>& coeffs) {
    spec.validate();
    const auto n = static_cast<std::size_t>(spec.n_modes);
    require(coeffs.size() == 2 * n, "lognormal field expects 2*n_modes coefficients");
    std::vector<double> a_cos(coeffs.begin(), coeffs.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<double> b_sin(coeffs.begin() + static_cast<std::ptrdiff_t>(n), coeffs.end());
    auto v = trig_potential(spec.grid, a_cos, b_sin);
    for (auto& x : v) x = std::exp(spec.beta * x);
    return Field(spec.grid, std::move(v));
}

inline Field sample_lognormal_field(const TrigGrfSpec& spec, std::uint64_t seed) {
    return lognormal_field_from_coefficients(spec, draw_trig_coefficients(spec, seed));
}

/// Standard deviation of the k-th Neumann eigen-coefficient, k = 0..k_max.
inline double neumann_mode_scale(const SpectralGrfSpec& spec, int k) {
    if (k == 0) return std::pow(spec.tau, -spec.r);
    const double lam = std::numbers::pi * std::numbers::pi * k * k + spec.tau * spec.tau;
    return std::pow(lam, -spec.r / 2.0) * std::numbers::sqrt2;
}

/// ξ_0..ξ_{k_max} given explicitly.
inline Field neumann_grf_from_coefficients(const SpectralGrfSpec& spec, const std::vector<double>& xi) {
    spec.validate();
    const int kmax = spec.modes();
    require(xi.size() == static_cast<std::size_t>(kmax) + 1, "neumann GRF expects k_max + 1 coefficients");
    std::vector<double> scale(xi.size());
    for (int k = 0; k <= kmax; ++k) scale[static_cast<std::size_t>(k)] = neumann_mode_scale(spec, k);
    std::vector<double> v(static_cast<std::size_t>(spec.grid.m));
    for (int j = 0; j < spec.grid.m; ++j) {
        const double x = spec.grid.x(j);
        double acc = xi[0] * scale[0];
        for (int k = 1; k <= kmax; ++k)
            acc += xi[static_cast<std::size_t>(k)] * scale[static_cast<std::size_t>(k)] *
                   std::cos(std::numbers::pi * k * x);
        v[static_cast<std::size_t>(j)] = acc;
    }
    return Field(spec.grid, std::move(v));
}

inline Field sample_neumann_grf(const SpectralGrfSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    return neumann_grf_from_coefficients(spec, rng.normals(static_cast<std::size_t>(spec.modes()) + 1));
}

/// Pointwise variance of the truncated expansion at x.
inline double neumann_grf_variance(const SpectralGrfSpec& spec, double x) {
    double var = std::pow(spec.tau, -2.0 * spec.r);
    for (int k = 1; k <= spec.modes(); ++k) {
        const double c = std::cos(std::numbers::pi * k * x);
        var += 2.0 * std::pow(std::numbers::pi * std::numbers::pi * k * k + spec.tau * spec.tau, -spec.r) * c * c;
    }
    return var;
}

/// 1 where f >= 0, else 0.
inline Field threshold_indicator(const Field& f) {
    std::vector<double> v(f.size());
    for (std::size_t j = 0; j < f.size(); ++j) v[j] = f[j] >= 0.0 ? 1.0 : 0.0;
    return Field(f.grid, std::move(v));
}

} // namespace pdno
