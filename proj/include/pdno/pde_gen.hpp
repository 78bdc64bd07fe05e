#pragma once

// Ground-truth pairs for the two 1D problems:
//   elliptic1d   -(a u')' = 0 on (-1, 1), u(-1) = 0, u(1) = 1, a log-normal
//   advection1d  u_t + u_x = 0 on (0, 1), u(0, t) = 0, u(., 0) = 1{a~ >= 0}, output at t_f = 0.5

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "core_data.hpp"
#include "grf.hpp"
#include "rng.hpp"

namespace pdno {

struct NoiseSpec {
    double sigma = 0.0;

    void validate() const { require(std::isfinite(sigma) && sigma >= 0.0, "noise sigma must be >= 0"); }
};

enum class Problem { elliptic1d, advection1d };

inline std::string to_string(Problem p) { return p == Problem::elliptic1d ? "elliptic1d" : "advection1d"; }

inline Problem parse_problem(std::string_view s) {
    if (s == "elliptic1d") return Problem::elliptic1d;
    if (s == "advection1d") return Problem::advection1d;
    throw ValidationError("unknown problem '" + std::string(s) + "' (expected elliptic1d or advection1d)");
}

/// u(x) = (∫_{-1}^{1} 1/a)^{-1} ∫_{-1}^{x} 1/a, integrated with the composite trapezoidal rule.
inline Field solve_elliptic1d(const Field& a) {
    a.validate();
    const auto m = a.size();
    std::vector<double> cum(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        if (!(a[j] > 0.0)) throw ValidationError("solve_elliptic1d: coefficient must be positive");
    }
    const double h = a.grid.spacing();
    for (std::size_t j = 1; j < m; ++j) cum[j] = cum[j - 1] + 0.5 * h * (1.0 / a[j - 1] + 1.0 / a[j]);
    const double total = cum.back();
    for (auto& c : cum) c /= total;
    cum.front() = 0.0;
    cum.back() = 1.0;
    return Field(a.grid, std::move(cum));
}

/// Exact transport u(x, t_f) = u0(x - t_f) with zero inflow; off-grid feet use linear interpolation.
inline Field solve_advection1d(const Field& u0, double t_f) {
    u0.validate();
    require(std::isfinite(t_f) && t_f >= 0.0 && t_f <= 1.0, "solve_advection1d: t_f must lie in [0, 1]");
    const double shift = t_f / u0.grid.spacing(); // in cells
    const auto m = static_cast<std::ptrdiff_t>(u0.size());
    std::vector<double> out(u0.size(), 0.0);
    for (std::ptrdiff_t j = 0; j < m; ++j) {
        double p = static_cast<double>(j) - shift;
        if (std::abs(p - std::round(p)) < 1e-9) p = std::round(p);
        if (p < 0.0) continue;
        const auto i0 = static_cast<std::ptrdiff_t>(std::floor(p));
        const double w = p - static_cast<double>(i0);
        double v = u0[static_cast<std::size_t>(i0)];
        if (w > 0.0 && i0 + 1 < m) v = (1.0 - w) * v + w * u0[static_cast<std::size_t>(i0 + 1)];
        out[static_cast<std::size_t>(j)] = v;
    }
    return Field(u0.grid, std::move(out));
}

/// Replaces every output value u by u + sigma * z; sample i draws from seed rng_seed ^ i.
inline PairDataset corrupt_outputs(const PairDataset& ds, NoiseSpec noise, std::uint64_t rng_seed) {
    ds.validate();
    noise.validate();
    PairDataset out = ds;
    out.meta.sigma = noise.sigma;
    if (noise.sigma == 0.0) return out;
    for (std::size_t i = 0; i < out.n(); ++i) {
        Rng rng(rng_seed ^ static_cast<std::uint64_t>(i));
        for (auto& v : out.outputs[i]) v += noise.sigma * rng.normal();
    }
    return out;
}

inline constexpr double kAdvectionFinalTime = 0.5;

inline constexpr std::uint64_t noise_seed_for(std::uint64_t base_seed) { return combine_seeds(base_seed, 0x6e6f697365ULL); }

/// Assembles n pairs with per-sample seed base_seed ^ index; noise is applied last.
inline PairDataset build_dataset(Problem problem, int n, int m, std::uint64_t base_seed, NoiseSpec noise) {
    require(n >= 1, "build_dataset: n must be >= 1");
    require(m >= 2, "build_dataset: m must be >= 2");
    noise.validate();

    PairDataset ds;
    ds.meta.problem = to_string(problem);
    ds.meta.seed = base_seed;
    ds.inputs.reserve(static_cast<std::size_t>(n));
    ds.outputs.reserve(static_cast<std::size_t>(n));

    if (problem == Problem::elliptic1d) {
        TrigGrfSpec spec{5, 0.1, Grid1D(-1.0, 1.0, m)};
        ds.grid = spec.grid;
        for (int i = 0; i < n; ++i) {
            Field a = sample_lognormal_field(spec, base_seed ^ static_cast<std::uint64_t>(i));
            ds.outputs.push_back(solve_elliptic1d(a).values);
            ds.inputs.push_back(std::move(a.values));
        }
        ds.meta.params = {{"n_modes", spec.n_modes}, {"beta", spec.beta}, {"quadrature", "trapezoid"}};
    } else {
        SpectralGrfSpec spec{100.0, 2.0, 0, Grid1D(0.0, 1.0, m)};
        ds.grid = spec.grid;
        for (int i = 0; i < n; ++i) {
            Field u0 = threshold_indicator(sample_neumann_grf(spec, base_seed ^ static_cast<std::uint64_t>(i)));
            ds.outputs.push_back(solve_advection1d(u0, kAdvectionFinalTime).values);
            ds.inputs.push_back(std::move(u0.values));
        }
        ds.meta.params = {{"tau", spec.tau},
                          {"r", spec.r},
                          {"k_max", spec.modes()},
                          {"truncation", "spectral"},
                          {"t_f", kAdvectionFinalTime},
                          {"interpolation", "linear"}};
    }
    ds.meta.params["sample_seed_rule"] = "base_seed xor index";

    if (noise.sigma > 0.0) {
        ds = corrupt_outputs(ds, noise, noise_seed_for(base_seed));
        ds.meta.params["noise_seed_rule"] = "splitmix(base_seed) xor index";
    }
    ds.meta.sigma = noise.sigma;
    return ds;
}

} // namespace pdno
