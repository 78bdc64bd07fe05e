#pragma once

// Discrete-time Gaussian diffusion: variance schedules, the forward marginal, the closed-form
// reverse posterior, the parameterized reverse step and the noise-prediction loss.
//
// Time indices run t = 1..T; index 0 holds the conventions alpha_bar_0 = 1, beta_0 = 0.

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace pdno {

enum class ScheduleKind { linear, cosine };

inline std::string to_string(ScheduleKind k) { return k == ScheduleKind::linear ? "linear" : "cosine"; }

inline ScheduleKind parse_schedule_kind(std::string_view s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    throw ValidationError("unknown schedule kind '" + std::string(s) + "'");
}

inline constexpr double kCosineOffset = 0.008;
inline constexpr double kMaxBeta = 0.999;

class NoiseSchedule {
public:
    NoiseSchedule() = default;

    ScheduleKind kind() const { return kind_; }
    int t_max() const { return t_max_; }

    double beta(int t) const { return beta_.at(index(t)); }
    double alpha(int t) const { return 1.0 - beta(t); }
    double alpha_bar(int t) const { return alpha_bar_.at(index(t)); }
    /// (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t; zero at t = 1.
    double posterior_var(int t) const { return posterior_var_.at(index(t)); }

    void check_step(int t) const {
        if (t < 1 || t > t_max_)
            throw ValidationError("time step " + std::to_string(t) + " outside [1, " + std::to_string(t_max_) + "]");
    }

    friend NoiseSchedule make_schedule(ScheduleKind kind, int t_max);
    friend NoiseSchedule schedule_from_betas(ScheduleKind kind, const std::vector<double>& betas);

private:
    std::size_t index(int t) const {
        if (t < 0 || t > t_max_) throw ValidationError("time index " + std::to_string(t) + " out of range");
        return static_cast<std::size_t>(t);
    }

    ScheduleKind kind_ = ScheduleKind::cosine;
    int t_max_ = 0;
    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
    std::vector<double> posterior_var_;
};

/// Builds the derived arrays from beta_1..beta_T. `kind` is only recorded.
inline NoiseSchedule schedule_from_betas(ScheduleKind kind, const std::vector<double>& betas) {
    require(betas.size() >= 2, "schedule: at least two steps required");
    for (double b : betas) require(b > 0.0 && b < 1.0, "schedule: every beta must lie in (0, 1)");
    NoiseSchedule s;
    s.kind_ = kind;
    s.t_max_ = static_cast<int>(betas.size());
    const std::size_t n = betas.size() + 1;
    s.beta_.assign(n, 0.0);
    s.alpha_bar_.assign(n, 1.0);
    s.posterior_var_.assign(n, 0.0);
    std::copy(betas.begin(), betas.end(), s.beta_.begin() + 1);
    for (std::size_t t = 1; t < n; ++t) {
        s.alpha_bar_[t] = s.alpha_bar_[t - 1] * (1.0 - s.beta_[t]);
        s.posterior_var_[t] = (1.0 - s.alpha_bar_[t - 1]) / (1.0 - s.alpha_bar_[t]) * s.beta_[t];
    }
    return s;
}

/// linear: beta spaced from 1e-4 to 0.02, both scaled by 1000/T.
/// cosine: alpha_bar_t = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) pi/2), s = 0.008.
/// Betas are clipped to 0.999 and alpha_bar is the running product of the clipped alphas.
inline NoiseSchedule make_schedule(ScheduleKind kind, int t_max) {
    require(t_max >= 2, "make_schedule: t_max must be >= 2");
    std::vector<double> betas(static_cast<std::size_t>(t_max));
    const double T = t_max;
    if (kind == ScheduleKind::linear) {
        const double scale = 1000.0 / T;
        const double lo = 1e-4 * scale, hi = 0.02 * scale;
        for (int t = 1; t <= t_max; ++t)
            betas[static_cast<std::size_t>(t - 1)] = std::min(lo + (hi - lo) * (t - 1) / (T - 1), kMaxBeta);
    } else {
        auto f = [T](double t) {
            const double c = std::cos((t / T + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2.0);
            return c * c;
        };
        const double f0 = f(0.0);
        for (int t = 1; t <= t_max; ++t) {
            const double ab = f(t) / f0, ab_prev = f(t - 1) / f0;
            betas[static_cast<std::size_t>(t - 1)] = std::min(1.0 - ab / ab_prev, kMaxBeta);
        }
    }
    return schedule_from_betas(kind, betas);
}

enum class CovKind { noise_free, gaussian_noise, mixed };

inline std::string to_string(CovKind k) {
    switch (k) {
    case CovKind::noise_free: return "noise_free";
    case CovKind::gaussian_noise: return "gaussian_noise";
    case CovKind::mixed: return "mixed";
    }
    return "?";
}

inline CovKind parse_cov_kind(std::string_view s) {
    if (s == "noise_free") return CovKind::noise_free;
    if (s == "gaussian_noise") return CovKind::gaussian_noise;
    if (s == "mixed") return CovKind::mixed;
    throw ValidationError("unknown covariance mode '" + std::string(s) + "'");
}

/// Reverse-step covariance rule. `lambda` weights the posterior variance in mixed mode.
struct CovMode {
    CovKind kind = CovKind::noise_free;
    std::optional<double> lambda;

    static CovMode noise_free() { return {CovKind::noise_free, std::nullopt}; }
    static CovMode gaussian_noise() { return {CovKind::gaussian_noise, std::nullopt}; }
    static CovMode mixed(double l) { return {CovKind::mixed, l}; }

    void validate() const {
        if (kind == CovKind::mixed) {
            require(lambda.has_value(), "mixed covariance mode requires lambda");
            require(*lambda >= 0.0 && *lambda <= 1.0, "mixed covariance lambda must lie in [0, 1]");
        } else {
            require(!lambda.has_value(), "lambda is only defined for mixed covariance mode");
        }
    }

    double variance(const NoiseSchedule& s, int t) const {
        validate();
        switch (kind) {
        case CovKind::noise_free: return s.posterior_var(t);
        case CovKind::gaussian_noise: return s.beta(t);
        case CovKind::mixed: return *lambda * s.posterior_var(t) + (1.0 - *lambda) * s.beta(t);
        }
        return 0.0;
    }

    bool operator==(const CovMode&) const = default;
};

namespace detail {
inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw ValidationError(std::string(what) + ": length mismatch");
}
} // namespace detail

/// u_t = sqrt(alpha_bar_t) u0 + sqrt(1 - alpha_bar_t) eps.
inline std::vector<double> forward_marginal_sample(const NoiseSchedule& s, std::span<const double> u0, int t,
                                                   std::span<const double> eps) {
    s.check_step(t);
    detail::require_same_size(u0.size(), eps.size(), "forward_marginal_sample");
    const double ca = std::sqrt(s.alpha_bar(t)), cn = std::sqrt(1.0 - s.alpha_bar(t));
    std::vector<double> out(u0.size());
    for (std::size_t j = 0; j < u0.size(); ++j) out[j] = ca * u0[j] + cn * eps[j];
    return out;
}

struct GaussianParams {
    std::vector<double> mean;
    double var = 0.0;
};

/// Parameters of p(u_{t-1} | u_t, u_0).
inline GaussianParams true_posterior_params(const NoiseSchedule& s, std::span<const double> u0,
                                            std::span<const double> ut, int t) {
    s.check_step(t);
    detail::require_same_size(u0.size(), ut.size(), "true_posterior_params");
    const double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1), b = s.beta(t);
    const double c_t = std::sqrt(s.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
    const double c_0 = std::sqrt(ab_prev) * b / (1.0 - ab);
    GaussianParams g;
    g.mean.resize(u0.size());
    for (std::size_t j = 0; j < u0.size(); ++j) g.mean[j] = c_t * ut[j] + c_0 * u0[j];
    g.var = s.posterior_var(t);
    return g;
}

/// Reverse mean (u_t - (1 - alpha_t)/sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_t).
inline std::vector<double> reverse_mean(const NoiseSchedule& s, std::span<const double> eps_hat,
                                        std::span<const double> ut, int t) {
    s.check_step(t);
    detail::require_same_size(eps_hat.size(), ut.size(), "reverse_mean");
    const double inv_sa = 1.0 / std::sqrt(s.alpha(t));
    const double k = (1.0 - s.alpha(t)) / std::sqrt(1.0 - s.alpha_bar(t));
    std::vector<double> m(ut.size());
    for (std::size_t j = 0; j < ut.size(); ++j) m[j] = inv_sa * (ut[j] - k * eps_hat[j]);
    return m;
}

/// One ancestral step u_{t-1} = mean + sqrt(Sigma_t) * noise.
inline std::vector<double> reverse_step(const NoiseSchedule& s, const CovMode& cov, std::span<const double> eps_hat,
                                        std::span<const double> ut, int t, std::span<const double> noise) {
    detail::require_same_size(noise.size(), ut.size(), "reverse_step");
    auto m = reverse_mean(s, eps_hat, ut, t);
    const double sd = std::sqrt(cov.variance(s, t));
    if (sd > 0.0)
        for (std::size_t j = 0; j < m.size(); ++j) m[j] += sd * noise[j];
    return m;
}

/// Replaces eps_hat by the noise implied by clamping the predicted u0 = (u_t - sqrt(1 - alpha_bar) eps_hat) / sqrt(alpha_bar)
/// to [lo, hi]. Entries whose predicted u0 is already inside the range are left untouched.
inline void clamp_denoised(const NoiseSchedule& s, std::span<double> eps_hat, std::span<const double> ut, int t,
                           double lo, double hi) {
    s.check_step(t);
    detail::require_same_size(eps_hat.size(), ut.size(), "clamp_denoised");
    require(lo <= hi, "clamp_denoised: empty range");
    const double sa = std::sqrt(s.alpha_bar(t)), sn = std::sqrt(1.0 - s.alpha_bar(t));
    for (std::size_t j = 0; j < ut.size(); ++j) {
        const double u0 = (ut[j] - sn * eps_hat[j]) / sa;
        if (u0 < lo) eps_hat[j] = (ut[j] - sa * lo) / sn;
        else if (u0 > hi) eps_hat[j] = (ut[j] - sa * hi) / sn;
    }
}

/// Factor multiplying ||eps - eps_hat||^2 in KL(true posterior || model reverse) at equal variances.
inline double vlb_weight(const NoiseSchedule& s, int t) {
    s.check_step(t);
    require(t >= 2, "vlb_weight: the posterior variance vanishes at t = 1");
    const double a = s.alpha(t);
    return (1.0 - a) * (1.0 - a) / (2.0 * s.posterior_var(t) * a * (1.0 - s.alpha_bar(t)));
}

/// KL(N(m1, v1 I) || N(m2, v2 I)).
inline double kl_diag_gaussian(std::span<const double> m1, double v1, std::span<const double> m2, double v2) {
    require(v1 > 0.0 && v2 > 0.0, "kl_diag_gaussian: variances must be positive");
    detail::require_same_size(m1.size(), m2.size(), "kl_diag_gaussian");
    // variance part kept apart from the mean part so equal variances contribute exactly zero
    const double var_term = 0.5 * (std::log(v2 / v1) + v1 / v2 - 1.0);
    double sq = 0.0;
    for (std::size_t j = 0; j < m1.size(); ++j) {
        const double d = m1[j] - m2[j];
        sq += d * d;
    }
    return static_cast<double>(m1.size()) * var_term + sq / (2.0 * v2);
}

/// Mean over grid points of (eps - eps_theta(t, u_t, a))^2, u_t built from (u0, eps).
/// `predictor` is any callable (int t, span ut, span a) -> std::vector<double>.
template <class Predictor>
double loss_target(const NoiseSchedule& s, std::span<const double> u0, std::span<const double> a, int t,
                   std::span<const double> eps, Predictor&& predictor) {
    detail::require_same_size(u0.size(), a.size(), "loss_target");
    detail::require_same_size(u0.size(), eps.size(), "loss_target");
    require(!u0.empty(), "loss_target: empty input");
    const auto ut = forward_marginal_sample(s, u0, t, eps);
    const std::vector<double> eps_hat = predictor(t, std::span<const double>(ut), a);
    detail::require_same_size(eps_hat.size(), eps.size(), "loss_target");
    double acc = 0.0;
    for (std::size_t j = 0; j < eps.size(); ++j) {
        const double d = eps[j] - eps_hat[j];
        acc += d * d;
    }
    return acc / static_cast<double>(eps.size());
}

} // namespace pdno
