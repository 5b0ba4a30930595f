#pragma once

#include "tarma/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace tarma {

enum class LossFamily { power_divergence, bisquare, least_squares };

/// How the residual scale is estimated during a fit.
/// `automatic` picks rms for the likelihood-equivalent losses (least
/// squares, power divergence with alpha = 0) and mad otherwise.
enum class ScalePolicy { automatic, mad, rms, fixed };

struct LossSpec {
    LossFamily family = LossFamily::power_divergence;
    double alpha = 0.0;  // power divergence tuning, >= 0
    double c = 4.685;    // bisquare tuning
    ScalePolicy scale = ScalePolicy::automatic;
    double fixed_sigma = 1.0;

    static LossSpec power_divergence(double alpha) { return {LossFamily::power_divergence, alpha}; }
    static LossSpec bisquare(double c = 4.685) { return {LossFamily::bisquare, 0.0, c}; }
    static LossSpec least_squares() { return {LossFamily::least_squares}; }

    /// True when the minimizer coincides with least squares.
    bool is_least_squares() const {
        return family == LossFamily::least_squares || (family == LossFamily::power_divergence && alpha == 0.0);
    }

    ScalePolicy resolved_scale() const {
        if (scale != ScalePolicy::automatic) return scale;
        return is_least_squares() ? ScalePolicy::rms : ScalePolicy::mad;
    }

    bool operator==(const LossSpec&) const = default;
};

inline void check_loss(const LossSpec& spec) {
    if (spec.family == LossFamily::power_divergence && !(spec.alpha >= 0.0 && std::isfinite(spec.alpha)))
        throw ConfigError("power-divergence alpha must be a finite value >= 0");
    if (spec.family == LossFamily::bisquare && !(spec.c > 0.0)) throw ConfigError("bisquare c must be positive");
    if (spec.scale == ScalePolicy::fixed && !(spec.fixed_sigma > 0.0))
        throw ConfigError("fixed scale must be positive");
}

namespace detail {
inline void check_sigma(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("scale sigma must be positive and finite");
}
}  // namespace detail

/**
 * Loss of a residual e at scale sigma.
 *
 * Power divergence, alpha > 0:  -[(2 pi sigma^2)^(-alpha/2) exp(-alpha e^2 / (2 sigma^2)) - 1] / alpha
 * Power divergence, alpha = 0:  log(2 pi)/2 + log(sigma^2)/2 + e^2 / (2 sigma^2)   (negative Gaussian log-density)
 * Bisquare:                     c^2/6 [1 - (1 - (u/c)^2)^3] for |u| <= c, c^2/6 beyond; u = e/sigma
 * Least squares:                e^2 / (2 sigma^2)
 *
 * The power-divergence form keeps its additive constant, so rho(0) != 0;
 * subtract rho(0, sigma, spec) when a zero-anchored loss is needed.
 */
inline double rho(double e, double sigma, const LossSpec& spec) {
    detail::check_sigma(sigma);
    switch (spec.family) {
        case LossFamily::power_divergence: {
            const double log_norm = std::log(2.0 * std::numbers::pi * sigma * sigma);
            const double z2 = e * e / (2.0 * sigma * sigma);
            if (spec.alpha == 0.0) return 0.5 * log_norm + z2;
            // -expm1 keeps the small-alpha limit accurate
            return -std::expm1(-spec.alpha * (0.5 * log_norm + z2)) / spec.alpha;
        }
        case LossFamily::bisquare: {
            const double u = e / sigma / spec.c;
            const double cap = spec.c * spec.c / 6.0;
            if (std::abs(u) >= 1.0) return cap;
            const double v = 1.0 - u * u;
            return cap * (1.0 - v * v * v);
        }
        case LossFamily::least_squares: return e * e / (2.0 * sigma * sigma);
    }
    return 0.0;
}

/// d rho / d e.
inline double psi(double e, double sigma, const LossSpec& spec) {
    detail::check_sigma(sigma);
    const double s2 = sigma * sigma;
    switch (spec.family) {
        case LossFamily::power_divergence: {
            if (spec.alpha == 0.0) return e / s2;
            const double f = std::exp(-spec.alpha * (0.5 * std::log(2.0 * std::numbers::pi * s2) + e * e / (2.0 * s2)));
            return f * e / s2;
        }
        case LossFamily::bisquare: {
            const double u = e / sigma / spec.c;
            if (std::abs(u) >= 1.0) return 0.0;
            const double v = 1.0 - u * u;
            return e / s2 * v * v;
        }
        case LossFamily::least_squares: return e / s2;
    }
    return 0.0;
}

/// d^2 rho / d e^2.
inline double psi_prime(double e, double sigma, const LossSpec& spec) {
    detail::check_sigma(sigma);
    const double s2 = sigma * sigma;
    switch (spec.family) {
        case LossFamily::power_divergence: {
            if (spec.alpha == 0.0) return 1.0 / s2;
            const double f = std::exp(-spec.alpha * (0.5 * std::log(2.0 * std::numbers::pi * s2) + e * e / (2.0 * s2)));
            return f / s2 * (1.0 - spec.alpha * e * e / s2);
        }
        case LossFamily::bisquare: {
            const double u = e / sigma / spec.c;
            if (std::abs(u) >= 1.0) return 0.0;
            const double v = 1.0 - u * u;
            return v * (v - 4.0 * u * u) / s2;
        }
        case LossFamily::least_squares: return 1.0 / s2;
    }
    return 0.0;
}

/**
 * IRLS weight psi(e)/e, normalized so the weight at e = 0 is 1.
 * Power divergence gives exp(-alpha e^2 / (2 sigma^2)), bisquare
 * (1 - (u/c)^2)^2 on |u| < c, least squares 1.
 */
inline double irls_weight(double e, double sigma, const LossSpec& spec) {
    detail::check_sigma(sigma);
    switch (spec.family) {
        case LossFamily::power_divergence:
            return spec.alpha == 0.0 ? 1.0 : std::exp(-spec.alpha * e * e / (2.0 * sigma * sigma));
        case LossFamily::bisquare: {
            const double u = e / sigma / spec.c;
            if (std::abs(u) >= 1.0) return 0.0;
            const double v = 1.0 - u * u;
            return v * v;
        }
        case LossFamily::least_squares: return 1.0;
    }
    return 1.0;
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw ConfigError("median of an empty sequence");
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    const double hi = *mid;
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

/// Normalized median absolute deviation, median|e - median(e)| / 0.6745.
inline double m_scale(std::span<const double> residuals) {
    if (residuals.size() < 2) throw ConfigError("scale estimate needs at least 2 residuals");
    std::vector<double> v(residuals.begin(), residuals.end());
    const double med = median(v);
    for (auto& x : v) x = std::abs(x - med);
    const double mad = median(std::move(v));
    if (!(mad > 0.0)) throw NumericalError("degenerate residuals: median absolute deviation is zero");
    return mad / 0.6745;
}

/// Root mean square, the Gaussian maximum-likelihood scale.
inline double rms_scale(std::span<const double> residuals) {
    if (residuals.empty()) throw ConfigError("scale estimate needs residuals");
    double ss = 0.0;
    for (double e : residuals) ss += e * e;
    const double s = std::sqrt(ss / static_cast<double>(residuals.size()));
    if (!(s > 0.0)) throw NumericalError("degenerate residuals: zero root mean square");
    return s;
}

/// Scale under the loss's scale policy.
inline double estimate_scale(std::span<const double> residuals, const LossSpec& spec) {
    switch (spec.resolved_scale()) {
        case ScalePolicy::mad: return m_scale(residuals);
        case ScalePolicy::rms: return rms_scale(residuals);
        case ScalePolicy::fixed: return spec.fixed_sigma;
        case ScalePolicy::automatic: break;
    }
    return m_scale(residuals);
}

}  // namespace tarma
