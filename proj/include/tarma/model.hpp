#pragma once

#include "tarma/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tarma {

/**
 * Two-regime TARMA(p, q) parameter vector.
 *
 *   X_t = phi_k0 + sum_i phi_ki X_{t-i} + e_t + sum_j theta_kj e_{t-j}
 *
 * with k = lower when X_{t-d} <= r and k = upper otherwise. The coefficient
 * vector (lambda) is laid out as (phi1, phi2, theta1, theta2).
 */
struct TarmaParams {
    int p = 1;
    int q = 1;
    std::vector<double> phi1;    // intercept, then p AR slopes
    std::vector<double> phi2;
    std::vector<double> theta1;  // q MA coefficients
    std::vector<double> theta2;
    double r = 0.0;
    int d = 1;

    std::size_t num_coefficients() const { return static_cast<std::size_t>(2 * (1 + p + q)); }

    std::size_t phi_index(int regime, int lag) const { return static_cast<std::size_t>(regime * (p + 1) + lag); }
    std::size_t theta_index(int regime, int lag) const {
        return static_cast<std::size_t>(2 * (p + 1) + regime * q + (lag - 1));
    }

    Eigen::VectorXd lambda() const {
        Eigen::VectorXd v(static_cast<Eigen::Index>(num_coefficients()));
        Eigen::Index k = 0;
        for (double c : phi1) v[k++] = c;
        for (double c : phi2) v[k++] = c;
        for (double c : theta1) v[k++] = c;
        for (double c : theta2) v[k++] = c;
        return v;
    }

    void set_lambda(const Eigen::VectorXd& v) {
        if (static_cast<std::size_t>(v.size()) != num_coefficients())
            throw ConfigError("coefficient vector has length " + std::to_string(v.size()) + ", expected " +
                              std::to_string(num_coefficients()));
        phi1.assign(v.data(), v.data() + p + 1);
        phi2.assign(v.data() + p + 1, v.data() + 2 * (p + 1));
        theta1.assign(v.data() + 2 * (p + 1), v.data() + 2 * (p + 1) + q);
        theta2.assign(v.data() + 2 * (p + 1) + q, v.data() + 2 * (p + 1) + 2 * q);
    }

    /// Zero coefficients with the given orders, threshold and delay.
    static TarmaParams zeros(int p, int q, double r = 0.0, int d = 1) {
        TarmaParams out;
        out.p = p;
        out.q = q;
        out.phi1.assign(static_cast<std::size_t>(p + 1), 0.0);
        out.phi2.assign(static_cast<std::size_t>(p + 1), 0.0);
        out.theta1.assign(static_cast<std::size_t>(q), 0.0);
        out.theta2.assign(static_cast<std::size_t>(q), 0.0);
        out.r = r;
        out.d = d;
        return out;
    }

    bool operator==(const TarmaParams&) const = default;
};

/// Sum over lags of max(|theta_1j|, |theta_2j|); < 1 is sufficient for invertibility.
inline double invertibility_bound(const TarmaParams& params) {
    double s = 0.0;
    for (int j = 0; j < params.q; ++j)
        s += std::max(std::abs(params.theta1[static_cast<std::size_t>(j)]),
                      std::abs(params.theta2[static_cast<std::size_t>(j)]));
    return s;
}

struct ValidationOptions {
    bool strict_invertibility = false;
    int max_delay = 0;  // 0: no upper bound on d
};

/**
 * Checks shape, finiteness and delay range. The invertibility condition is
 * an error only in strict mode; otherwise a failure is appended to
 * `warnings` (boundary cases such as unit-root regimes are legitimate).
 */
inline const TarmaParams& validate(const TarmaParams& params, const ValidationOptions& opts = {},
                                   std::vector<std::string>* warnings = nullptr) {
    if (params.p < 0 || params.q < 0) throw ConfigError("orders p and q must be non-negative");
    const auto np = static_cast<std::size_t>(params.p + 1);
    const auto nq = static_cast<std::size_t>(params.q);
    if (params.phi1.size() != np || params.phi2.size() != np)
        throw ConfigError("phi1 and phi2 must have length p+1 = " + std::to_string(np) + " (got " +
                          std::to_string(params.phi1.size()) + " and " + std::to_string(params.phi2.size()) + ")");
    if (params.theta1.size() != nq || params.theta2.size() != nq)
        throw ConfigError("theta1 and theta2 must have length q = " + std::to_string(nq) + " (got " +
                          std::to_string(params.theta1.size()) + " and " + std::to_string(params.theta2.size()) +
                          ")");
    if (params.d < 1) throw ConfigError("delay d must be at least 1");
    if (opts.max_delay > 0 && params.d > opts.max_delay)
        throw ConfigError("delay d = " + std::to_string(params.d) + " exceeds the maximum " +
                          std::to_string(opts.max_delay));
    const auto lam = params.lambda();
    if (!lam.allFinite() || !std::isfinite(params.r)) throw ConfigError("parameters must be finite");
    const double bound = invertibility_bound(params);
    if (bound >= 1.0) {
        const std::string msg = "MA coefficients fail the invertibility condition (sum of max |theta| = " +
                                std::to_string(bound) + " >= 1)";
        if (opts.strict_invertibility) throw ConfigError(msg);
        if (warnings) warnings->push_back(msg);
    }
    return params;
}

/// 0-based index of the first residual: max(p, d), i.e. t0 = max(p, d) + 1.
inline std::size_t default_start(const TarmaParams& params) {
    return static_cast<std::size_t>(std::max(params.p, params.d));
}

/// How many derivative levels the recursion carries.
enum class Derivatives { none = 0, first = 1, second = 2 };

/**
 * Runs the residual recursion
 *
 *   e_i = x_i - [phi_k0 + sum_m phi_km x_{i-m} + sum_j theta_kj e_{i-j}]
 *
 * for i = start, ..., n-1 (0-based), with regime k chosen by x_{i-d} <= r.
 * Residuals before `start` come from `presample` (aligned so that its last
 * element is e_{start-1}) or are zero.
 *
 * The derivative recursions treat the regime indicators as constant in
 * lambda:
 *
 *   De_i    = -g_i - sum_j theta_kj De_{i-j}
 *   D2e_i   = -sum_j theta_kj D2e_{i-j} - sum_j (u_kj De_{i-j}^T + De_{i-j} u_kj^T)
 *
 * where g_i is the gated regressor vector and u_kj the unit vector of theta_kj.
 *
 * `visit(i, regime, e, de, d2e)` receives K-vectors and row-major K x K
 * arrays (null when the level is not requested).
 */
template <class Visit>
void run_recursion(std::span<const double> x, const TarmaParams& params, std::size_t start,
                   Derivatives level, std::span<const double> presample, Visit&& visit) {
    const int p = params.p;
    const int q = params.q;
    const auto d = static_cast<std::size_t>(params.d);
    const std::size_t n = x.size();
    const std::size_t K = params.num_coefficients();
    if (start < default_start(params))
        throw ConfigError("recursion start " + std::to_string(start) + " is before max(p, d) = " +
                          std::to_string(default_start(params)));
    if (n <= start)
        throw ConfigError("series of length " + std::to_string(n) + " is too short: need more than " +
                          std::to_string(start) + " observations");

    const bool first = level != Derivatives::none;
    const bool second = level == Derivatives::second;
    const auto uq = static_cast<std::size_t>(q);

    // Ring buffers over the last q time steps, slot = time index mod q.
    std::vector<double> e_ring(uq, 0.0);
    std::vector<double> d_ring(first ? uq * K : 0, 0.0);
    std::vector<double> s_ring(second ? uq * K * K : 0, 0.0);
    auto slot = [uq](std::size_t idx) { return idx % uq; };

    if (q > 0) {
        for (std::size_t lag = 1; lag <= uq && lag <= start; ++lag) {
            const std::size_t idx = start - lag;
            double v = 0.0;
            if (lag <= presample.size()) v = presample[presample.size() - lag];
            e_ring[slot(idx)] = v;
        }
    }

    std::vector<double> de(first ? K : 0);
    std::vector<double> d2e(second ? K * K : 0);

    for (std::size_t i = start; i < n; ++i) {
        const int regime = x[i - d] <= params.r ? 0 : 1;
        const auto& phi = regime == 0 ? params.phi1 : params.phi2;
        const auto& theta = regime == 0 ? params.theta1 : params.theta2;

        double mean = phi[0];
        for (int m = 1; m <= p; ++m) mean += phi[static_cast<std::size_t>(m)] * x[i - static_cast<std::size_t>(m)];
        for (std::size_t j = 1; j <= uq; ++j) {
            if (j > i) break;
            mean += theta[j - 1] * e_ring[slot(i - j)];
        }
        const double e = x[i] - mean;

        if (first) {
            std::fill(de.begin(), de.end(), 0.0);
            de[params.phi_index(regime, 0)] = -1.0;
            for (int m = 1; m <= p; ++m) de[params.phi_index(regime, m)] = -x[i - static_cast<std::size_t>(m)];
            for (std::size_t j = 1; j <= uq && j <= i; ++j) {
                de[params.theta_index(regime, static_cast<int>(j))] = -e_ring[slot(i - j)];
                const double th = theta[j - 1];
                if (th == 0.0) continue;
                const double* lag_d = &d_ring[slot(i - j) * K];
                for (std::size_t a = 0; a < K; ++a) de[a] -= th * lag_d[a];
            }
        }
        if (second) {
            std::fill(d2e.begin(), d2e.end(), 0.0);
            for (std::size_t j = 1; j <= uq && j <= i; ++j) {
                const double th = theta[j - 1];
                const double* lag_s = &s_ring[slot(i - j) * K * K];
                if (th != 0.0)
                    for (std::size_t ab = 0; ab < K * K; ++ab) d2e[ab] -= th * lag_s[ab];
                const std::size_t a = params.theta_index(regime, static_cast<int>(j));
                const double* lag_d = &d_ring[slot(i - j) * K];
                for (std::size_t b = 0; b < K; ++b) {
                    d2e[a * K + b] -= lag_d[b];
                    d2e[b * K + a] -= lag_d[b];
                }
            }
        }

        visit(i, regime, e, first ? de.data() : nullptr, second ? d2e.data() : nullptr);

        if (q > 0) {
            const std::size_t s = slot(i);
            e_ring[s] = e;
            if (first) std::copy(de.begin(), de.end(), d_ring.begin() + static_cast<std::ptrdiff_t>(s * K));
            if (second) std::copy(d2e.begin(), d2e.end(), s_ring.begin() + static_cast<std::ptrdiff_t>(s * K * K));
        }
    }
}

/// Residuals e_t for t = start+1..n (1-based), plus each step's regime.
struct ResidualPath {
    std::size_t start = 0;
    std::vector<double> residuals;
    std::vector<unsigned char> regime;  // 0 lower, 1 upper
    Eigen::MatrixXd jacobian;           // rows: time steps, cols: lambda entries (empty if not requested)
};

inline ResidualPath residual_path(std::span<const double> x, const TarmaParams& params, std::size_t start,
                                  bool with_jacobian, std::span<const double> presample = {}) {
    ResidualPath out;
    out.start = start;
    if (x.size() <= start) {
        // let run_recursion produce the error message
        run_recursion(x, params, start, Derivatives::none, presample, [](auto...) {});
    }
    const std::size_t rows = x.size() - start;
    const auto K = static_cast<Eigen::Index>(params.num_coefficients());
    out.residuals.reserve(rows);
    out.regime.reserve(rows);
    if (with_jacobian) out.jacobian.resize(static_cast<Eigen::Index>(rows), K);
    run_recursion(x, params, start, with_jacobian ? Derivatives::first : Derivatives::none, presample,
                  [&](std::size_t i, int regime, double e, const double* de, const double*) {
                      out.residuals.push_back(e);
                      out.regime.push_back(static_cast<unsigned char>(regime));
                      if (de) {
                          const auto row = static_cast<Eigen::Index>(i - start);
                          for (Eigen::Index a = 0; a < K; ++a) out.jacobian(row, a) = de[a];
                      }
                  });
    return out;
}

/// Residual sequence from t0 = max(p, d) + 1 with zero pre-sample residuals
/// (or the supplied pre-sample values).
inline std::vector<double> residuals(std::span<const double> x, const TarmaParams& params,
                                     std::span<const double> presample = {}) {
    validate(params);
    return residual_path(x, params, default_start(params), false, presample).residuals;
}

/// d e_t / d lambda, one row per residual returned by residuals().
inline Eigen::MatrixXd residual_jacobian(std::span<const double> x, const TarmaParams& params) {
    validate(params);
    return residual_path(x, params, default_start(params), true).jacobian;
}

/**
 * One-step-ahead conditional mean of the value following `history`.
 *
 * `residual_history` is aligned with the end of `history` (its last entry
 * is the residual of the last observation); missing lags count as zero.
 */
inline double conditional_mean(std::span<const double> history, std::span<const double> residual_history,
                               const TarmaParams& params) {
    const std::size_t t = history.size();
    const auto need = default_start(params);
    if (t < need)
        throw ConfigError("conditional mean needs at least max(p, d) = " + std::to_string(need) +
                          " past observations, got " + std::to_string(t));
    const int regime = history[t - static_cast<std::size_t>(params.d)] <= params.r ? 0 : 1;
    const auto& phi = regime == 0 ? params.phi1 : params.phi2;
    const auto& theta = regime == 0 ? params.theta1 : params.theta2;
    double mean = phi[0];
    for (int m = 1; m <= params.p; ++m) mean += phi[static_cast<std::size_t>(m)] * history[t - static_cast<std::size_t>(m)];
    for (int j = 1; j <= params.q; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (uj <= residual_history.size()) mean += theta[uj - 1] * residual_history[residual_history.size() - uj];
    }
    return mean;
}

}  // namespace tarma
