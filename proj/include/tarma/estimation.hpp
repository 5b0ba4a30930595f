#pragma once

#include "tarma/error.hpp"
#include "tarma/model.hpp"
#include "tarma/parallel.hpp"
#include "tarma/robust_loss.hpp"
#include "tarma/timeseries.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace tarma {

/// Candidate thresholds for the profile search.
struct ThresholdGrid {
    enum class Kind { quantiles, explicit_values, fixed };
    Kind kind = Kind::quantiles;
    double lo_pct = 10.0;
    double hi_pct = 90.0;
    std::size_t max_points = 100;
    std::vector<double> values;  // explicit list, or the single fixed threshold

    static ThresholdGrid quantiles(double lo = 10.0, double hi = 90.0, std::size_t max_points = 100) {
        ThresholdGrid g;
        g.lo_pct = lo;
        g.hi_pct = hi;
        g.max_points = max_points;
        return g;
    }
    static ThresholdGrid fixed(double r) {
        ThresholdGrid g;
        g.kind = Kind::fixed;
        g.values = {r};
        return g;
    }
    static ThresholdGrid list(std::vector<double> v) {
        ThresholdGrid g;
        g.kind = Kind::explicit_values;
        g.values = std::move(v);
        return g;
    }
};

/// Damped Gauss-Newton settings for the weighted least-squares step.
struct SolverSettings {
    int max_iters = 100;
    double damping = 1e-10;  // relative ridge added to the normal-equation diagonal
    double step_tol = 1e-10;
};

struct FitConfig {
    int p = 1;
    int q = 1;
    LossSpec loss;
    ThresholdGrid grid;
    std::vector<int> delays{1, 2, 3, 4, 5, 6};
    int max_irls_iters = 50;
    double irls_tol = 1e-8;
    SolverSettings inner;
    double trim_fraction = 0.10;
    bool warm_start = true;
    bool gauss_newton_hessian = false;  // drop the second-derivative recursion from H
    std::size_t min_start = 0;          // first residual index is at least this (0-based)
    double max_ma_bound = 0.995;        // fits stay where sum_j max(|theta_1j|, |theta_2j|) < this
    unsigned jobs = 1;
};

inline void check_config(const FitConfig& c) {
    if (c.p < 0 || c.q < 0) throw ConfigError("orders p and q must be non-negative");
    check_loss(c.loss);
    if (!(c.trim_fraction >= 0.0 && c.trim_fraction < 0.5)) throw ConfigError("trim_fraction must lie in [0, 0.5)");
    if (!(c.irls_tol > 0.0) || !(c.inner.step_tol > 0.0) || c.inner.damping < 0.0)
        throw ConfigError("tolerances must be positive");
    if (c.max_irls_iters < 1 || c.inner.max_iters < 1) throw ConfigError("iteration limits must be at least 1");
    if (!(c.max_ma_bound > 0.0)) throw ConfigError("max_ma_bound must be positive");
    if (c.delays.empty()) throw ConfigError("delay set is empty");
    for (int d : c.delays)
        if (d < 1) throw ConfigError("delays must be at least 1");
    if (c.grid.kind == ThresholdGrid::Kind::quantiles) {
        if (!(c.grid.lo_pct >= 0.0 && c.grid.lo_pct <= c.grid.hi_pct && c.grid.hi_pct <= 100.0))
            throw ConfigError("quantile grid needs 0 <= lo <= hi <= 100");
        if (c.grid.max_points < 1) throw ConfigError("quantile grid needs max_points >= 1");
    } else if (c.grid.values.empty()) {
        throw ConfigError("threshold grid has no values");
    }
}

struct Convergence {
    int iterations = 0;
    bool converged = false;
    std::vector<double> objective_trace;   // objective after each accepted step
    std::vector<double> objective_before;  // objective at the start of each step, same scale
    std::vector<double> scale_trace;       // scale in force during each step
};

/// Sensitivity (H) and variability (J) matrices and the sandwich H^-1 J H^-1 / n.
struct Sandwich {
    Eigen::MatrixXd H;
    Eigen::MatrixXd J;
    Eigen::MatrixXd covariance;
    std::size_t n = 0;
    double condition = 0.0;
    bool ok = false;
    std::string message;
};

struct ProfilePoint {
    double r = 0.0;
    int d = 1;
    double objective = std::numeric_limits<double>::infinity();
    double sigma = 0.0;
    bool ok = false;
    bool converged = false;
    int iterations = 0;
    std::string error;
};

struct FitResult {
    TarmaParams params;
    LossSpec loss;
    double objective = 0.0;
    double sigma_hat = 0.0;
    std::size_t start = 0;  // 0-based index of the first residual
    std::size_t n_obs = 0;  // number of objective terms
    std::vector<double> residuals;
    std::vector<double> irls_weights;
    Sandwich sandwich;
    std::vector<double> std_errors;  // empty when the covariance is withheld
    Convergence convergence;
    std::vector<ProfilePoint> profile_table;
};

namespace detail {

/// Residual recursion at fixed (r, d) with an optional 0/1 mask over objective terms.
struct Problem {
    std::span<const double> x;
    TarmaParams shape;  // p, q, r, d; coefficients overwritten per evaluation
    std::size_t start = 0;
    std::vector<double> mask;  // per residual; empty means all included
    double ma_bound = std::numeric_limits<double>::infinity();

    double mask_at(std::size_t j) const { return mask.empty() ? 1.0 : mask[j]; }

    bool feasible(const Eigen::VectorXd& lambda) const {
        const auto nphi = static_cast<Eigen::Index>(2 * (shape.p + 1));
        double s = 0.0;
        for (Eigen::Index j = 0; j < shape.q; ++j)
            s += std::max(std::abs(lambda[nphi + j]), std::abs(lambda[nphi + shape.q + j]));
        return s < ma_bound;
    }

    /// Pulls the MA block inside the feasible region.
    Eigen::VectorXd project(Eigen::VectorXd lambda) const {
        if (feasible(lambda)) return lambda;
        const auto nphi = static_cast<Eigen::Index>(2 * (shape.p + 1));
        double s = 0.0;
        for (Eigen::Index j = 0; j < shape.q; ++j)
            s += std::max(std::abs(lambda[nphi + j]), std::abs(lambda[nphi + shape.q + j]));
        lambda.tail(2 * shape.q) *= 0.9 * ma_bound / s;
        return lambda;
    }

    ResidualPath path(const Eigen::VectorXd& lambda, bool jac) const {
        TarmaParams p = shape;
        p.set_lambda(lambda);
        return residual_path(x, p, start, jac);
    }

    std::vector<double> included(const std::vector<double>& e) const {
        if (mask.empty()) return e;
        std::vector<double> out;
        for (std::size_t j = 0; j < e.size(); ++j)
            if (mask[j] > 0.0) out.push_back(e[j]);
        return out;
    }
};

inline double objective_of(const Problem& pb, const std::vector<double>& e, double sigma, const LossSpec& loss) {
    double s = 0.0;
    for (std::size_t j = 0; j < e.size(); ++j) {
        if (!std::isfinite(e[j])) return std::numeric_limits<double>::infinity();
        const double m = pb.mask_at(j);
        if (m > 0.0) s += m * rho(e[j], sigma, loss);
    }
    return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
}

inline double weighted_ss(const std::vector<double>& e, const std::vector<double>& w) {
    double s = 0.0;
    for (std::size_t j = 0; j < e.size(); ++j) {
        if (!std::isfinite(e[j])) return std::numeric_limits<double>::infinity();
        s += w[j] * e[j] * e[j];
    }
    return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
}

inline void check_regime_support(const Problem& pb, const ResidualPath& path, const std::vector<double>& w) {
    const std::size_t need = static_cast<std::size_t>(1 + pb.shape.p + pb.shape.q);
    std::size_t count[2] = {0, 0};
    for (std::size_t j = 0; j < w.size(); ++j)
        if (w[j] > 1e-12) ++count[path.regime[j]];
    for (int k = 0; k < 2; ++k) {
        if (count[k] < need)
            throw NumericalError(std::string("singular normal equations: ") + (k == 0 ? "lower" : "upper") +
                                 " regime has " + std::to_string(count[k]) + " weighted observations, needs " +
                                 std::to_string(need));
    }
}

/// J^T W e, half the gradient of the weighted residual sum.
inline Eigen::VectorXd gradient_half(const ResidualPath& path, const std::vector<double>& w) {
    const auto rows = static_cast<Eigen::Index>(path.residuals.size());
    const Eigen::Map<const Eigen::VectorXd> wv(w.data(), rows);
    const Eigen::Map<const Eigen::VectorXd> ev(path.residuals.data(), rows);
    return path.jacobian.transpose() * (wv.array() * ev.array()).matrix();
}

/// Gauss-Newton direction for sum_j w_j e_j(lambda)^2 at the path's lambda.
inline Eigen::VectorXd gauss_newton_direction(const Problem& pb, const ResidualPath& path, const std::vector<double>& w,
                                              double damping) {
    check_regime_support(pb, path, w);
    const auto rows = static_cast<Eigen::Index>(path.residuals.size());
    const Eigen::Map<const Eigen::VectorXd> wv(w.data(), rows);
    const Eigen::Map<const Eigen::VectorXd> ev(path.residuals.data(), rows);
    const Eigen::MatrixXd WJ = path.jacobian.array().colwise() * wv.array();
    Eigen::MatrixXd A = path.jacobian.transpose() * WJ;
    const Eigen::VectorXd g = WJ.transpose() * ev;
    for (Eigen::Index a = 0; a < A.rows(); ++a) A(a, a) += damping * (A(a, a) + 1e-300);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success) throw NumericalError("singular normal equations in the weighted LS step");
    const auto dvec = ldlt.vectorD();
    const double dmax = dvec.cwiseAbs().maxCoeff();
    if (!(dvec.minCoeff() > 1e-14 * dmax))
        throw NumericalError("singular normal equations in the weighted LS step (rank deficient design)");
    Eigen::VectorXd delta = ldlt.solve(-g);
    if (!delta.allFinite()) throw NumericalError("non-finite Gauss-Newton step");
    return delta;
}

/// Minimizes sum_j w_j e_j(lambda)^2 from `lambda` by damped Gauss-Newton
/// with step halving, staying inside the feasible MA region.
inline Eigen::VectorXd minimize_weighted_ss(const Problem& pb, Eigen::VectorXd lambda, const std::vector<double>& w,
                                            const SolverSettings& s) {
    auto path = pb.path(lambda, true);
    double cur = weighted_ss(path.residuals, w);
    if (!std::isfinite(cur)) throw NumericalError("non-finite weighted residual sum at the starting point");
    for (int it = 0; it < s.max_iters; ++it) {
        const Eigen::VectorXd delta = gauss_newton_direction(pb, path, w, s.damping);
        // predicted decrease of the quadratic model; stop once it is at rounding level
        const double predicted = -2.0 * delta.dot(gradient_half(path, w));
        if (!(predicted > 1e-15 * cur)) break;
        double step = 1.0;
        bool accepted = false;
        ResidualPath trial_path;
        Eigen::VectorXd trial;
        double trial_ss = cur;
        for (int h = 0; h < 30; ++h, step *= 0.5) {
            trial = lambda + step * delta;
            if (!pb.feasible(trial)) continue;
            trial_path = pb.path(trial, true);
            trial_ss = weighted_ss(trial_path.residuals, w);
            if (trial_ss <= cur) {
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        const double moved = step * delta.lpNorm<Eigen::Infinity>();
        lambda = trial;
        path = std::move(trial_path);
        cur = trial_ss;
        if (moved <= s.step_tol * (1.0 + lambda.lpNorm<Eigen::Infinity>())) break;
    }
    return lambda;
}

}  // namespace detail

/// Coefficients fitted at one (r, d).
struct FixedFit {
    Eigen::VectorXd lambda;
    double objective = 0.0;
    double sigma = 0.0;
    Convergence convergence;
};

namespace detail {

/**
 * IRLS at fixed (r, d): weights from the current residuals and scale, a
 * full weighted-LS solve, then step halving along the move until the
 * true objective (at the same scale) does not increase.
 */
inline FixedFit irls(const Problem& pb, const LossSpec& loss, Eigen::VectorXd lambda, int max_iters, double tol,
                     const SolverSettings& inner) {
    if (!lambda.allFinite()) throw ConfigError("initial coefficients must be finite");
    lambda = pb.project(std::move(lambda));
    FixedFit out;
    auto path = pb.path(lambda, false);
    for (int it = 0; it < max_iters; ++it) {
        const auto kept = pb.included(path.residuals);
        const double sigma = estimate_scale(kept, loss);
        const double before = objective_of(pb, path.residuals, sigma, loss);
        if (!std::isfinite(before)) throw NumericalError("non-finite objective: the residual recursion diverged");

        std::vector<double> w(path.residuals.size());
        for (std::size_t j = 0; j < w.size(); ++j) w[j] = pb.mask_at(j) * irls_weight(path.residuals[j], sigma, loss);

        Eigen::VectorXd target = minimize_weighted_ss(pb, lambda, w, inner);
        Eigen::VectorXd dir = target - lambda;

        double step = 1.0;
        bool accepted = false;
        double after = before;
        ResidualPath trial_path;
        for (int h = 0; h < 30; ++h, step *= 0.5) {
            if (!pb.feasible(lambda + step * dir)) continue;
            trial_path = pb.path(lambda + step * dir, false);
            after = objective_of(pb, trial_path.residuals, sigma, loss);
            if (after <= before) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            // No descent along the weighted-LS move: try one plain weighted GN step.
            auto jpath = pb.path(lambda, true);
            dir = gauss_newton_direction(pb, jpath, w, inner.damping);
            step = 1.0;
            for (int h = 0; h < 30; ++h, step *= 0.5) {
                if (!pb.feasible(lambda + step * dir)) continue;
                trial_path = pb.path(lambda + step * dir, false);
                after = objective_of(pb, trial_path.residuals, sigma, loss);
                if (after <= before) {
                    accepted = true;
                    break;
                }
            }
        }
        out.convergence.iterations = it + 1;
        if (!accepted) {
            // stationary to working precision
            out.convergence.converged = true;
            break;
        }
        lambda += step * dir;
        path = std::move(trial_path);
        out.convergence.objective_before.push_back(before);
        out.convergence.objective_trace.push_back(after);
        out.convergence.scale_trace.push_back(sigma);
        if (before - after <= tol * std::max(std::abs(before), 1e-300)) {
            out.convergence.converged = true;
            break;
        }
    }
    const auto kept = pb.included(path.residuals);
    out.sigma = estimate_scale(kept, loss);
    out.objective = objective_of(pb, path.residuals, out.sigma, loss);
    if (!std::isfinite(out.objective)) throw NumericalError("non-finite objective at the solution");
    out.lambda = std::move(lambda);
    return out;
}

inline Problem make_problem(std::span<const double> x, int p, int q, double r, int d, std::size_t start,
                            double ma_bound = std::numeric_limits<double>::infinity()) {
    Problem pb;
    pb.ma_bound = ma_bound;
    pb.x = x;
    pb.shape = TarmaParams::zeros(p, q, r, d);
    pb.start = std::max(start, default_start(pb.shape));
    if (x.size() <= pb.start)
        throw ConfigError("series of length " + std::to_string(x.size()) + " is too short for the recursion");
    return pb;
}

inline void require_regime_counts(const Problem& pb, const std::string& what) {
    const std::size_t need = static_cast<std::size_t>(1 + pb.shape.p + pb.shape.q);
    std::size_t count[2] = {0, 0};
    const auto d = static_cast<std::size_t>(pb.shape.d);
    for (std::size_t i = pb.start; i < pb.x.size(); ++i) {
        if (pb.mask_at(i - pb.start) <= 0.0) continue;
        ++count[pb.x[i - d] <= pb.shape.r ? 0 : 1];
    }
    if (count[0] < need || count[1] < need)
        throw ConfigError(what + ": regimes have " + std::to_string(count[0]) + " (lower) and " +
                          std::to_string(count[1]) + " (upper) usable observations; each needs " +
                          std::to_string(need));
}

}  // namespace detail

/**
 * Trimmed least-squares starting value at fixed (r, d).
 *
 * The ceil(trim_fraction * n) observations farthest from the median drop
 * out of the objective; the recursion still runs through them. LS is then
 * solved from zero coefficients.
 */
inline Eigen::VectorXd initial_estimate(std::span<const double> x, int p, int q, double r, int d, double trim_fraction,
                                        std::size_t start = 0, const SolverSettings& inner = {},
                                        double ma_bound = 0.995) {
    if (!(trim_fraction >= 0.0 && trim_fraction < 0.5)) throw ConfigError("trim_fraction must lie in [0, 0.5)");
    auto pb = detail::make_problem(x, p, q, r, d, start, ma_bound);
    const std::size_t n = x.size();
    const auto n_trim = static_cast<std::size_t>(std::ceil(trim_fraction * static_cast<double>(n) - 1e-9));
    if (n_trim > 0) {
        const double med = median(std::vector<double>(x.begin(), x.end()));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(x[a] - med) > std::abs(x[b] - med);
        });
        pb.mask.assign(n - pb.start, 1.0);
        for (std::size_t k = 0; k < n_trim; ++k)
            if (order[k] >= pb.start) pb.mask[order[k] - pb.start] = 0.0;
    }
    detail::require_regime_counts(pb, "too few observations after trimming");
    const auto K = static_cast<Eigen::Index>(pb.shape.num_coefficients());
    const auto fit = detail::irls(pb, LossSpec::least_squares(), Eigen::VectorXd::Zero(K), 50, 1e-10, inner);
    return fit.lambda;
}

/// Profile fit of lambda at fixed (r, d); returns the coefficients, objective and convergence record.
inline FixedFit fit_fixed_threshold(std::span<const double> x, double r, int d, const FitConfig& config,
                                            const Eigen::VectorXd& init) {
    check_config(config);
    auto pb = detail::make_problem(x, config.p, config.q, r, d, config.min_start, config.max_ma_bound);
    if (static_cast<std::size_t>(init.size()) != pb.shape.num_coefficients())
        throw ConfigError("initial coefficient vector has the wrong length");
    detail::require_regime_counts(pb, "threshold r = " + std::to_string(r));
    return detail::irls(pb, config.loss, init, config.max_irls_iters, config.irls_tol, config.inner);
}

/// H, J and H^-1 J H^-1 / n at `params`, with the scale held at `sigma`.
inline Sandwich sandwich_covariance(std::span<const double> x, const TarmaParams& params, const LossSpec& loss,
                                    double sigma, std::size_t start, bool gauss_newton_hessian = false) {
    start = std::max(start, default_start(params));
    const auto K = static_cast<Eigen::Index>(params.num_coefficients());
    Sandwich out;
    out.H = Eigen::MatrixXd::Zero(K, K);
    out.J = Eigen::MatrixXd::Zero(K, K);
    const auto level = gauss_newton_hessian ? Derivatives::first : Derivatives::second;
    run_recursion(x, params, start, level, {}, [&](std::size_t, int, double e, const double* de, const double* d2e) {
        const Eigen::Map<const Eigen::VectorXd> g(de, K);
        const double ps = psi(e, sigma, loss);
        const double pp = psi_prime(e, sigma, loss);
        out.J.noalias() += (ps * ps) * g * g.transpose();
        out.H.noalias() += pp * g * g.transpose();
        if (d2e) {
            const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> S(d2e, K, K);
            out.H += ps * S;
        }
        ++out.n;
    });
    const double n = static_cast<double>(out.n);
    out.H /= n;
    out.J /= n;
    out.H = 0.5 * (out.H + out.H.transpose()).eval();
    out.J = 0.5 * (out.J + out.J.transpose()).eval();
    if (!out.H.allFinite() || !out.J.allFinite()) {
        out.message = "non-finite sensitivity or variability matrix";
        return out;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.H, Eigen::EigenvaluesOnly);
    const auto ev = eig.eigenvalues().cwiseAbs();
    out.condition = ev.minCoeff() > 0.0 ? ev.maxCoeff() / ev.minCoeff() : std::numeric_limits<double>::infinity();
    if (!(out.condition <= 1e12)) {
        out.message = "sensitivity matrix is numerically singular (condition number " + std::to_string(out.condition) +
                      "); covariance withheld";
        return out;
    }
    const Eigen::MatrixXd Hinv = out.H.inverse();
    out.covariance = Hinv * out.J * Hinv / n;
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    out.ok = true;
    return out;
}

namespace detail {

/// Order statistics of the threshold variable between the two percentiles, at most max_points distinct values.
inline std::vector<double> quantile_grid(std::vector<double> z, const ThresholdGrid& g) {
    std::sort(z.begin(), z.end());
    const std::size_t m = z.size();
    const auto lo = static_cast<std::size_t>(std::ceil(g.lo_pct / 100.0 * static_cast<double>(m - 1) - 1e-9));
    const auto hi = static_cast<std::size_t>(std::floor(g.hi_pct / 100.0 * static_cast<double>(m - 1) + 1e-9));
    std::vector<double> distinct;
    for (std::size_t i = lo; i <= hi && i < m; ++i)
        if (distinct.empty() || z[i] != distinct.back()) distinct.push_back(z[i]);
    if (distinct.size() <= g.max_points) return distinct;
    std::vector<double> out;
    const std::size_t count = g.max_points;
    for (std::size_t k = 0; k < count; ++k) {
        const double level = count == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(count - 1);
        const auto idx = static_cast<std::size_t>(std::llround(level * static_cast<double>(distinct.size() - 1)));
        if (out.empty() || distinct[idx] != out.back()) out.push_back(distinct[idx]);
    }
    return out;
}

}  // namespace detail

/// Admissible thresholds for delay d: the configured grid, restricted to
/// values leaving at least 1+p+q points in each regime.
inline std::vector<double> threshold_candidates(std::span<const double> x, int d, std::size_t start,
                                                const FitConfig& config) {
    std::vector<double> z;
    for (std::size_t i = start; i < x.size(); ++i) z.push_back(x[i - static_cast<std::size_t>(d)]);
    std::vector<double> grid;
    if (config.grid.kind == ThresholdGrid::Kind::quantiles)
        grid = detail::quantile_grid(z, config.grid);
    else
        grid = config.grid.values;
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    const std::size_t need = static_cast<std::size_t>(1 + config.p + config.q);
    std::vector<double> out;
    for (double r : grid) {
        const auto lower = static_cast<std::size_t>(std::count_if(z.begin(), z.end(), [r](double v) { return v <= r; }));
        if (lower >= need && z.size() - lower >= need) out.push_back(r);
    }
    return out;
}

/// Common first residual index for a profile search over the configured delays.
inline std::size_t profile_start(const FitConfig& config) {
    const int dmax = *std::max_element(config.delays.begin(), config.delays.end());
    return std::max({static_cast<std::size_t>(config.p), static_cast<std::size_t>(dmax), config.min_start});
}

/// Residuals, weights and sandwich for coefficients fitted at (r, d).
inline FitResult assemble_fit(std::span<const double> x, const FitConfig& config, const FixedFit& fixed,
                              double r, int d) {
    FitResult out;
    out.params = TarmaParams::zeros(config.p, config.q, r, d);
    out.params.set_lambda(fixed.lambda);
    out.loss = config.loss;
    out.objective = fixed.objective;
    out.sigma_hat = fixed.sigma;
    out.start = std::max(profile_start(config), default_start(out.params));
    out.convergence = fixed.convergence;
    out.residuals = residual_path(x, out.params, out.start, false).residuals;
    out.n_obs = out.residuals.size();
    out.irls_weights.reserve(out.residuals.size());
    for (double e : out.residuals) out.irls_weights.push_back(irls_weight(e, out.sigma_hat, config.loss));
    out.sandwich = sandwich_covariance(x, out.params, config.loss, out.sigma_hat, out.start, config.gauss_newton_hessian);
    if (out.sandwich.ok) {
        for (Eigen::Index a = 0; a < out.sandwich.covariance.rows(); ++a)
            out.std_errors.push_back(std::sqrt(std::max(0.0, out.sandwich.covariance(a, a))));
    }
    return out;
}

/**
 * Profile estimation over the threshold grid and delay set.
 *
 * Every (r, d) candidate gets an IRLS fit; within each delay the fits run
 * left to right in r, each warm-started from its neighbour (the first from
 * the trimmed-LS estimate). The winner minimizes the profiled objective,
 * ties going to the smaller r and then the smaller d.
 */
inline FitResult profile_search(std::span<const double> x, const FitConfig& config) {
    check_config(config);
    std::vector<int> delays = config.delays;
    std::sort(delays.begin(), delays.end());
    delays.erase(std::unique(delays.begin(), delays.end()), delays.end());
    FitConfig cfg = config;
    cfg.delays = delays;
    const std::size_t start = profile_start(cfg);
    cfg.min_start = start;
    if (x.size() <= start + static_cast<std::size_t>(2 * (1 + cfg.p + cfg.q)))
        throw ConfigError("series of length " + std::to_string(x.size()) + " is too short for TARMA(" +
                          std::to_string(cfg.p) + "," + std::to_string(cfg.q) + ")");

    std::vector<std::vector<double>> grids(delays.size());
    std::size_t admissible = 0;
    for (std::size_t k = 0; k < delays.size(); ++k) {
        grids[k] = threshold_candidates(x, delays[k], start, cfg);
        admissible += grids[k].size();
    }
    if (admissible == 0) throw ConfigError("empty admissible grid: no threshold leaves enough points in both regimes");

    std::vector<std::vector<ProfilePoint>> points(delays.size());
    std::vector<std::vector<Eigen::VectorXd>> lambdas(delays.size());
    std::vector<std::vector<FixedFit>> fits(delays.size());

    parallel_for(delays.size(), cfg.warm_start ? cfg.jobs : 1u, [&](std::size_t k) {
        const int d = delays[k];
        std::optional<Eigen::VectorXd> prev;
        for (double r : grids[k]) {
            ProfilePoint pt;
            pt.r = r;
            pt.d = d;
            FixedFit fit;
            auto attempt = [&](const Eigen::VectorXd& init) {
                fit = fit_fixed_threshold(x, r, d, cfg, init);
                pt.ok = true;
            };
            try {
                if (cfg.warm_start && prev) {
                    try {
                        attempt(*prev);
                    } catch (const NumericalError&) {
                        attempt(initial_estimate(x, cfg.p, cfg.q, r, d, cfg.trim_fraction, start, cfg.inner, cfg.max_ma_bound));
                    }
                } else {
                    attempt(initial_estimate(x, cfg.p, cfg.q, r, d, cfg.trim_fraction, start, cfg.inner, cfg.max_ma_bound));
                }
            } catch (const std::exception& ex) {
                pt.ok = false;
                pt.error = ex.what();
            }
            if (pt.ok) {
                pt.objective = fit.objective;
                pt.sigma = fit.sigma;
                pt.converged = fit.convergence.converged;
                pt.iterations = fit.convergence.iterations;
                prev = fit.lambda;
            }
            points[k].push_back(pt);
            fits[k].push_back(std::move(fit));
        }
    });

    std::size_t best_k = 0, best_j = 0;
    bool found = false;
    for (std::size_t k = 0; k < delays.size(); ++k) {
        for (std::size_t j = 0; j < points[k].size(); ++j) {
            const auto& pt = points[k][j];
            if (!pt.ok) continue;
            if (!found) {
                best_k = k;
                best_j = j;
                found = true;
                continue;
            }
            const auto& b = points[best_k][best_j];
            if (pt.objective < b.objective || (pt.objective == b.objective && (pt.r < b.r || (pt.r == b.r && pt.d < b.d)))) {
                best_k = k;
                best_j = j;
            }
        }
    }
    if (!found) {
        std::string why;
        for (const auto& row : points)
            for (const auto& pt : row)
                if (!pt.ok) {
                    why = pt.error;
                    break;
                }
        throw NumericalError("every grid point failed to fit: " + why);
    }

    auto out = assemble_fit(x, cfg, fits[best_k][best_j], points[best_k][best_j].r, delays[best_k]);
    for (auto& row : points)
        for (auto& pt : row) out.profile_table.push_back(std::move(pt));
    return out;
}

/// Robust weights exp(-alpha e^2 / (2 sigma^2)), normalized to sum to one,
/// and the indices (into the residual vector) of the top_m smallest.
struct OutlierWeights {
    std::vector<double> weights;
    std::vector<std::size_t> flagged;  // ascending by weight; ties by larger |e|
};

inline OutlierWeights robust_outlier_weights(const FitResult& fit, std::size_t top_m) {
    if (fit.loss.family != LossFamily::power_divergence || !(fit.loss.alpha > 0.0))
        throw ConfigError("uniform weights; ranking undefined (robust weights need a power-divergence fit with alpha > 0)");
    const auto& e = fit.residuals;
    if (e.empty()) throw ConfigError("fit has no residuals");
    if (top_m > e.size())
        throw ConfigError("top_m = " + std::to_string(top_m) + " exceeds the number of residuals (" +
                          std::to_string(e.size()) + ")");
    const double s2 = fit.sigma_hat * fit.sigma_hat;
    std::vector<double> logw(e.size());
    for (std::size_t t = 0; t < e.size(); ++t) logw[t] = -fit.loss.alpha * e[t] * e[t] / (2.0 * s2);
    const double top = *std::max_element(logw.begin(), logw.end());
    double total = 0.0;
    for (double v : logw) total += std::exp(v - top);
    OutlierWeights out;
    out.weights.reserve(e.size());
    for (double v : logw) out.weights.push_back(std::exp(v - top) / total);

    std::vector<std::size_t> order(e.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (out.weights[a] != out.weights[b]) return out.weights[a] < out.weights[b];
        return std::abs(e[a]) > std::abs(e[b]);
    });
    out.flagged.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top_m));
    return out;
}

/// trace(H^-1 J), the effective parameter count.
inline double penalty_trace(const FitResult& fit) {
    if (!fit.sandwich.ok)
        throw NumericalError("model selection needs the sandwich matrices: " +
                             (fit.sandwich.message.empty() ? std::string("covariance withheld") : fit.sandwich.message));
    return fit.sandwich.H.ldlt().solve(fit.sandwich.J).trace();
}

/// 2 rho_n + 2 trace(H^-1 J).
inline double model_selection_criterion(const FitResult& fit) {
    return 2.0 * fit.objective + 2.0 * penalty_trace(fit);
}

}  // namespace tarma
