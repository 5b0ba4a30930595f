#pragma once

#include "tarma/error.hpp"
#include "tarma/estimation.hpp"
#include "tarma/model.hpp"
#include "tarma/parallel.hpp"
#include "tarma/rng.hpp"
#include "tarma/simulate.hpp"
#include "tarma/timeseries.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace tarma {

/// The four TARMA(1,1) benchmark parameterizations (r = 0.2, d = 1).
inline TarmaParams benchmark_case(int id) {
    TarmaParams p = TarmaParams::zeros(1, 1, 0.2, 1);
    switch (id) {
        case 1: p.phi1 = {0.5, -0.5}; p.theta1 = {-0.5}; p.phi2 = {0.0, -1.0}; p.theta2 = {0.5}; break;
        case 2: p.phi1 = {0.5, 0.3};  p.theta1 = {0.6};  p.phi2 = {1.0, -0.5}; p.theta2 = {-0.4}; break;
        case 3: p.phi1 = {2.0, 1.0};  p.theta1 = {0.5};  p.phi2 = {-1.5, 1.0}; p.theta2 = {-0.5}; break;
        case 4: p.phi1 = {0.6, 0.6};  p.theta1 = {-0.7}; p.phi2 = {-1.0, 0.4}; p.theta2 = {0.5}; break;
        default: throw ConfigError("benchmark case must be 1, 2, 3 or 4 (got " + std::to_string(id) + ")");
    }
    return p;
}

/// (lambda, r, d) as one vector; d enters as its integer value.
inline Eigen::VectorXd eta_vector(const TarmaParams& params) {
    const Eigen::VectorXd lam = params.lambda();
    Eigen::VectorXd eta(lam.size() + 2);
    eta << lam, params.r, static_cast<double>(params.d);
    return eta;
}

// ---------------------------------------------------------------------------
// Monte Carlo bias / variance
// ---------------------------------------------------------------------------

struct McConfig {
    std::string label = "custom";
    TarmaParams truth = benchmark_case(1);
    std::optional<ContaminationSpec> contamination;  // AO/RO applied to the path, IO injected in the innovations
    std::vector<double> alpha_grid{0.0, 0.3, 0.6, 0.9, 1.2, 1.5};
    std::vector<std::size_t> sample_sizes{200};
    std::size_t replications = 300;
    std::uint64_t master_seed = 0;
    FitConfig fit;
    bool fix_threshold_at_truth = false;
    std::size_t burn_in = 500;
    double innovation_variance = 1.0;
    unsigned jobs = 1;
};

inline void check_mc_config(const McConfig& c) {
    validate(c.truth);
    if (c.replications < 1) throw ConfigError("replications must be at least 1");
    if (c.alpha_grid.empty()) throw ConfigError("alpha grid is empty");
    for (double a : c.alpha_grid)
        if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("alpha values must be finite and non-negative");
    if (c.sample_sizes.empty()) throw ConfigError("no sample sizes given");
    if (c.contamination) check_contamination(*c.contamination);
    if (c.fit.p != c.truth.p || c.fit.q != c.truth.q) throw ConfigError("fit orders must match the true model orders");
    check_config(c.fit);
}

/// Per-(alpha, n) summary. Norms are over eta = (lambda, r, d); the
/// `_lambda` variants use the coefficients only. Variances use the 1/R
/// denominator so that mse = bias^2 + variance holds componentwise.
struct McCell {
    double alpha = 0.0;
    std::size_t n = 0;
    std::size_t replications = 0;  // configured
    std::size_t used = 0;          // successful fits
    std::size_t failures = 0;
    double squared_bias = 0.0;     // ||mean - eta0||^2
    double variance = 0.0;         // ||var||^2, squared norm of the componentwise variances
    double total_variance = 0.0;   // sum of componentwise variances
    double squared_bias_lambda = 0.0;
    double variance_lambda = 0.0;
    bool degenerate = false;       // fewer than 2 successful fits: variances set to 0
    Eigen::VectorXd mean, var, mse;
    std::vector<std::uint64_t> digests;  // per replication, realization fed to the fit
    std::vector<std::string> failure_notes;
};

struct McReport {
    McConfig config;
    std::vector<McCell> cells;
};

namespace detail {

/// Contaminated realization for replication `rep` at length n.
inline TimeSeries mc_realization(const McConfig& c, std::size_t n, std::size_t rep) {
    const std::uint64_t seed = stream_seed(stream_seed(c.master_seed, n), rep);
    InnovationSpec innov;
    innov.variance = c.innovation_variance;
    innov.seed = stream_seed(seed, 0);
    if (c.contamination && c.contamination->kind == OutlierKind::innovation)
        innov = contaminate_innovations(innov, *c.contamination);
    TimeSeries x = simulate(c.truth, n, innov, c.burn_in);
    if (c.contamination && c.contamination->kind != OutlierKind::innovation)
        x = contaminate(x, *c.contamination, stream_seed(seed, 1)).series;
    return x;
}

inline FitConfig fit_config_for(const McConfig& c, double alpha) {
    FitConfig cfg = c.fit;
    cfg.loss.family = LossFamily::power_divergence;
    cfg.loss.alpha = alpha;
    cfg.jobs = 1;
    if (c.fix_threshold_at_truth) {
        cfg.grid = ThresholdGrid::fixed(c.truth.r);
        cfg.delays = {c.truth.d};
    }
    return cfg;
}

struct Accumulated {
    Eigen::VectorXd mean, var, mse;
    std::size_t used = 0;
};

inline Accumulated accumulate(const std::vector<Eigen::VectorXd>& estimates, const Eigen::VectorXd& truth) {
    Accumulated a;
    a.used = estimates.size();
    const auto dim = truth.size();
    a.mean = Eigen::VectorXd::Zero(dim);
    a.var = Eigen::VectorXd::Zero(dim);
    a.mse = Eigen::VectorXd::Zero(dim);
    if (estimates.empty()) return a;
    for (const auto& e : estimates) a.mean += e;
    a.mean /= static_cast<double>(estimates.size());
    for (const auto& e : estimates) {
        a.var += (e - a.mean).cwiseAbs2();
        a.mse += (e - truth).cwiseAbs2();
    }
    a.var /= static_cast<double>(estimates.size());
    a.mse /= static_cast<double>(estimates.size());
    return a;
}

}  // namespace detail

/**
 * Monte Carlo study: for every replication one clean path is simulated,
 * contaminated, and fitted at every alpha (common random numbers). Failed
 * or non-converged fits are counted per cell and left out of the moments.
 */
inline McReport run_mc_experiment(const McConfig& config) {
    check_mc_config(config);
    const Eigen::VectorXd eta0 = eta_vector(config.truth);
    const auto K = static_cast<Eigen::Index>(config.truth.num_coefficients());
    const std::size_t A = config.alpha_grid.size();

    McReport report;
    report.config = config;
    for (std::size_t n : config.sample_sizes) {
        const std::size_t R = config.replications;
        // per replication, per alpha
        std::vector<std::vector<std::optional<Eigen::VectorXd>>> est(R, std::vector<std::optional<Eigen::VectorXd>>(A));
        std::vector<std::vector<std::string>> notes(R, std::vector<std::string>(A));
        std::vector<std::uint64_t> digests(R, 0);

        parallel_for(R, config.jobs, [&](std::size_t rep) {
            TimeSeries x;
            try {
                x = detail::mc_realization(config, n, rep);
            } catch (const std::exception& ex) {
                for (std::size_t a = 0; a < A; ++a) notes[rep][a] = std::string("simulation: ") + ex.what();
                return;
            }
            digests[rep] = digest(x.values);
            for (std::size_t a = 0; a < A; ++a) {
                try {
                    const auto fit = profile_search(x.values, detail::fit_config_for(config, config.alpha_grid[a]));
                    if (!fit.convergence.converged) {
                        notes[rep][a] = "IRLS did not converge";
                        continue;
                    }
                    est[rep][a] = eta_vector(fit.params);
                } catch (const std::exception& ex) {
                    notes[rep][a] = ex.what();
                }
            }
        });

        for (std::size_t a = 0; a < A; ++a) {
            McCell cell;
            cell.alpha = config.alpha_grid[a];
            cell.n = n;
            cell.replications = R;
            std::vector<Eigen::VectorXd> ok;
            for (std::size_t rep = 0; rep < R; ++rep) {
                cell.digests.push_back(digests[rep]);
                if (est[rep][a])
                    ok.push_back(*est[rep][a]);
                else
                    cell.failure_notes.push_back("replication " + std::to_string(rep) + ": " + notes[rep][a]);
            }
            cell.used = ok.size();
            cell.failures = R - ok.size();
            const auto acc = detail::accumulate(ok, eta0);
            cell.mean = acc.mean;
            cell.var = acc.var;
            cell.mse = acc.mse;
            cell.degenerate = ok.size() < 2;
            if (!ok.empty()) {
                cell.squared_bias = (acc.mean - eta0).squaredNorm();
                cell.squared_bias_lambda = (acc.mean - eta0).head(K).squaredNorm();
                cell.variance = acc.var.squaredNorm();
                cell.variance_lambda = acc.var.head(K).squaredNorm();
                cell.total_variance = acc.var.sum();
            } else {
                cell.squared_bias = cell.squared_bias_lambda = std::numeric_limits<double>::quiet_NaN();
                cell.variance = cell.variance_lambda = cell.total_variance = std::numeric_limits<double>::quiet_NaN();
            }
            report.cells.push_back(std::move(cell));
        }
    }
    const bool all_failed =
        std::all_of(report.cells.begin(), report.cells.end(), [](const McCell& c) { return c.used == 0; });
    if (all_failed)
        throw NumericalError("every replication failed in every cell" +
                             (report.cells.empty() || report.cells[0].failure_notes.empty()
                                  ? std::string()
                                  : ": " + report.cells[0].failure_notes[0]));
    return report;
}

// ---------------------------------------------------------------------------
// Asymptotic bias curves
// ---------------------------------------------------------------------------

struct BiasCurveConfig {
    TarmaParams truth = benchmark_case(1);
    OutlierKind kind = OutlierKind::additive;
    std::vector<double> epsilons{0.05, 0.1, 0.15, 0.2};
    std::vector<double> ks{0, 2, 4, 6, 8, 10};
    std::vector<double> alphas{0.0, 0.5, 1.0};
    std::size_t n_large = 20000;
    double sign_prob = 0.95;
    OutlierPattern pattern = OutlierPattern::equally_spaced;
    std::uint64_t master_seed = 0;
    FitConfig fit;
    std::size_t burn_in = 500;
    unsigned jobs = 1;
};

struct BiasPoint {
    double epsilon = 0.0;
    double k = 0.0;
    double alpha = 0.0;
    double B = std::numeric_limits<double>::quiet_NaN();         // ||eta_hat - eta0||^2
    double B_lambda = std::numeric_limits<double>::quiet_NaN();  // coefficients only
    TarmaParams estimate;
    bool ok = false;
    std::string error;
};

/**
 * Squared distance between the large-sample estimate and the truth, one
 * long contaminated path per (epsilon, k) and one fit per alpha on it.
 * All cells share the clean innovations; cells with the same epsilon share
 * the outlier positions and signs, so only k varies between them.
 */
inline std::vector<BiasPoint> asymptotic_bias_curve(const BiasCurveConfig& c) {
    validate(c.truth);
    if (c.n_large < 5000) throw ConfigError("n_large must be at least 5000");
    if (c.epsilons.empty() || c.ks.empty() || c.alphas.empty()) throw ConfigError("bias curve grids must be non-empty");
    if (c.kind == OutlierKind::replacement) throw ConfigError("bias curves support AO and IO contamination");
    if (c.fit.p != c.truth.p || c.fit.q != c.truth.q) throw ConfigError("fit orders must match the true model orders");
    check_config(c.fit);
    const Eigen::VectorXd eta0 = eta_vector(c.truth);
    const auto K = static_cast<Eigen::Index>(c.truth.num_coefficients());

    struct Cell {
        std::size_t ie, ik;
    };
    std::vector<Cell> cells;
    for (std::size_t ie = 0; ie < c.epsilons.size(); ++ie)
        for (std::size_t ik = 0; ik < c.ks.size(); ++ik) cells.push_back({ie, ik});

    InnovationSpec clean;
    clean.seed = stream_seed(c.master_seed, 0);
    std::optional<TimeSeries> clean_path;
    if (c.kind == OutlierKind::additive) clean_path = simulate(c.truth, c.n_large, clean, c.burn_in);

    std::vector<BiasPoint> out(cells.size() * c.alphas.size());
    parallel_for(cells.size(), c.jobs, [&](std::size_t ci) {
        const auto [ie, ik] = cells[ci];
        ContaminationSpec spec;
        spec.kind = c.kind;
        spec.epsilon = c.epsilons[ie];
        spec.k = c.ks[ik];
        spec.sign_prob = c.sign_prob;
        spec.pattern = c.pattern;
        const std::uint64_t outlier_seed = stream_seed(c.master_seed, 1 + ie);
        std::optional<TimeSeries> x;
        std::string failure;
        try {
            if (c.kind == OutlierKind::additive) {
                x = contaminate(*clean_path, spec, outlier_seed).series;
            } else {
                InnovationSpec innov = contaminate_innovations(clean, spec);
                innov.outlier_seed = outlier_seed;
                x = simulate(c.truth, c.n_large, innov, c.burn_in);
            }
        } catch (const std::exception& ex) {
            failure = ex.what();
        }
        for (std::size_t ia = 0; ia < c.alphas.size(); ++ia) {
            BiasPoint& pt = out[ci * c.alphas.size() + ia];
            pt.epsilon = spec.epsilon;
            pt.k = spec.k;
            pt.alpha = c.alphas[ia];
            if (!x) {
                pt.error = failure;
                continue;
            }
            try {
                FitConfig cfg = c.fit;
                cfg.loss.family = LossFamily::power_divergence;
                cfg.loss.alpha = pt.alpha;
                cfg.jobs = 1;
                const auto fit = profile_search(x->values, cfg);
                const Eigen::VectorXd diff = eta_vector(fit.params) - eta0;
                pt.B = diff.squaredNorm();
                pt.B_lambda = diff.head(K).squaredNorm();
                pt.estimate = fit.params;
                pt.ok = true;
            } catch (const std::exception& ex) {
                pt.error = ex.what();
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Forecast evaluation
// ---------------------------------------------------------------------------

/// Mean absolute percentage error, 100 * mean |(a - f) / a|.
inline double mape(std::span<const double> actual, std::span<const double> predicted) {
    if (actual.size() != predicted.size())
        throw ConfigError("MAPE needs equal lengths (" + std::to_string(actual.size()) + " vs " +
                          std::to_string(predicted.size()) + ")");
    if (actual.empty()) throw ConfigError("MAPE needs at least one point");
    double s = 0.0;
    for (std::size_t t = 0; t < actual.size(); ++t) {
        if (actual[t] == 0.0) throw ConfigError("MAPE undefined: actual value at index " + std::to_string(t) + " is 0");
        s += std::abs((actual[t] - predicted[t]) / actual[t]);
    }
    return 100.0 * s / static_cast<double>(actual.size());
}

/// Summed form, 100 * sum |(a - f) / a|.
inline double mape_sum(std::span<const double> actual, std::span<const double> predicted) {
    return mape(actual, predicted) * static_cast<double>(actual.size());
}

/**
 * One-step-ahead forecasts over the test window with the fitted parameters
 * held fixed: the forecast of each test point conditions on every actual
 * observation before it.
 */
inline std::vector<double> forecast_horizon(const TimeSeries& train, const TimeSeries& test, const FitResult& fit) {
    if (test.values.empty()) throw ConfigError("test window is empty");
    const auto& params = fit.params;
    const std::size_t start = std::max(fit.start, default_start(params));
    if (train.size() < start)
        throw ConfigError("training series has " + std::to_string(train.size()) + " points; forecasting needs " +
                          std::to_string(start));
    std::vector<double> full = train.values;
    full.insert(full.end(), test.values.begin(), test.values.end());
    std::vector<double> resid;
    if (full.size() > start) resid = residual_path(full, params, start, false).residuals;

    std::vector<double> out;
    out.reserve(test.size());
    for (std::size_t i = train.size(); i < full.size(); ++i) {
        const std::span<const double> history(full.data(), i);
        const std::size_t known = i > start ? i - start : 0;
        const std::span<const double> rh(resid.data(), known);
        out.push_back(conditional_mean(history, rh, params));
    }
    return out;
}

/// Iterated forecasts past the end of `series` (future innovations at their mean, 0).
inline std::vector<double> forecast_ahead(const TimeSeries& series, const FitResult& fit, std::size_t horizon) {
    if (horizon == 0) throw ConfigError("forecast horizon must be at least 1");
    const auto& params = fit.params;
    const std::size_t start = std::max(fit.start, default_start(params));
    if (series.size() < start) throw ConfigError("series too short to forecast from");
    std::vector<double> x = series.values;
    std::vector<double> resid;
    if (x.size() > start) resid = residual_path(x, params, start, false).residuals;
    std::vector<double> out;
    for (std::size_t h = 0; h < horizon; ++h) {
        const double f = conditional_mean(x, resid, params);
        out.push_back(f);
        x.push_back(f);
        resid.push_back(0.0);
    }
    return out;
}

struct AlphaRow {
    double alpha = 0.0;
    double mape = std::numeric_limits<double>::quiet_NaN();
    double mape_sum = std::numeric_limits<double>::quiet_NaN();
    bool ok = false;
    std::string error;
};

struct AlphaSelection {
    double best_alpha = 0.0;
    std::vector<AlphaRow> table;
};

/// Fits each alpha on `train`, forecasts `test`, returns the MAPE minimizer (ties to the smaller alpha).
inline AlphaSelection select_alpha(const TimeSeries& train, const TimeSeries& test, std::vector<double> alphas,
                                   const FitConfig& base) {
    if (alphas.empty()) throw ConfigError("alpha grid is empty");
    std::sort(alphas.begin(), alphas.end());
    AlphaSelection out;
    std::optional<std::size_t> best;
    for (double a : alphas) {
        AlphaRow row;
        row.alpha = a;
        try {
            FitConfig cfg = base;
            cfg.loss.family = LossFamily::power_divergence;
            cfg.loss.alpha = a;
            const auto fit = profile_search(train.values, cfg);
            const auto pred = forecast_horizon(train, test, fit);
            row.mape = mape(test.values, pred);
            row.mape_sum = mape_sum(test.values, pred);
            row.ok = true;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& ex) {
            row.error = ex.what();
        }
        out.table.push_back(row);
        if (row.ok && (!best || row.mape < out.table[*best].mape)) best = out.table.size() - 1;
    }
    if (!best) throw NumericalError("every alpha failed to fit: " + out.table.front().error);
    out.best_alpha = out.table[*best].alpha;
    return out;
}

}  // namespace tarma
