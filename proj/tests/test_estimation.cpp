#include "oracles.hpp"

#include "tarma/estimation.hpp"
#include "tarma/evaluation.hpp"
#include "tarma/simulate.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace tarma;

namespace {

TimeSeries sim(const TarmaParams& p, std::size_t n, std::uint64_t seed, double variance = 1.0) {
    InnovationSpec innov;
    innov.seed = seed;
    innov.variance = variance;
    return simulate(p, n, innov);
}

FitConfig config_with(double alpha) {
    FitConfig c;
    c.loss = LossSpec::power_divergence(alpha);
    return c;
}

oracle::Shape shape_of(const TarmaParams& p) { return {p.p, p.q, p.r, p.d}; }

void expect_monotone(const Convergence& c) {
    ASSERT_EQ(c.objective_trace.size(), c.objective_before.size());
    for (std::size_t k = 0; k < c.objective_trace.size(); ++k)
        EXPECT_LE(c.objective_trace[k], c.objective_before[k] + 1e-12 * std::abs(c.objective_before[k])) << "step " << k;
}

FixedFit fit_at_truth(const std::vector<double>& x, const TarmaParams& truth, const FitConfig& cfg) {
    const auto init = initial_estimate(x, cfg.p, cfg.q, truth.r, truth.d, cfg.trim_fraction);
    return fit_fixed_threshold(x, truth.r, truth.d, cfg, init);
}

}  // namespace

TEST(Config, Rejections) {
    FitConfig c;
    EXPECT_NO_THROW(check_config(c));
    c.trim_fraction = 0.5;
    EXPECT_THROW(check_config(c), ConfigError);
    c = {};
    c.irls_tol = 0.0;
    EXPECT_THROW(check_config(c), ConfigError);
    c = {};
    c.delays = {};
    EXPECT_THROW(check_config(c), ConfigError);
    c = {};
    c.delays = {0, 1};
    EXPECT_THROW(check_config(c), ConfigError);
    c = {};
    c.grid = ThresholdGrid::list({});
    EXPECT_THROW(check_config(c), ConfigError);
    c = {};
    c.grid = ThresholdGrid::quantiles(60, 40);
    EXPECT_THROW(check_config(c), ConfigError);
}

TEST(InitialEstimate, UntrimmedIsLeastSquares) {
    const auto truth = benchmark_case(2);
    const auto x = sim(truth, 300, 41).values;
    const auto init = initial_estimate(x, 1, 1, truth.r, truth.d, 0.0);
    const auto ref = oracle::nonlinear_least_squares(x, truth.lambda(), shape_of(truth));
    EXPECT_LT((init - ref).lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(InitialEstimate, CloseToTruthOnCleanCaseOne) {
    const auto truth = benchmark_case(1);
    const auto x = sim(truth, 500, 17).values;
    const auto init = initial_estimate(x, 1, 1, truth.r, truth.d, 0.10);
    EXPECT_LT((init - truth.lambda()).norm(), 0.3);
}

TEST(InitialEstimate, TooFewPoints) {
    const std::vector<double> x{0.1, -0.4, 0.3, 0.8, -0.2, 0.5};
    EXPECT_THROW(initial_estimate(x, 1, 1, 0.0, 1, 0.1), ConfigError);
    EXPECT_THROW(initial_estimate(x, 1, 1, 0.0, 1, 0.6), ConfigError);
}

TEST(FixedThreshold, LeastSquaresEquivalence) {
    for (int c = 1; c <= 4; ++c) {
        const auto truth = benchmark_case(c);
        const auto x = sim(truth, 300, 500 + static_cast<std::uint64_t>(c)).values;
        const auto fit = fit_at_truth(x, truth, config_with(0.0));
        const auto ref = oracle::nonlinear_least_squares(x, truth.lambda(), shape_of(truth));
        EXPECT_LT((fit.lambda - ref).lpNorm<Eigen::Infinity>(), 1e-6) << "case " << c;
        expect_monotone(fit.convergence);
    }
}

TEST(FixedThreshold, InterceptOnlyModel) {
    auto truth = TarmaParams::zeros(1, 1, 0.0, 1);
    truth.phi1[0] = 1.0;
    truth.phi2[0] = -1.0;
    const auto x = sim(truth, 2000, 3, 0.01).values;
    // Regime sample means of X_t given the sign of X_{t-1}.
    double sum[2] = {0.0, 0.0}, count[2] = {0.0, 0.0};
    for (std::size_t t = 1; t < x.size(); ++t) {
        const int k = x[t - 1] <= 0.0 ? 0 : 1;
        sum[k] += x[t];
        count[k] += 1.0;
    }
    for (double alpha : {0.0, 0.5}) {
        auto cfg = config_with(alpha);
        cfg.p = 0;
        cfg.q = 0;
        const auto fit = fit_at_truth(x, truth, cfg);
        ASSERT_EQ(fit.lambda.size(), 2);
        EXPECT_NEAR(fit.lambda[0], 1.0, 0.02) << alpha;
        EXPECT_NEAR(fit.lambda[1], -1.0, 0.02) << alpha;
        if (alpha == 0.0) {
            EXPECT_NEAR(fit.lambda[0], sum[0] / count[0], 1e-10);
            EXPECT_NEAR(fit.lambda[1], sum[1] / count[1], 1e-10);
        }
        expect_monotone(fit.convergence);
    }
}

TEST(FixedThreshold, StationaryStartStaysPut) {
    const auto truth = benchmark_case(3);
    const auto x = sim(truth, 400, 12).values;
    const auto cfg = config_with(0.5);
    auto tight = cfg;
    tight.irls_tol = 1e-15;
    tight.max_irls_iters = 500;
    const auto first = fit_at_truth(x, truth, tight);
    const auto again = fit_fixed_threshold(x, truth.r, truth.d, cfg, first.lambda);
    EXPECT_LE(again.convergence.iterations, 2);
    for (std::size_t k = 0; k < again.convergence.objective_trace.size(); ++k) {
        const double before = again.convergence.objective_before[k];
        EXPECT_LE(std::abs(before - again.convergence.objective_trace[k]), cfg.irls_tol * std::abs(before));
    }
    EXPECT_LT((again.lambda - first.lambda).lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(FixedThreshold, StaysInsideMaBound) {
    const auto truth = benchmark_case(1);
    auto x = sim(truth, 200, 8).values;
    ContaminationSpec spec;
    x = contaminate(make_series(x), spec, 9).series.values;
    for (double alpha : {0.0, 1.2}) {
        const auto fit = fit_at_truth(x, truth, config_with(alpha));
        EXPECT_LT(std::max(std::abs(fit.lambda[4]), std::abs(fit.lambda[5])), 0.995);
        expect_monotone(fit.convergence);
    }
}

TEST(FixedThreshold, WrongInitLength) {
    const auto x = sim(benchmark_case(1), 100, 1).values;
    EXPECT_THROW(fit_fixed_threshold(x, 0.2, 1, FitConfig{}, Eigen::VectorXd::Zero(3)), ConfigError);
}

TEST(Gradient, AnalyticMatchesFiniteDifferences) {
    const auto truth = benchmark_case(4);
    const auto x = sim(truth, 300, 77).values;
    const auto loss = LossSpec::power_divergence(0.7);
    const double sigma = 1.1;
    auto objective = [&](const Eigen::VectorXd& lam) {
        auto p = truth;
        p.set_lambda(lam);
        double s = 0.0;
        for (double e : residuals(x, p)) s += rho(e, sigma, loss);
        return s;
    };
    const Eigen::VectorXd lam = truth.lambda();
    const auto e = residuals(x, truth);
    const auto J = residual_jacobian(x, truth);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(lam.size());
    for (std::size_t t = 0; t < e.size(); ++t) g += psi(e[t], sigma, loss) * J.row(static_cast<Eigen::Index>(t)).transpose();
    Eigen::VectorXd fd(lam.size());
    for (Eigen::Index a = 0; a < lam.size(); ++a) {
        Eigen::VectorXd up = lam, dn = lam;
        up[a] += 1e-6;
        dn[a] -= 1e-6;
        fd[a] = (objective(up) - objective(dn)) / 2e-6;
    }
    EXPECT_LT((g - fd).norm() / fd.norm(), 1e-5);
}

TEST(ProfileSearch, SinglePointReducesToFixedFit) {
    const auto truth = benchmark_case(2);
    const auto x = sim(truth, 400, 5).values;
    auto cfg = config_with(0.5);
    cfg.grid = ThresholdGrid::fixed(truth.r);
    cfg.delays = {truth.d};
    const auto fit = profile_search(x, cfg);
    const auto fixed = fit_at_truth(x, truth, cfg);
    EXPECT_EQ(fit.params.lambda(), fixed.lambda);
    EXPECT_EQ(fit.objective, fixed.objective);
    EXPECT_EQ(fit.profile_table.size(), 1u);
}

TEST(ProfileSearch, RecoversCaseTwoThreshold) {
    const auto truth = benchmark_case(2);
    const auto x = sim(truth, 2000, 2024).values;
    auto cfg = config_with(0.5);
    cfg.grid = ThresholdGrid::quantiles(10, 90, 50);
    cfg.delays = {1, 2};
    const auto fit = profile_search(x, cfg);
    EXPECT_EQ(fit.params.d, 1);
    std::vector<double> rs;
    for (const auto& pt : fit.profile_table)
        if (pt.d == 1) rs.push_back(pt.r);
    std::sort(rs.begin(), rs.end());
    const auto hi = std::lower_bound(rs.begin(), rs.end(), truth.r);
    ASSERT_TRUE(hi != rs.begin() && hi != rs.end());
    const double spacing = *hi - *(hi - 1);
    EXPECT_LE(std::abs(fit.params.r - truth.r), spacing);
    expect_monotone(fit.convergence);
}

TEST(ProfileSearch, ArgminOfProfileTable) {
    const auto truth = benchmark_case(1);
    const auto x = sim(truth, 300, 6).values;
    auto cfg = config_with(0.5);
    cfg.grid = ThresholdGrid::quantiles(10, 90, 30);
    cfg.delays = {1, 2, 3};
    const auto fit = profile_search(x, cfg);
    const ProfilePoint* best = nullptr;
    for (const auto& pt : fit.profile_table) {
        if (!pt.ok) continue;
        if (!best || pt.objective < best->objective ||
            (pt.objective == best->objective && std::tie(pt.r, pt.d) < std::tie(best->r, best->d)))
            best = &pt;
    }
    ASSERT_NE(best, nullptr);
    EXPECT_EQ(fit.params.r, best->r);
    EXPECT_EQ(fit.params.d, best->d);
    EXPECT_EQ(fit.objective, best->objective);
}

TEST(ProfileSearch, ObjectiveConstantBetweenOrderStatistics) {
    const auto truth = benchmark_case(4);
    const auto x = sim(truth, 250, 31).values;
    std::vector<double> z(x.begin(), x.end() - 1);
    std::sort(z.begin(), z.end());
    std::vector<double> base, shifted;
    for (std::size_t i = 60; i < 190; i += 13) {
        base.push_back(z[i]);
        shifted.push_back(z[i] + 0.4 * (z[i + 1] - z[i]));
    }
    auto cfg = config_with(0.5);
    cfg.warm_start = false;
    cfg.delays = {1};
    cfg.grid = ThresholdGrid::list(base);
    const auto a = profile_search(x, cfg);
    cfg.grid = ThresholdGrid::list(shifted);
    const auto b = profile_search(x, cfg);
    ASSERT_EQ(a.profile_table.size(), b.profile_table.size());
    for (std::size_t i = 0; i < a.profile_table.size(); ++i)
        EXPECT_EQ(a.profile_table[i].objective, b.profile_table[i].objective) << i;
}

TEST(ProfileSearch, ParallelMatchesSerial) {
    const auto x = sim(benchmark_case(3), 300, 44).values;
    auto cfg = config_with(0.8);
    cfg.grid = ThresholdGrid::quantiles(10, 90, 20);
    cfg.delays = {1, 2, 3};
    const auto serial = profile_search(x, cfg);
    cfg.jobs = 3;
    const auto parallel = profile_search(x, cfg);
    EXPECT_EQ(serial.params, parallel.params);
    EXPECT_EQ(serial.objective, parallel.objective);
}

TEST(ProfileSearch, EmptyAdmissibleGrid) {
    const auto x = sim(benchmark_case(1), 100, 2).values;
    auto cfg = config_with(0.5);
    cfg.grid = ThresholdGrid::list({-1e6});
    EXPECT_THROW(profile_search(x, cfg), ConfigError);
    EXPECT_THROW(profile_search(std::vector<double>(5, 0.1), FitConfig{}), ConfigError);
}

TEST(Sandwich, MatchesWhiteCovarianceForGatedRegression) {
    auto truth = TarmaParams::zeros(1, 0, 0.0, 1);
    truth.phi1 = {0.4, 0.5};
    truth.phi2 = {-0.3, -0.2};
    const auto x = sim(truth, 600, 19).values;
    const auto ref = oracle::gated_regression(x, 1, 0.0, 1);
    auto params = truth;
    params.set_lambda(ref.beta);
    const auto sw = sandwich_covariance(x, params, LossSpec::power_divergence(0.0), 0.9, default_start(params));
    ASSERT_TRUE(sw.ok) << sw.message;
    EXPECT_LT((sw.covariance - ref.hc0).norm() / ref.hc0.norm(), 1e-8);
}

TEST(Sandwich, SymmetricMatrices) {
    const auto truth = benchmark_case(1);
    const auto x = sim(truth, 400, 23).values;
    auto cfg = config_with(0.5);
    cfg.grid = ThresholdGrid::fixed(truth.r);
    cfg.delays = {1};
    const auto fit = profile_search(x, cfg);
    ASSERT_TRUE(fit.sandwich.ok);
    EXPECT_LT((fit.sandwich.H - fit.sandwich.H.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((fit.sandwich.J - fit.sandwich.J.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    const auto& C = fit.sandwich.covariance;
    EXPECT_LT((C - C.transpose()).cwiseAbs().maxCoeff(), 1e-12 * C.cwiseAbs().maxCoeff());
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(C).eigenvalues().minCoeff(), -1e-12);
    ASSERT_EQ(fit.std_errors.size(), 6u);
    for (Eigen::Index a = 0; a < 6; ++a) EXPECT_DOUBLE_EQ(fit.std_errors[static_cast<std::size_t>(a)], std::sqrt(C(a, a)));
}

TEST(Sandwich, GaussNewtonHessianIsClose) {
    const auto truth = benchmark_case(2);
    const auto x = sim(truth, 800, 29).values;
    const auto full = sandwich_covariance(x, truth, LossSpec::power_divergence(0.0), 1.0, 1, false);
    const auto gn = sandwich_covariance(x, truth, LossSpec::power_divergence(0.0), 1.0, 1, true);
    ASSERT_TRUE(full.ok && gn.ok);
    EXPECT_LT((full.H - gn.H).norm() / full.H.norm(), 0.1);
    EXPECT_NE(full.H, gn.H);
}

TEST(OutlierWeights, NormalizedAndRanked) {
    FitResult fit;
    fit.loss = LossSpec::power_divergence(0.5);
    fit.sigma_hat = 1.0;
    fit.residuals = {0.1, -4.0, 0.3, 4.0, 2.0, -0.2};
    const auto w = robust_outlier_weights(fit, 3);
    double s = 0.0;
    for (double v : w.weights) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_EQ(w.flagged.size(), 3u);
    EXPECT_EQ(w.flagged[2], 4u);
    EXPECT_TRUE((w.flagged[0] == 1 && w.flagged[1] == 3) || (w.flagged[0] == 3 && w.flagged[1] == 1));

    fit.residuals.assign(8, 0.7);
    for (double v : robust_outlier_weights(fit, 1).weights) EXPECT_NEAR(v, 1.0 / 8.0, 1e-15);
    EXPECT_THROW(robust_outlier_weights(fit, 9), ConfigError);
    fit.loss.alpha = 0.0;
    EXPECT_THROW(robust_outlier_weights(fit, 1), ConfigError);
}

TEST(OutlierWeights, ExtremeResidualsDoNotUnderflow) {
    FitResult fit;
    fit.loss = LossSpec::power_divergence(2.0);
    fit.sigma_hat = 0.01;
    fit.residuals = {5.0, 6.0, 7.0};
    const auto w = robust_outlier_weights(fit, 1);
    EXPECT_NEAR(w.weights[0] + w.weights[1] + w.weights[2], 1.0, 1e-12);
    EXPECT_EQ(w.flagged[0], 2u);
}

TEST(Criterion, PenaltyNearParameterCountForGaussianLs) {
    const auto truth = benchmark_case(1);
    const auto x = sim(truth, 2000, 88).values;
    auto cfg = config_with(0.0);
    cfg.grid = ThresholdGrid::fixed(truth.r);
    cfg.delays = {1};
    const auto fit = profile_search(x, cfg);
    EXPECT_NEAR(penalty_trace(fit), 6.0, 1.5);
    EXPECT_DOUBLE_EQ(model_selection_criterion(fit), 2 * fit.objective + 2 * penalty_trace(fit));
}

TEST(Criterion, PrefersTrueOrderOverOverfit) {
    const auto truth = benchmark_case(1);
    int wins = 0;
    for (std::uint64_t rep = 0; rep < 100; ++rep) {
        const auto x = sim(truth, 500, 9000 + rep).values;
        auto cfg = config_with(0.0);
        cfg.grid = ThresholdGrid::fixed(truth.r);
        cfg.delays = {1};
        cfg.min_start = 2;  // same objective terms for both orders
        const auto small = profile_search(x, cfg);
        cfg.p = 2;
        const auto big = profile_search(x, cfg);
        wins += model_selection_criterion(small) < model_selection_criterion(big);
    }
    EXPECT_GT(wins, 50);
}

TEST(Criterion, WithheldCovarianceIsAnError) {
    FitResult fit;
    fit.sandwich.ok = false;
    fit.sandwich.message = "condition number too large";
    EXPECT_THROW(model_selection_criterion(fit), NumericalError);
}
