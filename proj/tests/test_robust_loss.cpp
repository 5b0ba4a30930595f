#include "tarma/rng.hpp"
#include "tarma/robust_loss.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace tarma;

namespace {

std::vector<LossSpec> all_families() {
    return {LossSpec::power_divergence(0.0), LossSpec::power_divergence(0.3), LossSpec::power_divergence(1.0),
            LossSpec::power_divergence(2.5), LossSpec::bisquare(), LossSpec::least_squares()};
}

}  // namespace

TEST(Rho, PowerDivergenceClosedForm) {
    const auto spec = LossSpec::power_divergence(1.0);
    EXPECT_NEAR(rho(0.0, 1.0, spec), 1.0 - 1.0 / std::sqrt(2.0 * std::numbers::pi), 1e-15);
    EXPECT_NEAR(rho(0.0, 1.0, spec), 0.601, 5e-4);
    EXPECT_NEAR(rho(1e3, 1.0, spec), 1.0, 1e-15);
    EXPECT_NEAR(rho(40.0, 1.0, LossSpec::power_divergence(0.5)), 2.0, 1e-12);
}

TEST(Rho, GaussianLimit) {
    const double z = 1.3;
    const auto small = LossSpec::power_divergence(1e-8);
    const auto zero = LossSpec::power_divergence(0.0);
    const double a = rho(z, 1.0, small) - rho(0.0, 1.0, small);
    const double b = rho(z, 1.0, zero) - rho(0.0, 1.0, zero);
    EXPECT_LT(std::abs(a - b), 1e-6);
    EXPECT_NEAR(b, z * z / 2.0, 1e-15);
    EXPECT_NEAR(rho(0.0, 2.0, zero), 0.5 * std::log(2.0 * std::numbers::pi * 4.0), 1e-15);
}

TEST(Rho, RejectsBadScale) {
    for (const auto& s : all_families()) {
        EXPECT_THROW(rho(1.0, 0.0, s), ConfigError);
        EXPECT_THROW(psi(1.0, -1.0, s), ConfigError);
        EXPECT_THROW(irls_weight(1.0, NAN, s), ConfigError);
    }
    EXPECT_THROW(check_loss(LossSpec::power_divergence(-0.1)), ConfigError);
    EXPECT_THROW(check_loss(LossSpec::bisquare(0.0)), ConfigError);
}

TEST(Rho, EvenAndMonotoneInAbsoluteValue) {
    for (const auto& s : all_families()) {
        double prev = rho(0.0, 1.3, s);
        for (int i = 1; i <= 400; ++i) {
            const double z = 0.025 * i;
            const double v = rho(z, 1.3, s);
            EXPECT_EQ(v, rho(-z, 1.3, s));
            EXPECT_GE(v, prev);
            prev = v;
        }
    }
}

TEST(Psi, ZeroAtOriginAndOdd) {
    for (const auto& s : all_families()) {
        EXPECT_EQ(psi(0.0, 1.0, s), 0.0);
        for (double z : {0.1, 1.0, 4.0}) EXPECT_EQ(psi(-z, 0.7, s), -psi(z, 0.7, s));
    }
}

TEST(Psi, BoundedAndRedescending) {
    const auto spec = LossSpec::power_divergence(1.0);
    const double top = psi(1.0, 1.0, spec);
    for (int i = -1000; i <= 1000; ++i) EXPECT_LE(std::abs(psi(0.01 * i, 1.0, spec)), top + 1e-15);
    EXPECT_LT(psi(5.0, 1.0, spec), top / 10.0);
    // maximum at sigma / sqrt(alpha) for other alphas too
    const auto a4 = LossSpec::power_divergence(4.0);
    EXPECT_GT(psi(0.5, 1.0, a4), psi(0.49, 1.0, a4));
    EXPECT_GT(psi(0.5, 1.0, a4), psi(0.51, 1.0, a4));
}

TEST(Psi, MatchesFiniteDifferences) {
    const double h = 1e-6;
    for (const auto& s : all_families()) {
        for (double z : {-2.0, -0.5, 0.7, 3.0}) {
            const double fd = (rho(z + h, 1.0, s) - rho(z - h, 1.0, s)) / (2 * h);
            EXPECT_LT(std::abs(psi(z, 1.0, s) - fd), 1e-6 * std::max(std::abs(fd), 1e-3)) << "z " << z;
            const double fd2 = (psi(z + h, 1.0, s) - psi(z - h, 1.0, s)) / (2 * h);
            EXPECT_LT(std::abs(psi_prime(z, 1.0, s) - fd2), 1e-6 * std::max(1.0, std::abs(fd2))) << "z " << z;
        }
    }
}

TEST(IrlsWeight, Examples) {
    const auto spec = LossSpec::power_divergence(1.0);
    EXPECT_EQ(irls_weight(0.0, 1.0, spec), 1.0);
    EXPECT_NEAR(irls_weight(3.0, 1.0, spec) / irls_weight(0.0, 1.0, spec), std::exp(-4.5), 1e-15);
    EXPECT_NEAR(std::exp(-4.5), 0.0111, 1e-4);
    for (double e : {-10.0, 0.0, 0.3, 7.0}) EXPECT_EQ(irls_weight(e, 2.0, LossSpec::power_divergence(0.0)), 1.0);
    for (double e : {0.2, 1.0, 2.5}) {
        EXPECT_LE(irls_weight(e, 1.0, spec), 1.0);
        // psi(e) / e is proportional to the weight
        const double ratio = psi(e, 1.0, spec) / e / irls_weight(e, 1.0, spec);
        EXPECT_NEAR(ratio, psi(1e-9, 1.0, spec) / 1e-9, 1e-9);
    }
}

TEST(Scale, MadExamples) {
    EXPECT_NEAR(m_scale(std::vector<double>{-1.0, 0.0, 1.0}), 1.0 / 0.6745, 1e-12);
    EXPECT_NEAR(1.0 / 0.6745, 1.4826, 1e-4);
    EXPECT_THROW(m_scale(std::vector<double>{2.0, 2.0, 2.0}), NumericalError);
    EXPECT_THROW(m_scale(std::vector<double>{2.0}), ConfigError);
}

TEST(Scale, ConsistentAtGaussian) {
    Rng rng(2024);
    std::vector<double> z(100000);
    for (auto& v : z) v = rng.normal();
    EXPECT_NEAR(m_scale(z), 1.0, 0.02);
    EXPECT_NEAR(rms_scale(z), 1.0, 0.01);
}

TEST(Scale, Equivariance) {
    Rng rng(5);
    std::vector<double> z(101);
    for (auto& v : z) v = rng.normal();
    std::vector<double> cz(z);
    for (auto& v : cz) v *= 2.5;
    EXPECT_NEAR(m_scale(cz), 2.5 * m_scale(z), 1e-12);
}

TEST(Scale, PolicyResolution) {
    EXPECT_EQ(LossSpec::power_divergence(0.0).resolved_scale(), ScalePolicy::rms);
    EXPECT_EQ(LossSpec::least_squares().resolved_scale(), ScalePolicy::rms);
    EXPECT_EQ(LossSpec::power_divergence(0.5).resolved_scale(), ScalePolicy::mad);
    auto fixed = LossSpec::bisquare();
    fixed.scale = ScalePolicy::fixed;
    fixed.fixed_sigma = 0.7;
    EXPECT_EQ(estimate_scale(std::vector<double>{1.0, 2.0, 3.0}, fixed), 0.7);
}
