#pragma once

#include "tarma/error.hpp"
#include "tarma/model.hpp"
#include "tarma/rng.hpp"
#include "tarma/timeseries.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tarma {

enum class OutlierKind { additive, replacement, innovation };
enum class OutlierPattern { equally_spaced, iid_bernoulli, patchy };

/**
 * Outlier injection settings.
 *
 * An outlier at time t shifts by (-1)^xi_t * k with P(xi_t = 1) = sign_prob.
 * Additive outliers add the shift to X_t, replacement outliers overwrite X_t
 * with the shift, innovation outliers add it to the innovation e_t.
 *
 * The equally-spaced pattern marks t (1-based) with t mod floor(1/epsilon) = 0.
 * The patchy pattern is a two-state Markov chain with stationary
 * probability epsilon and mean run length `mean_duration`.
 */
struct ContaminationSpec {
    OutlierKind kind = OutlierKind::additive;
    double epsilon = 0.1;
    double k = 10.0;
    double sign_prob = 0.95;
    OutlierPattern pattern = OutlierPattern::equally_spaced;
    double mean_duration = 3.0;  // patchy only
};

inline void check_contamination(const ContaminationSpec& spec) {
    if (!(spec.epsilon > 0.0 && spec.epsilon < 1.0)) throw ConfigError("contamination epsilon must lie in (0, 1)");
    if (!std::isfinite(spec.k)) throw ConfigError("outlier size k must be finite");
    if (!(spec.sign_prob >= 0.0 && spec.sign_prob <= 1.0)) throw ConfigError("sign_prob must lie in [0, 1]");
    if (spec.pattern == OutlierPattern::patchy) {
        if (!(spec.mean_duration >= 1.0)) throw ConfigError("patchy mean_duration must be at least 1");
        if (spec.epsilon * spec.mean_duration >= 1.0 - spec.epsilon)
            throw ConfigError("patchy pattern needs epsilon * mean_duration < 1 - epsilon");
    }
}

/// floor(1/epsilon), guarded against 1/0.1 landing just below 10.
inline std::size_t outlier_spacing(double epsilon) {
    return static_cast<std::size_t>(std::floor(1.0 / epsilon + 1e-9));
}

/// Generates the outlier indicator Z_t and signed shift for t = 1, 2, ...
class OutlierProcess {
public:
    OutlierProcess(const ContaminationSpec& spec, std::uint64_t seed) : spec_(spec), rng_(seed) {
        check_contamination(spec);
        spacing_ = outlier_spacing(spec.epsilon);
        if (spec.pattern == OutlierPattern::patchy) {
            leave_ = 1.0 / spec.mean_duration;
            enter_ = spec.epsilon * leave_ / (1.0 - spec.epsilon);
            state_ = rng_.bernoulli(spec.epsilon);
        }
    }

    /// Shift applied at 1-based time t (0 when Z_t = 0). Call with t = 1, 2, ... in order.
    double shift(std::size_t t) {
        bool hit = false;
        switch (spec_.pattern) {
            case OutlierPattern::equally_spaced: hit = t % spacing_ == 0; break;
            case OutlierPattern::iid_bernoulli: hit = rng_.bernoulli(spec_.epsilon); break;
            case OutlierPattern::patchy:
                if (t > 1) state_ = state_ ? !rng_.bernoulli(leave_) : rng_.bernoulli(enter_);
                hit = state_;
                break;
        }
        if (!hit) return 0.0;
        last_hit_ = true;
        return rng_.bernoulli(spec_.sign_prob) ? -spec_.k : spec_.k;
    }

    /// Whether the most recent shift() call marked an outlier; resets the flag.
    bool take_hit() {
        const bool h = last_hit_;
        last_hit_ = false;
        return h;
    }

private:
    ContaminationSpec spec_;
    Rng rng_;
    std::size_t spacing_ = 1;
    double leave_ = 0.0;
    double enter_ = 0.0;
    bool state_ = false;
    bool last_hit_ = false;
};

/**
 * Innovation distribution for simulation.
 *
 * `custom` receives the stream and the 1-based post-burn-in time (values
 * <= 0 during burn-in). An optional innovation-outlier overlay adds
 * shifts at post-burn-in times; its randomness comes from a separate
 * sub-stream so the base draws are unaffected.
 */
struct InnovationSpec {
    enum class Kind { gaussian, gaussian_mixture, custom };
    Kind kind = Kind::gaussian;
    double variance = 1.0;
    double mix_epsilon = 0.0;  // mixture: (1-eps) N(0, variance0) + eps N(0, variance1)
    double variance0 = 1.0;
    double variance1 = 1.0;
    std::function<double(Rng&, long)> custom;
    std::optional<ContaminationSpec> outliers;
    std::uint64_t seed = 0;
    std::optional<std::uint64_t> outlier_seed;  // default: sub-stream 1 of `seed`
};

inline void check_innovations(const InnovationSpec& spec) {
    switch (spec.kind) {
        case InnovationSpec::Kind::gaussian:
            if (!(spec.variance > 0.0)) throw ConfigError("innovation variance must be positive");
            break;
        case InnovationSpec::Kind::gaussian_mixture:
            if (!(spec.variance0 > 0.0 && spec.variance1 > 0.0))
                throw ConfigError("mixture variances must be positive");
            if (!(spec.mix_epsilon >= 0.0 && spec.mix_epsilon <= 1.0))
                throw ConfigError("mixture weight must lie in [0, 1]");
            if (spec.variance0 > spec.variance1) throw ConfigError("mixture needs variance0 <= variance1");
            break;
        case InnovationSpec::Kind::custom:
            if (!spec.custom) throw ConfigError("custom innovation sampler is empty");
            break;
    }
    if (spec.outliers) {
        if (spec.outliers->kind != OutlierKind::innovation)
            throw ConfigError("innovation overlay must be an innovation-outlier spec");
        check_contamination(*spec.outliers);
    }
}

/// Adds an innovation-outlier overlay to `base`.
inline InnovationSpec contaminate_innovations(InnovationSpec base, const ContaminationSpec& spec) {
    if (spec.kind != OutlierKind::innovation)
        throw ConfigError("contaminate_innovations requires an innovation-outlier (IO) spec");
    check_contamination(spec);
    base.outliers = spec;
    return base;
}

/// Simulated path plus the innovations that drove it (post-burn-in).
struct SimulationPath {
    TimeSeries series;
    std::vector<double> innovations;
    std::vector<std::size_t> outlier_indices;  // 0-based, innovation outliers only
};

/**
 * Generates burn_in + n steps from a zero initial state (lagged X and e
 * are zero before the first step) and returns the last n.
 */
inline SimulationPath simulate_path(const TarmaParams& params, std::size_t n, const InnovationSpec& innovations,
                                    std::size_t burn_in = 500) {
    validate(params);
    check_innovations(innovations);
    if (n == 0) throw ConfigError("simulation length n must be at least 1");

    Rng rng(innovations.seed);
    std::optional<OutlierProcess> overlay;
    if (innovations.outliers)
        overlay.emplace(*innovations.outliers, innovations.outlier_seed.value_or(stream_seed(innovations.seed, 1)));

    const std::size_t total = burn_in + n;
    const auto p = static_cast<std::size_t>(params.p);
    const auto q = static_cast<std::size_t>(params.q);
    const auto d = static_cast<std::size_t>(params.d);
    std::vector<double> x(total, 0.0), e(total, 0.0);
    SimulationPath out;

    const double sd = std::sqrt(innovations.variance);
    const double sd0 = std::sqrt(innovations.variance0);
    const double sd1 = std::sqrt(innovations.variance1);

    for (std::size_t i = 0; i < total; ++i) {
        const long t = static_cast<long>(i) - static_cast<long>(burn_in) + 1;
        double eps = 0.0;
        switch (innovations.kind) {
            case InnovationSpec::Kind::gaussian: eps = sd * rng.normal(); break;
            case InnovationSpec::Kind::gaussian_mixture:
                eps = rng.bernoulli(innovations.mix_epsilon) ? sd1 * rng.normal() : sd0 * rng.normal();
                break;
            case InnovationSpec::Kind::custom: eps = innovations.custom(rng, t); break;
        }
        if (overlay && t >= 1) {
            eps += overlay->shift(static_cast<std::size_t>(t));
            if (overlay->take_hit()) out.outlier_indices.push_back(static_cast<std::size_t>(t - 1));
        }
        const double lagged = i >= d ? x[i - d] : 0.0;
        const int regime = lagged <= params.r ? 0 : 1;
        const auto& phi = regime == 0 ? params.phi1 : params.phi2;
        const auto& theta = regime == 0 ? params.theta1 : params.theta2;
        double v = phi[0] + eps;
        for (std::size_t m = 1; m <= p && m <= i; ++m) v += phi[m] * x[i - m];
        for (std::size_t j = 1; j <= q && j <= i; ++j) v += theta[j - 1] * e[i - j];
        if (!std::isfinite(v))
            throw NumericalError("simulation diverged at step " + std::to_string(i + 1));
        x[i] = v;
        e[i] = eps;
    }
    out.series.values.assign(x.begin() + static_cast<std::ptrdiff_t>(burn_in), x.end());
    out.innovations.assign(e.begin() + static_cast<std::ptrdiff_t>(burn_in), e.end());
    return out;
}

inline TimeSeries simulate(const TarmaParams& params, std::size_t n, const InnovationSpec& innovations,
                           std::size_t burn_in = 500) {
    return simulate_path(params, n, innovations, burn_in).series;
}

struct ContaminatedSeries {
    TimeSeries series;
    std::vector<std::size_t> indices;  // 0-based positions of injected outliers
};

/// Applies additive or replacement outliers to a copy of `series`.
inline ContaminatedSeries contaminate(const TimeSeries& series, const ContaminationSpec& spec, std::uint64_t seed) {
    if (spec.kind == OutlierKind::innovation)
        throw ConfigError("innovation outliers are injected during simulation; use contaminate_innovations");
    check_contamination(spec);
    if (spec.pattern == OutlierPattern::equally_spaced && outlier_spacing(spec.epsilon) > series.size())
        throw ConfigError("equally-spaced contamination needs epsilon * length >= 1");

    ContaminatedSeries out{series, {}};
    OutlierProcess process(spec, seed);
    for (std::size_t i = 0; i < series.size(); ++i) {
        const double s = process.shift(i + 1);
        if (!process.take_hit()) continue;
        out.indices.push_back(i);
        if (spec.kind == OutlierKind::additive)
            out.series.values[i] += s;
        else
            out.series.values[i] = s;
    }
    return out;
}

}  // namespace tarma
