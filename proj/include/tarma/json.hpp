#pragma once

// JSON mapping for parameters, configurations and results (nlohmann::json).
// Readers are strict: unknown keys and wrong types raise ConfigError.

#include "tarma/error.hpp"
#include "tarma/estimation.hpp"
#include "tarma/evaluation.hpp"
#include "tarma/model.hpp"
#include "tarma/robust_loss.hpp"
#include "tarma/simulate.hpp"
#include "tarma/timeseries.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

namespace tarma::io {

using json = nlohmann::ordered_json;

namespace detail {

inline void check_object(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
}

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    check_object(j, where);
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || item.key() == a;
        if (!ok) throw ConfigError(where + ": unknown key \"" + item.key() + "\"");
    }
}

template <class T>
T read(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError(where + ": missing key \"" + std::string(key) + "\"");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + ": key \"" + std::string(key) + "\" has the wrong type");
    }
}

template <class T>
T read_or(const json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    return read<T>(j, key, where);
}

/// Non-finite doubles become null.
inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json numbers(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(number(x));
    return a;
}

inline json numbers(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
    return a;
}

inline json matrix(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(number(m(i, k)));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace detail

inline json parse_text(const std::string& text, const std::string& where) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(where + ": invalid JSON (" + std::string(e.what()) + ")");
    }
}

inline json read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path);
}

inline void write_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Model parameters
// ---------------------------------------------------------------------------

inline json to_json(const TarmaParams& p) {
    return json{{"p", p.p},
                {"q", p.q},
                {"d", p.d},
                {"r", p.r},
                {"phi1", p.phi1},
                {"phi2", p.phi2},
                {"theta1", p.theta1},
                {"theta2", p.theta2}};
}

/// Accepts the explicit parameter object or {"case": 1..4}.
inline TarmaParams params_from_json(const json& j, const std::string& where = "params") {
    detail::check_object(j, where);
    if (j.contains("case")) {
        detail::check_keys(j, {"case"}, where);
        return benchmark_case(detail::read<int>(j, "case", where));
    }
    detail::check_keys(j, {"p", "q", "d", "r", "phi1", "phi2", "theta1", "theta2"}, where);
    TarmaParams p;
    p.phi1 = detail::read<std::vector<double>>(j, "phi1", where);
    p.phi2 = detail::read<std::vector<double>>(j, "phi2", where);
    p.theta1 = detail::read_or<std::vector<double>>(j, "theta1", {}, where);
    p.theta2 = detail::read_or<std::vector<double>>(j, "theta2", {}, where);
    p.r = detail::read<double>(j, "r", where);
    p.d = detail::read<int>(j, "d", where);
    if (p.phi1.empty()) throw ConfigError(where + ": phi1 needs at least the intercept");
    p.p = detail::read_or<int>(j, "p", static_cast<int>(p.phi1.size()) - 1, where);
    p.q = detail::read_or<int>(j, "q", static_cast<int>(p.theta1.size()), where);
    validate(p);
    return p;
}

// ---------------------------------------------------------------------------
// Contamination and innovations
// ---------------------------------------------------------------------------

inline std::string kind_name(OutlierKind k) {
    switch (k) {
        case OutlierKind::additive: return "AO";
        case OutlierKind::replacement: return "RO";
        case OutlierKind::innovation: return "IO";
    }
    return "AO";
}

inline OutlierKind kind_from_name(const std::string& s) {
    if (s == "AO" || s == "additive") return OutlierKind::additive;
    if (s == "RO" || s == "replacement") return OutlierKind::replacement;
    if (s == "IO" || s == "innovation") return OutlierKind::innovation;
    throw ConfigError("unknown outlier kind \"" + s + "\" (expected AO, RO or IO)");
}

inline std::string pattern_name(OutlierPattern p) {
    switch (p) {
        case OutlierPattern::equally_spaced: return "equally_spaced";
        case OutlierPattern::iid_bernoulli: return "iid";
        case OutlierPattern::patchy: return "patchy";
    }
    return "equally_spaced";
}

inline OutlierPattern pattern_from_name(const std::string& s) {
    if (s == "equally_spaced") return OutlierPattern::equally_spaced;
    if (s == "iid" || s == "iid_bernoulli") return OutlierPattern::iid_bernoulli;
    if (s == "patchy") return OutlierPattern::patchy;
    throw ConfigError("unknown outlier pattern \"" + s + "\" (expected equally_spaced, iid or patchy)");
}

inline json to_json(const ContaminationSpec& c) {
    json j{{"kind", kind_name(c.kind)},
           {"epsilon", c.epsilon},
           {"k", c.k},
           {"sign_prob", c.sign_prob},
           {"pattern", pattern_name(c.pattern)}};
    if (c.pattern == OutlierPattern::patchy) j["mean_duration"] = c.mean_duration;
    return j;
}

inline ContaminationSpec contamination_from_json(const json& j, const std::string& where = "contamination") {
    detail::check_keys(j, {"kind", "epsilon", "k", "sign_prob", "pattern", "mean_duration"}, where);
    ContaminationSpec c;
    c.kind = kind_from_name(detail::read_or<std::string>(j, "kind", "AO", where));
    c.epsilon = detail::read<double>(j, "epsilon", where);
    c.k = detail::read<double>(j, "k", where);
    c.sign_prob = detail::read_or<double>(j, "sign_prob", c.sign_prob, where);
    c.pattern = pattern_from_name(detail::read_or<std::string>(j, "pattern", "equally_spaced", where));
    c.mean_duration = detail::read_or<double>(j, "mean_duration", c.mean_duration, where);
    check_contamination(c);
    return c;
}

inline json to_json(const InnovationSpec& s) {
    json j;
    switch (s.kind) {
        case InnovationSpec::Kind::gaussian: j = {{"kind", "gaussian"}, {"variance", s.variance}}; break;
        case InnovationSpec::Kind::gaussian_mixture:
            j = {{"kind", "mixture"},
                 {"epsilon", s.mix_epsilon},
                 {"variance0", s.variance0},
                 {"variance1", s.variance1}};
            break;
        case InnovationSpec::Kind::custom: j = {{"kind", "custom"}}; break;
    }
    if (s.outliers) j["outliers"] = to_json(*s.outliers);
    return j;
}

/// The seed is not part of the JSON; callers set it from the command line.
inline InnovationSpec innovations_from_json(const json& j, const std::string& where = "innovations") {
    detail::check_keys(j, {"kind", "variance", "epsilon", "variance0", "variance1", "outliers"}, where);
    InnovationSpec s;
    const auto kind = detail::read_or<std::string>(j, "kind", "gaussian", where);
    if (kind == "gaussian") {
        s.kind = InnovationSpec::Kind::gaussian;
        s.variance = detail::read_or<double>(j, "variance", 1.0, where);
    } else if (kind == "mixture" || kind == "gaussian_mixture") {
        s.kind = InnovationSpec::Kind::gaussian_mixture;
        s.mix_epsilon = detail::read<double>(j, "epsilon", where);
        s.variance0 = detail::read_or<double>(j, "variance0", 1.0, where);
        s.variance1 = detail::read<double>(j, "variance1", where);
    } else {
        throw ConfigError(where + ": unknown innovation kind \"" + kind + "\" (expected gaussian or mixture)");
    }
    if (j.contains("outliers")) s.outliers = contamination_from_json(j.at("outliers"), where + ".outliers");
    check_innovations(s);
    return s;
}

// ---------------------------------------------------------------------------
// Loss and fit configuration
// ---------------------------------------------------------------------------

inline std::string family_name(LossFamily f) {
    switch (f) {
        case LossFamily::power_divergence: return "power_divergence";
        case LossFamily::bisquare: return "bisquare";
        case LossFamily::least_squares: return "least_squares";
    }
    return "power_divergence";
}

inline std::string scale_name(ScalePolicy s) {
    switch (s) {
        case ScalePolicy::automatic: return "auto";
        case ScalePolicy::mad: return "mad";
        case ScalePolicy::rms: return "rms";
        case ScalePolicy::fixed: return "fixed";
    }
    return "auto";
}

inline json to_json(const LossSpec& l) {
    json j{{"family", family_name(l.family)}};
    if (l.family == LossFamily::power_divergence) j["alpha"] = l.alpha;
    if (l.family == LossFamily::bisquare) j["c"] = l.c;
    j["scale_policy"] = scale_name(l.scale);
    if (l.scale == ScalePolicy::fixed) j["sigma"] = l.fixed_sigma;
    return j;
}

inline LossSpec loss_from_json(const json& j, const std::string& where = "loss") {
    detail::check_keys(j, {"family", "alpha", "c", "scale_policy", "sigma"}, where);
    LossSpec l;
    const auto fam = detail::read_or<std::string>(j, "family", "power_divergence", where);
    if (fam == "power_divergence")
        l.family = LossFamily::power_divergence;
    else if (fam == "bisquare")
        l.family = LossFamily::bisquare;
    else if (fam == "least_squares" || fam == "ls")
        l.family = LossFamily::least_squares;
    else
        throw ConfigError(where + ": unknown loss family \"" + fam + "\"");
    l.alpha = detail::read_or<double>(j, "alpha", 0.0, where);
    l.c = detail::read_or<double>(j, "c", l.c, where);
    const auto sc = detail::read_or<std::string>(j, "scale_policy", "auto", where);
    if (sc == "auto")
        l.scale = ScalePolicy::automatic;
    else if (sc == "mad")
        l.scale = ScalePolicy::mad;
    else if (sc == "rms")
        l.scale = ScalePolicy::rms;
    else if (sc == "fixed")
        l.scale = ScalePolicy::fixed;
    else
        throw ConfigError(where + ": unknown scale_policy \"" + sc + "\" (expected auto, mad, rms or fixed)");
    l.fixed_sigma = detail::read_or<double>(j, "sigma", l.fixed_sigma, where);
    check_loss(l);
    return l;
}

inline json to_json(const ThresholdGrid& g) {
    switch (g.kind) {
        case ThresholdGrid::Kind::fixed: return json{{"fixed", g.values.empty() ? 0.0 : g.values.front()}};
        case ThresholdGrid::Kind::explicit_values: return json{{"values", g.values}};
        case ThresholdGrid::Kind::quantiles:
            return json{{"quantiles", {{"lo_pct", g.lo_pct}, {"hi_pct", g.hi_pct}, {"max_points", g.max_points}}}};
    }
    return json{};
}

inline ThresholdGrid grid_from_json(const json& j, const std::string& where = "threshold") {
    detail::check_keys(j, {"fixed", "values", "quantiles"}, where);
    if (j.size() != 1) throw ConfigError(where + ": give exactly one of fixed, values, quantiles");
    if (j.contains("fixed")) return ThresholdGrid::fixed(detail::read<double>(j, "fixed", where));
    if (j.contains("values")) return ThresholdGrid::list(detail::read<std::vector<double>>(j, "values", where));
    const auto& qj = j.at("quantiles");
    const std::string w = where + ".quantiles";
    detail::check_keys(qj, {"lo_pct", "hi_pct", "max_points"}, w);
    return ThresholdGrid::quantiles(detail::read_or<double>(qj, "lo_pct", 10.0, w),
                                    detail::read_or<double>(qj, "hi_pct", 90.0, w),
                                    detail::read_or<std::size_t>(qj, "max_points", 100, w));
}

inline json to_json(const FitConfig& c) {
    return json{{"p", c.p},
                {"q", c.q},
                {"loss", to_json(c.loss)},
                {"threshold", to_json(c.grid)},
                {"delays", c.delays},
                {"max_irls_iters", c.max_irls_iters},
                {"irls_tol", c.irls_tol},
                {"inner", {{"max_iters", c.inner.max_iters}, {"damping", c.inner.damping}, {"step_tol", c.inner.step_tol}}},
                {"trim_fraction", c.trim_fraction},
                {"warm_start", c.warm_start},
                {"gauss_newton_hessian", c.gauss_newton_hessian},
                {"max_ma_bound", c.max_ma_bound}};
}

/// Missing keys keep the defaults of `base`.
inline FitConfig fit_config_from_json(const json& j, FitConfig base = {}, const std::string& where = "fit") {
    detail::check_keys(j,
                       {"p", "q", "loss", "threshold", "delays", "max_irls_iters", "irls_tol", "inner", "trim_fraction",
                        "warm_start", "gauss_newton_hessian", "max_ma_bound"},
                       where);
    FitConfig c = std::move(base);
    c.p = detail::read_or<int>(j, "p", c.p, where);
    c.q = detail::read_or<int>(j, "q", c.q, where);
    if (j.contains("loss")) c.loss = loss_from_json(j.at("loss"), where + ".loss");
    if (j.contains("threshold")) c.grid = grid_from_json(j.at("threshold"), where + ".threshold");
    c.delays = detail::read_or<std::vector<int>>(j, "delays", c.delays, where);
    c.max_irls_iters = detail::read_or<int>(j, "max_irls_iters", c.max_irls_iters, where);
    c.irls_tol = detail::read_or<double>(j, "irls_tol", c.irls_tol, where);
    if (j.contains("inner")) {
        const auto& ij = j.at("inner");
        const std::string w = where + ".inner";
        detail::check_keys(ij, {"max_iters", "damping", "step_tol"}, w);
        c.inner.max_iters = detail::read_or<int>(ij, "max_iters", c.inner.max_iters, w);
        c.inner.damping = detail::read_or<double>(ij, "damping", c.inner.damping, w);
        c.inner.step_tol = detail::read_or<double>(ij, "step_tol", c.inner.step_tol, w);
    }
    c.trim_fraction = detail::read_or<double>(j, "trim_fraction", c.trim_fraction, where);
    c.warm_start = detail::read_or<bool>(j, "warm_start", c.warm_start, where);
    c.gauss_newton_hessian = detail::read_or<bool>(j, "gauss_newton_hessian", c.gauss_newton_hessian, where);
    c.max_ma_bound = detail::read_or<double>(j, "max_ma_bound", c.max_ma_bound, where);
    check_config(c);
    return c;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

inline json to_json(const FitResult& f) {
    json profile = json::array();
    for (const auto& pt : f.profile_table) {
        json row{{"r", pt.r}, {"d", pt.d}, {"objective", detail::number(pt.objective)}, {"ok", pt.ok}};
        if (pt.ok) {
            row["sigma"] = pt.sigma;
            row["converged"] = pt.converged;
            row["iterations"] = pt.iterations;
        } else {
            row["error"] = pt.error;
        }
        profile.push_back(std::move(row));
    }
    json conv{{"iterations", f.convergence.iterations},
              {"converged", f.convergence.converged},
              {"objective_trace", detail::numbers(f.convergence.objective_trace)},
              {"scale_trace", detail::numbers(f.convergence.scale_trace)}};
    json sandwich{{"ok", f.sandwich.ok}, {"n", f.sandwich.n}, {"condition", detail::number(f.sandwich.condition)}};
    if (!f.sandwich.message.empty()) sandwich["message"] = f.sandwich.message;
    return json{{"params", to_json(f.params)},
                {"loss", to_json(f.loss)},
                {"objective", detail::number(f.objective)},
                {"sigma_hat", detail::number(f.sigma_hat)},
                {"start", f.start},
                {"n_obs", f.n_obs},
                {"coefficients", detail::numbers(f.params.lambda())},
                {"std_errors", f.sandwich.ok ? detail::numbers(f.std_errors) : json(nullptr)},
                {"covariance", f.sandwich.ok ? detail::matrix(f.sandwich.covariance) : json(nullptr)},
                {"sandwich", sandwich},
                {"convergence", conv},
                {"residuals", detail::numbers(f.residuals)},
                {"irls_weights", detail::numbers(f.irls_weights)},
                {"profile_table", profile}};
}

inline json to_json(const TimeSeries& s) {
    json j{{"values", detail::numbers(s.values)}};
    if (!s.timestamps.empty()) j["timestamps"] = s.timestamps;
    return j;
}

inline TimeSeries series_from_json(const json& j, const std::string& where = "series") {
    detail::check_keys(j, {"values", "timestamps"}, where);
    TimeSeries s;
    s.values = detail::read<std::vector<double>>(j, "values", where);
    s.timestamps = detail::read_or<std::vector<std::string>>(j, "timestamps", {}, where);
    check_series(s);
    return s;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// {"case" | "truth", "contamination"?, "alpha_grid", "n" | "sample_sizes", "replications", "fit",
///  "fix_threshold_at_truth", "burn_in", "innovation_variance", "label"}. The seed comes from the caller.
inline McConfig mc_config_from_json(const json& j, const std::string& where = "montecarlo") {
    detail::check_keys(j,
                       {"label", "case", "truth", "contamination", "alpha_grid", "n", "sample_sizes", "replications",
                        "fit", "fix_threshold_at_truth", "burn_in", "innovation_variance"},
                       where);
    McConfig c;
    if (j.contains("case") == j.contains("truth")) throw ConfigError(where + ": give exactly one of case, truth");
    if (j.contains("case")) {
        const int id = detail::read<int>(j, "case", where);
        c.truth = benchmark_case(id);
        c.label = "case" + std::to_string(id);
    } else {
        c.truth = params_from_json(j.at("truth"), where + ".truth");
    }
    c.label = detail::read_or<std::string>(j, "label", c.label, where);
    if (j.contains("contamination") && !j.at("contamination").is_null())
        c.contamination = contamination_from_json(j.at("contamination"), where + ".contamination");
    c.alpha_grid = detail::read_or<std::vector<double>>(j, "alpha_grid", c.alpha_grid, where);
    if (j.contains("n") && j.contains("sample_sizes")) throw ConfigError(where + ": give n or sample_sizes, not both");
    if (j.contains("n")) c.sample_sizes = {detail::read<std::size_t>(j, "n", where)};
    c.sample_sizes = detail::read_or<std::vector<std::size_t>>(j, "sample_sizes", c.sample_sizes, where);
    c.replications = detail::read_or<std::size_t>(j, "replications", c.replications, where);
    FitConfig base;
    base.p = c.truth.p;
    base.q = c.truth.q;
    if (j.contains("fit")) base = fit_config_from_json(j.at("fit"), base, where + ".fit");
    c.fit = base;
    c.fix_threshold_at_truth = detail::read_or<bool>(j, "fix_threshold_at_truth", false, where);
    c.burn_in = detail::read_or<std::size_t>(j, "burn_in", c.burn_in, where);
    c.innovation_variance = detail::read_or<double>(j, "innovation_variance", c.innovation_variance, where);
    check_mc_config(c);
    return c;
}

inline json to_json(const McConfig& c) {
    json j{{"label", c.label},
           {"truth", to_json(c.truth)},
           {"contamination", c.contamination ? to_json(*c.contamination) : json(nullptr)},
           {"alpha_grid", c.alpha_grid},
           {"sample_sizes", c.sample_sizes},
           {"replications", c.replications},
           {"master_seed", c.master_seed},
           {"fit", to_json(c.fit)},
           {"fix_threshold_at_truth", c.fix_threshold_at_truth},
           {"burn_in", c.burn_in},
           {"innovation_variance", c.innovation_variance}};
    return j;
}

inline json to_json(const McReport& r) {
    json cells = json::array();
    for (const auto& c : r.cells) {
        json notes = json::array();
        for (const auto& n : c.failure_notes) notes.push_back(n);
        cells.push_back(json{{"alpha", c.alpha},
                             {"n", c.n},
                             {"replications", c.replications},
                             {"used", c.used},
                             {"failures", c.failures},
                             {"degenerate", c.degenerate},
                             {"squared_bias", detail::number(c.squared_bias)},
                             {"variance", detail::number(c.variance)},
                             {"total_variance", detail::number(c.total_variance)},
                             {"squared_bias_lambda", detail::number(c.squared_bias_lambda)},
                             {"variance_lambda", detail::number(c.variance_lambda)},
                             {"mean", detail::numbers(c.mean)},
                             {"var", detail::numbers(c.var)},
                             {"mse", detail::numbers(c.mse)},
                             {"failure_notes", notes}});
    }
    return json{{"config", to_json(r.config)}, {"cells", cells}};
}

/// {"case" | "truth", "kind", "epsilons", "ks", "alphas", "n_large", "sign_prob", "pattern", "fit", "burn_in"}.
inline BiasCurveConfig bias_config_from_json(const json& j, const std::string& where = "biascurve") {
    detail::check_keys(j,
                       {"case", "truth", "kind", "epsilons", "ks", "alphas", "n_large", "sign_prob", "pattern", "fit",
                        "burn_in"},
                       where);
    BiasCurveConfig c;
    if (j.contains("case") == j.contains("truth")) throw ConfigError(where + ": give exactly one of case, truth");
    c.truth = j.contains("case") ? benchmark_case(detail::read<int>(j, "case", where))
                                 : params_from_json(j.at("truth"), where + ".truth");
    c.kind = kind_from_name(detail::read_or<std::string>(j, "kind", "AO", where));
    c.epsilons = detail::read_or<std::vector<double>>(j, "epsilons", c.epsilons, where);
    c.ks = detail::read_or<std::vector<double>>(j, "ks", c.ks, where);
    c.alphas = detail::read_or<std::vector<double>>(j, "alphas", c.alphas, where);
    c.n_large = detail::read_or<std::size_t>(j, "n_large", c.n_large, where);
    c.sign_prob = detail::read_or<double>(j, "sign_prob", c.sign_prob, where);
    c.pattern = pattern_from_name(detail::read_or<std::string>(j, "pattern", "equally_spaced", where));
    FitConfig base;
    base.p = c.truth.p;
    base.q = c.truth.q;
    if (j.contains("fit")) base = fit_config_from_json(j.at("fit"), base, where + ".fit");
    c.fit = base;
    c.burn_in = detail::read_or<std::size_t>(j, "burn_in", c.burn_in, where);
    return c;
}

inline json to_json(const BiasCurveConfig& c) {
    return json{{"truth", to_json(c.truth)},
                {"kind", kind_name(c.kind)},
                {"epsilons", c.epsilons},
                {"ks", c.ks},
                {"alphas", c.alphas},
                {"n_large", c.n_large},
                {"sign_prob", c.sign_prob},
                {"pattern", pattern_name(c.pattern)},
                {"master_seed", c.master_seed},
                {"fit", to_json(c.fit)},
                {"burn_in", c.burn_in}};
}

inline json to_json(const BiasPoint& b) {
    json j{{"epsilon", b.epsilon}, {"k", b.k}, {"alpha", b.alpha}, {"ok", b.ok}};
    if (b.ok) {
        j["B"] = detail::number(b.B);
        j["B_lambda"] = detail::number(b.B_lambda);
        j["estimate"] = to_json(b.estimate);
    } else {
        j["error"] = b.error;
    }
    return j;
}

}  // namespace tarma::io
