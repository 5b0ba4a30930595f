// tarma: command-line front end for simulation, robust fitting and experiments.
//
// Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
// Human-readable summaries go to stdout; every artifact is written to a file
// together with a run manifest that replays the run byte for byte.

#include "tarma/json.hpp"
#include "tarma/tarma.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using tarma::io::json;

namespace {

std::string fmt(double v) {
    if (!std::isfinite(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::uint64_t file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw tarma::ConfigError("cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw tarma::ConfigError("cannot write " + path);
    out << text;
}

std::string series_csv(const tarma::TimeSeries& s, const std::vector<std::size_t>* flagged = nullptr) {
    std::vector<char> mark;
    if (flagged) {
        mark.assign(s.size(), 0);
        for (auto i : *flagged) mark[i] = 1;
    }
    std::ostringstream os;
    os << (s.timestamps.empty() ? "t" : "date") << ",value" << (flagged ? ",outlier" : "") << '\n';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.timestamps.empty())
            os << i + 1;
        else
            os << s.timestamps[i];
        os << ',' << fmt(s.values[i]);
        if (flagged) os << ',' << int(mark[i]);
        os << '\n';
    }
    return os.str();
}

/// Collects what a run read, wrote and resolved; serialized without timestamps.
struct Manifest {
    std::string subcommand;
    std::vector<std::string> args;
    std::optional<std::uint64_t> seed;
    json config = json::object();
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;

    json to_json() const {
        json in = json::object(), out = json::object();
        for (const auto& p : inputs) in[p] = hex(file_digest(p));
        for (const auto& p : outputs) out[p] = hex(file_digest(p));
        return json{{"tool", "tarma"},
                    {"version", tarma::version},
                    {"subcommand", subcommand},
                    {"args", args},
                    {"seed", seed ? json(*seed) : json(nullptr)},
                    {"config", config},
                    {"inputs", in},
                    {"outputs", out}};
    }
};

void write_manifest(const Manifest& m, const std::string& path) { tarma::io::write_file(path, m.to_json()); }

std::string manifest_path_for(const std::string& out, const std::string& explicit_path) {
    return explicit_path.empty() ? out + ".manifest.json" : explicit_path;
}

tarma::TimeSeries load_series(const std::string& path, const std::string& column, bool returns) {
    auto s = tarma::load_csv(path, column);
    return returns ? tarma::log_returns(s) : s;
}

// ---------------------------------------------------------------------------
// Subcommand option blocks
// ---------------------------------------------------------------------------

struct SimulateOpts {
    std::string params, innovations, out, manifest;
    int case_id = 0;
    std::size_t n = 0, burn_in = 500;
    std::uint64_t seed = 0;
};

struct ContaminateOpts {
    std::string input, column = "value", config, out, manifest;
    std::uint64_t seed = 0;
};

struct FitOpts {
    std::string input, column = "value", config, out, manifest;
    std::optional<double> alpha, r;
    std::optional<int> d;
    bool returns = false;
    unsigned jobs = 1;
};

struct ForecastOpts {
    std::string input, column = "value", fit, actuals, out, manifest;
    std::size_t horizon = 0;
    bool returns = false;
};

struct OutliersOpts {
    std::string input, column = "value", fit, out, manifest;
    std::size_t top_m = 0;
    bool returns = false;
};

struct ExperimentOpts {
    std::string config, out_dir, manifest;
    std::uint64_t seed = 0;
    std::optional<std::size_t> replications;
    unsigned jobs = 1;
};

struct SelectOpts {
    std::string input, column = "value", config, out, manifest;
    std::size_t test_len = 12;
    std::vector<double> alphas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    bool returns = false;
    unsigned jobs = 1;
};

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

int run_simulate(const SimulateOpts& o, Manifest& m) {
    if (o.n == 0) throw tarma::ConfigError("n must be at least 1");
    if ((o.case_id != 0) == !o.params.empty()) throw tarma::ConfigError("give exactly one of --params or --case");
    tarma::TarmaParams params;
    if (o.case_id != 0) {
        params = tarma::benchmark_case(o.case_id);
    } else {
        params = tarma::io::params_from_json(tarma::io::read_file(o.params), o.params);
        m.inputs.push_back(o.params);
    }
    tarma::InnovationSpec innov;
    if (!o.innovations.empty()) {
        innov = tarma::io::innovations_from_json(tarma::io::read_file(o.innovations), o.innovations);
        m.inputs.push_back(o.innovations);
    }
    innov.seed = o.seed;
    std::vector<std::string> warnings;
    tarma::validate(params, {}, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';

    const auto path = tarma::simulate_path(params, o.n, innov, o.burn_in);
    write_text(o.out, series_csv(path.series, innov.outliers ? &path.outlier_indices : nullptr));
    m.outputs.push_back(o.out);
    m.config = {{"params", tarma::io::to_json(params)},
                {"innovations", tarma::io::to_json(innov)},
                {"n", o.n},
                {"burn_in", o.burn_in}};

    const auto& v = path.series.values;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    std::size_t upper = 0;
    for (std::size_t i = static_cast<std::size_t>(params.d); i < v.size(); ++i) upper += v[i - params.d] > params.r;
    std::cout << "simulated " << v.size() << " observations (burn-in " << o.burn_in << ", seed " << o.seed << ")\n"
              << "mean " << fixed(mean) << ", min " << fixed(*std::min_element(v.begin(), v.end())) << ", max "
              << fixed(*std::max_element(v.begin(), v.end())) << ", upper-regime share "
              << fixed(static_cast<double>(upper) / static_cast<double>(v.size()), 3) << '\n';
    if (innov.outliers) std::cout << path.outlier_indices.size() << " innovation outliers injected\n";
    std::cout << "wrote " << o.out << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// contaminate
// ---------------------------------------------------------------------------

int run_contaminate(const ContaminateOpts& o, Manifest& m) {
    const auto series = tarma::load_csv(o.input, o.column);
    m.inputs.push_back(o.input);
    const auto spec = tarma::io::contamination_from_json(tarma::io::read_file(o.config), o.config);
    m.inputs.push_back(o.config);
    const auto out = tarma::contaminate(series, spec, o.seed);
    write_text(o.out, series_csv(out.series, &out.indices));
    m.outputs.push_back(o.out);
    m.config = {{"contamination", tarma::io::to_json(spec)}, {"column", o.column}};
    std::cout << tarma::io::kind_name(spec.kind) << " contamination: " << out.indices.size() << " of " << series.size()
              << " observations replaced or shifted (epsilon " << spec.epsilon << ", k " << spec.k << ")\n"
              << "wrote " << o.out << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

tarma::FitConfig resolve_fit_config(const std::string& path, std::optional<double> alpha, std::optional<double> r,
                                    std::optional<int> d, Manifest& m) {
    tarma::FitConfig cfg;
    bool alpha_given = alpha.has_value();
    if (!path.empty()) {
        const auto j = tarma::io::read_file(path);
        cfg = tarma::io::fit_config_from_json(j, {}, path);
        m.inputs.push_back(path);
        if (j.contains("loss") && j.at("loss").contains("alpha")) alpha_given = true;
        if (j.contains("loss") && j.at("loss").value("family", "power_divergence") != "power_divergence")
            alpha_given = true;
    }
    if (alpha) {
        cfg.loss.family = tarma::LossFamily::power_divergence;
        cfg.loss.alpha = *alpha;
    }
    if (!alpha_given) std::cerr << "warning: alpha not given; using alpha = 0 (least squares)\n";
    if (r) cfg.grid = tarma::ThresholdGrid::fixed(*r);
    if (d) cfg.delays = {*d};
    tarma::check_config(cfg);
    return cfg;
}

void print_fit_summary(const tarma::FitResult& f) {
    const auto& p = f.params;
    std::cout << "TARMA(" << p.p << "," << p.q << ") fit, loss " << tarma::io::family_name(f.loss.family);
    if (f.loss.family == tarma::LossFamily::power_divergence) std::cout << ", alpha = " << f.loss.alpha;
    std::cout << "\n"
              << "threshold r = " << fixed(p.r) << ", delay d = " << p.d << ", sigma = " << fixed(f.sigma_hat)
              << ", objective = " << fixed(f.objective) << ", n = " << f.n_obs << "\n\n";
    const bool se = f.sandwich.ok;
    auto cell = [](const std::string& s) {
        std::ostringstream os;
        os << std::setw(12) << s;
        return os.str();
    };
    std::cout << std::left << std::setw(10) << "" << std::right << cell("lower") << cell("upper") << '\n';
    auto row = [&](const std::string& name, std::size_t i1, std::size_t i2) {
        const auto lam = p.lambda();
        std::cout << std::left << std::setw(10) << name << std::right << cell(fixed(lam[i1])) << cell(fixed(lam[i2]))
                  << '\n';
        if (se)
            std::cout << std::setw(10) << "" << cell("(" + fixed(f.std_errors[i1]) + ")")
                      << cell("(" + fixed(f.std_errors[i2]) + ")") << '\n';
    };
    for (int l = 0; l <= p.p; ++l) row("phi_" + std::to_string(l), p.phi_index(0, l), p.phi_index(1, l));
    for (int l = 1; l <= p.q; ++l) row("theta_" + std::to_string(l), p.theta_index(0, l), p.theta_index(1, l));
    if (!se) std::cout << "standard errors withheld: " << f.sandwich.message << '\n';
    std::cout << "\nIRLS " << (f.convergence.converged ? "converged" : "stopped without converging") << " after "
              << f.convergence.iterations << " iterations\n";
}

int run_fit(const FitOpts& o, Manifest& m) {
    auto cfg = resolve_fit_config(o.config, o.alpha, o.r, o.d, m);
    cfg.jobs = o.jobs;
    const auto series = load_series(o.input, o.column, o.returns);
    m.inputs.insert(m.inputs.begin(), o.input);
    const auto fit = tarma::profile_search(series.values, cfg);
    tarma::io::write_file(o.out, tarma::io::to_json(fit));
    m.outputs.push_back(o.out);
    m.config = {{"fit", tarma::io::to_json(cfg)}, {"column", o.column}, {"log_returns", o.returns}};
    std::vector<std::string> warnings;
    tarma::validate(fit.params, {}, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    print_fit_summary(fit);
    std::cout << "wrote " << o.out << '\n';
    return 0;
}

/// Rebuilds the parts of a fit needed downstream: parameters, loss, scale and start.
tarma::FitResult fit_from_file(const std::string& path, std::span<const double> x) {
    const auto j = tarma::io::read_file(path);
    tarma::io::detail::check_object(j, path);
    if (!j.contains("params") || !j.contains("loss")) throw tarma::ConfigError(path + ": not a fit result");
    tarma::FitResult f;
    f.params = tarma::io::params_from_json(j.at("params"), path + ".params");
    f.loss = tarma::io::loss_from_json(j.at("loss"), path + ".loss");
    f.sigma_hat = tarma::io::detail::read_or<double>(j, "sigma_hat", 1.0, path);
    f.objective = tarma::io::detail::read_or<double>(j, "objective", 0.0, path);
    f.start = std::max(tarma::io::detail::read_or<std::size_t>(j, "start", 0, path), tarma::default_start(f.params));
    if (x.size() <= f.start) throw tarma::ConfigError("series is too short for the fitted model");
    f.residuals = tarma::residual_path(x, f.params, f.start, false).residuals;
    f.n_obs = f.residuals.size();
    return f;
}

// ---------------------------------------------------------------------------
// forecast
// ---------------------------------------------------------------------------

int run_forecast(const ForecastOpts& o, Manifest& m) {
    if (o.horizon == 0) throw tarma::ConfigError("horizon must be at least 1");
    const auto series = load_series(o.input, o.column, o.returns);
    m.inputs.push_back(o.input);
    const auto fit = fit_from_file(o.fit, series.values);
    m.inputs.push_back(o.fit);
    json out{{"horizon", o.horizon}};
    std::vector<double> pred;
    std::optional<tarma::TimeSeries> actual;
    if (!o.actuals.empty()) {
        auto a = load_series(o.actuals, o.column, false);
        m.inputs.push_back(o.actuals);
        if (a.size() < o.horizon)
            throw tarma::ConfigError("actuals hold " + std::to_string(a.size()) + " values, horizon is " +
                                     std::to_string(o.horizon));
        a.values.resize(o.horizon);
        if (!a.timestamps.empty()) a.timestamps.resize(o.horizon);
        pred = tarma::forecast_horizon(series, a, fit);
        actual = std::move(a);
        out["mode"] = "one_step_expanding";
    } else {
        pred = tarma::forecast_ahead(series, fit, o.horizon);
        out["mode"] = "multi_step";
    }
    out["forecasts"] = tarma::io::detail::numbers(pred);
    if (actual) {
        out["actuals"] = tarma::io::detail::numbers(actual->values);
        out["mape"] = tarma::mape(actual->values, pred);
        out["mape_sum"] = tarma::mape_sum(actual->values, pred);
    } else {
        out["actuals"] = nullptr;
        out["mape"] = nullptr;
        out["mape_sum"] = nullptr;
    }
    tarma::io::write_file(o.out, out);
    m.outputs.push_back(o.out);
    m.config = {{"horizon", o.horizon}, {"column", o.column}, {"log_returns", o.returns}};

    std::cout << std::setw(6) << "step" << std::setw(14) << "forecast" << (actual ? "        actual" : "") << '\n';
    for (std::size_t h = 0; h < pred.size(); ++h) {
        std::cout << std::setw(6) << h + 1 << std::setw(14) << fixed(pred[h], 6);
        if (actual) std::cout << std::setw(14) << fixed(actual->values[h], 6);
        std::cout << '\n';
    }
    if (actual) std::cout << "MAPE = " << fixed(out["mape"].get<double>(), 3) << "%\n";
    std::cout << "wrote " << o.out << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// outliers
// ---------------------------------------------------------------------------

int run_outliers(const OutliersOpts& o, Manifest& m) {
    const auto series = load_series(o.input, o.column, o.returns);
    m.inputs.push_back(o.input);
    const auto fit = fit_from_file(o.fit, series.values);
    m.inputs.push_back(o.fit);
    if (o.top_m == 0) throw tarma::ConfigError("top_m must be at least 1");
    if (o.top_m > series.size())
        throw tarma::ConfigError("top_m = " + std::to_string(o.top_m) + " exceeds the series length " +
                                 std::to_string(series.size()));
    const auto w = tarma::robust_outlier_weights(fit, o.top_m);
    std::ostringstream csv;
    csv << "t,x_t,residual,weight\n";
    std::cout << std::setw(6) << "t" << std::setw(14) << "x_t" << std::setw(14) << "residual" << std::setw(14)
              << "weight" << '\n';
    for (std::size_t j : w.flagged) {
        const std::size_t t = fit.start + j;
        const std::string label = series.timestamps.empty() ? std::to_string(t + 1) : series.timestamps[t];
        csv << label << ',' << fmt(series.values[t]) << ',' << fmt(fit.residuals[j]) << ',' << fmt(w.weights[j])
            << '\n';
        std::cout << std::setw(6) << label << std::setw(14) << fixed(series.values[t]) << std::setw(14)
                  << fixed(fit.residuals[j]) << std::setw(14) << std::scientific << std::setprecision(3)
                  << w.weights[j] << std::defaultfloat << '\n';
    }
    write_text(o.out, csv.str());
    m.outputs.push_back(o.out);
    m.config = {{"top_m", o.top_m}, {"column", o.column}, {"log_returns", o.returns}};
    std::cout << "wrote " << o.out << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// montecarlo
// ---------------------------------------------------------------------------

int run_montecarlo(const ExperimentOpts& o, Manifest& m) {
    auto cfg = tarma::io::mc_config_from_json(tarma::io::read_file(o.config), o.config);
    m.inputs.push_back(o.config);
    cfg.master_seed = o.seed;
    cfg.jobs = o.jobs;
    if (o.replications) cfg.replications = *o.replications;
    tarma::check_mc_config(cfg);
    const auto report = tarma::run_mc_experiment(cfg);

    fs::create_directories(o.out_dir);
    const double eps = cfg.contamination ? cfg.contamination->epsilon : 0.0;
    const double k = cfg.contamination ? cfg.contamination->k : 0.0;
    std::ostringstream lng, wide;
    lng << "case,alpha,n,epsilon,k,metric,value\n";
    wide << "case,alpha,n,epsilon,k,replications,used,failures,squared_bias,variance,total_variance,"
            "squared_bias_lambda,variance_lambda,degenerate\n";
    for (const auto& c : report.cells) {
        const std::string key =
            cfg.label + ',' + fmt(c.alpha) + ',' + std::to_string(c.n) + ',' + fmt(eps) + ',' + fmt(k) + ',';
        const std::pair<const char*, double> metrics[] = {{"squared_bias", c.squared_bias},
                                                          {"variance", c.variance},
                                                          {"total_variance", c.total_variance},
                                                          {"squared_bias_lambda", c.squared_bias_lambda},
                                                          {"variance_lambda", c.variance_lambda},
                                                          {"used", static_cast<double>(c.used)},
                                                          {"failures", static_cast<double>(c.failures)}};
        for (const auto& [name, v] : metrics) lng << key << name << ',' << fmt(v) << '\n';
        wide << key << c.replications << ',' << c.used << ',' << c.failures << ',' << fmt(c.squared_bias) << ','
             << fmt(c.variance) << ',' << fmt(c.total_variance) << ',' << fmt(c.squared_bias_lambda) << ','
             << fmt(c.variance_lambda) << ',' << (c.degenerate ? 1 : 0) << '\n';
    }
    const auto dir = fs::path(o.out_dir);
    const std::string long_path = (dir / "mc_report.csv").string();
    const std::string wide_path = (dir / "mc_summary.csv").string();
    const std::string json_path = (dir / "mc_report.json").string();
    write_text(long_path, lng.str());
    write_text(wide_path, wide.str());
    tarma::io::write_file(json_path, tarma::io::to_json(report));
    m.outputs = {long_path, wide_path, json_path};
    m.config = tarma::io::to_json(cfg);

    std::cout << "Monte Carlo " << cfg.label << ": " << cfg.replications << " replications, seed " << o.seed << "\n";
    std::cout << std::setw(8) << "alpha" << std::setw(7) << "n" << std::setw(15) << "sq. bias" << std::setw(15)
              << "variance" << std::setw(7) << "used" << std::setw(7) << "fail" << '\n';
    for (const auto& c : report.cells)
        std::cout << std::setw(8) << c.alpha << std::setw(7) << c.n << std::setw(15) << fixed(c.squared_bias, 5)
                  << std::setw(15) << fixed(c.variance, 5) << std::setw(7) << c.used << std::setw(7) << c.failures
                  << '\n';
    std::cout << "wrote " << long_path << ", " << wide_path << ", " << json_path << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// biascurve
// ---------------------------------------------------------------------------

int run_biascurve(const ExperimentOpts& o, Manifest& m) {
    auto j = tarma::io::read_file(o.config);
    m.inputs.push_back(o.config);
    tarma::io::detail::check_object(j, o.config);

    // "cases": [..] runs every listed case and adds the across-case median.
    std::vector<std::pair<std::string, tarma::BiasCurveConfig>> runs;
    if (j.contains("cases")) {
        const auto ids = tarma::io::detail::read<std::vector<int>>(j, "cases", o.config);
        if (ids.empty()) throw tarma::ConfigError(o.config + ": cases is empty");
        json base = j;
        base.erase("cases");
        for (int id : ids) {
            json one = base;
            one["case"] = id;
            auto c = tarma::io::bias_config_from_json(one, o.config);
            c.master_seed = tarma::stream_seed(o.seed, static_cast<std::uint64_t>(id));
            runs.emplace_back("case" + std::to_string(id), std::move(c));
        }
    } else {
        auto c = tarma::io::bias_config_from_json(j, o.config);
        c.master_seed = o.seed;
        runs.emplace_back(j.contains("case") ? "case" + std::to_string(j.at("case").get<int>()) : "custom",
                          std::move(c));
    }

    std::ostringstream csv;
    csv << "case,alpha,n,epsilon,k,metric,value\n";
    json results = json::array();
    json configs = json::array();
    std::map<std::tuple<double, double, double>, std::vector<double>> by_cell;
    std::size_t failed = 0, total = 0;
    for (auto& [label, c] : runs) {
        c.jobs = o.jobs;
        const auto points = tarma::asymptotic_bias_curve(c);
        json rows = json::array();
        for (const auto& pt : points) {
            ++total;
            const std::string key = label + ',' + fmt(pt.alpha) + ',' + std::to_string(c.n_large) + ',' +
                                    fmt(pt.epsilon) + ',' + fmt(pt.k) + ',';
            if (pt.ok) {
                csv << key << "B," << fmt(pt.B) << '\n' << key << "B_lambda," << fmt(pt.B_lambda) << '\n';
                by_cell[{pt.alpha, pt.epsilon, pt.k}].push_back(pt.B);
            } else {
                ++failed;
                csv << key << "failed,1\n";
            }
            rows.push_back(tarma::io::to_json(pt));
        }
        results.push_back(json{{"case", label}, {"points", rows}});
        configs.push_back(tarma::io::to_json(c));
    }
    if (runs.size() > 1) {
        for (const auto& [cell, values] : by_cell) {
            const auto [alpha, eps, k] = cell;
            csv << "median," << fmt(alpha) << ',' << runs.front().second.n_large << ',' << fmt(eps) << ',' << fmt(k)
                << ",B," << fmt(tarma::median(values)) << '\n';
        }
    }
    if (total > 0 && failed == total) throw tarma::NumericalError("every bias-curve cell failed");

    fs::create_directories(o.out_dir);
    const auto dir = fs::path(o.out_dir);
    const std::string csv_path = (dir / "bias_curve.csv").string();
    const std::string json_path = (dir / "bias_curve.json").string();
    write_text(csv_path, csv.str());
    tarma::io::write_file(json_path, json{{"runs", results}});
    m.outputs = {csv_path, json_path};
    m.config = json{{"runs", configs}};

    std::cout << "asymptotic bias curve: " << runs.size() << " model(s), " << total << " cells, " << failed
              << " failed\n";
    std::cout << std::setw(8) << "alpha" << std::setw(9) << "epsilon" << std::setw(7) << "k" << std::setw(14)
              << (runs.size() > 1 ? "median B" : "B") << '\n';
    for (const auto& [cell, values] : by_cell) {
        const auto [alpha, eps, k] = cell;
        std::cout << std::setw(8) << alpha << std::setw(9) << eps << std::setw(7) << k << std::setw(14)
                  << fixed(tarma::median(values), 5) << '\n';
    }
    std::cout << "wrote " << csv_path << ", " << json_path << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// select-alpha
// ---------------------------------------------------------------------------

int run_select(const SelectOpts& o, Manifest& m) {
    tarma::FitConfig cfg;
    if (!o.config.empty()) {
        cfg = tarma::io::fit_config_from_json(tarma::io::read_file(o.config), {}, o.config);
        m.inputs.push_back(o.config);
    }
    cfg.jobs = o.jobs;
    const auto series = load_series(o.input, o.column, o.returns);
    m.inputs.insert(m.inputs.begin(), o.input);
    const auto [train, test] = tarma::split(series, o.test_len);
    const auto sel = tarma::select_alpha(train, test, o.alphas, cfg);
    json table = json::array();
    for (const auto& row : sel.table) {
        json r{{"alpha", row.alpha}, {"ok", row.ok}};
        if (row.ok) {
            r["mape"] = row.mape;
            r["mape_sum"] = row.mape_sum;
        } else {
            r["error"] = row.error;
        }
        table.push_back(r);
    }
    tarma::io::write_file(o.out, json{{"best_alpha", sel.best_alpha}, {"table", table}});
    m.outputs.push_back(o.out);
    m.config = {{"fit", tarma::io::to_json(cfg)},
                {"alphas", o.alphas},
                {"test_len", o.test_len},
                {"column", o.column},
                {"log_returns", o.returns}};
    std::cout << std::setw(8) << "alpha" << std::setw(12) << "MAPE" << '\n';
    for (const auto& row : sel.table) {
        std::cout << std::setw(8) << row.alpha << std::setw(12) << (row.ok ? fixed(row.mape, 3) : "failed");
        if (row.alpha == sel.best_alpha) std::cout << "  <- selected";
        std::cout << '\n';
    }
    std::cout << "wrote " << o.out << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args);

int run_replay(const std::string& manifest_path) {
    const auto j = tarma::io::read_file(manifest_path);
    const auto args = tarma::io::detail::read<std::vector<std::string>>(j, "args", manifest_path);
    if (args.empty() || args.front() == "replay") throw tarma::ConfigError(manifest_path + ": nothing to replay");
    const int code = run(args);
    if (code != 0) return code;
    const auto outputs = j.value("outputs", json::object());
    std::size_t mismatched = 0;
    for (const auto& item : outputs.items()) {
        const auto now = hex(file_digest(item.key()));
        const bool same = now == item.value().get<std::string>();
        mismatched += !same;
        std::cout << (same ? "identical  " : "DIFFERENT  ") << item.key() << '\n';
    }
    if (mismatched > 0) {
        std::cerr << "error: " << mismatched << " output(s) differ from the manifest\n";
        return 3;
    }
    std::cout << "replay reproduced " << outputs.size() << " output(s) byte for byte\n";
    return 0;
}

int run(const std::vector<std::string>& args) {
    CLI::App app{"Robust estimation and simulation of two-regime TARMA models"};
    app.set_version_flag("--version", std::string(tarma::version));
    app.require_subcommand(1);

    SimulateOpts so;
    auto* sim = app.add_subcommand("simulate", "Simulate a TARMA path");
    sim->add_option("--params", so.params, "Parameter JSON file");
    sim->add_option("--case", so.case_id, "Built-in parameter set 1-4 instead of --params");
    sim->add_option("-n,--n", so.n, "Number of observations")->required();
    sim->add_option("--innovations", so.innovations, "Innovation JSON (gaussian or mixture, optional IO overlay)");
    sim->add_option("--burn-in", so.burn_in, "Discarded warm-up steps")->capture_default_str();
    sim->add_option("--seed", so.seed, "Random seed")->required();
    sim->add_option("-o,--out", so.out, "Output CSV")->required();
    sim->add_option("--manifest", so.manifest, "Manifest path (default: <out>.manifest.json)");

    ContaminateOpts co;
    auto* con = app.add_subcommand("contaminate", "Inject additive or replacement outliers");
    con->add_option("-i,--input", co.input, "Input CSV")->required();
    con->add_option("--column", co.column, "Value column name or 0-based index")->capture_default_str();
    con->add_option("--config", co.config, "Contamination JSON")->required();
    con->add_option("--seed", co.seed, "Random seed")->required();
    con->add_option("-o,--out", co.out, "Output CSV")->required();
    con->add_option("--manifest", co.manifest, "Manifest path");

    FitOpts fo;
    auto* fit = app.add_subcommand("fit", "Fit a TARMA model by robust profile M-estimation");
    fit->add_option("-i,--input", fo.input, "Input CSV")->required();
    fit->add_option("--column", fo.column, "Value column name or 0-based index")->capture_default_str();
    fit->add_option("--config", fo.config, "Fit configuration JSON");
    fit->add_option("--alpha", fo.alpha, "Power-divergence alpha (overrides the config)");
    fit->add_option("--r", fo.r, "Fix the threshold");
    fit->add_option("--d", fo.d, "Fix the delay");
    fit->add_flag("--log-returns", fo.returns, "Fit log returns of the column");
    fit->add_option("--jobs", fo.jobs, "Worker threads")->capture_default_str();
    fit->add_option("-o,--out", fo.out, "Output fit JSON")->required();
    fit->add_option("--manifest", fo.manifest, "Manifest path");

    ForecastOpts fc;
    auto* fcs = app.add_subcommand("forecast", "Forecast from a fitted model");
    fcs->add_option("-i,--input", fc.input, "History CSV")->required();
    fcs->add_option("--column", fc.column, "Value column name or 0-based index")->capture_default_str();
    fcs->add_option("--fit", fc.fit, "Fit JSON written by 'fit'")->required();
    fcs->add_option("--horizon", fc.horizon, "Number of forecasts")->required();
    fcs->add_option("--actuals", fc.actuals, "CSV of realized values; enables one-step forecasts and MAPE");
    fcs->add_flag("--log-returns", fc.returns, "Use log returns of the history column");
    fcs->add_option("-o,--out", fc.out, "Output JSON")->required();
    fcs->add_option("--manifest", fc.manifest, "Manifest path");

    OutliersOpts oo;
    auto* out = app.add_subcommand("outliers", "Rank observations by robust weight");
    out->add_option("-i,--input", oo.input, "Input CSV")->required();
    out->add_option("--column", oo.column, "Value column name or 0-based index")->capture_default_str();
    out->add_option("--fit", oo.fit, "Fit JSON written by 'fit'")->required();
    out->add_option("--top-m", oo.top_m, "Number of observations to report")->required();
    out->add_flag("--log-returns", oo.returns, "Use log returns of the column");
    out->add_option("-o,--out", oo.out, "Output CSV")->required();
    out->add_option("--manifest", oo.manifest, "Manifest path");

    ExperimentOpts mo;
    auto* mc = app.add_subcommand("montecarlo", "Bias and variance of the estimator by simulation");
    mc->add_option("--config", mo.config, "Experiment JSON")->required();
    mc->add_option("--seed", mo.seed, "Master seed")->required();
    mc->add_option("--out-dir", mo.out_dir, "Output directory")->required();
    mc->add_option("--replications", mo.replications, "Override the replication count");
    mc->add_option("--jobs", mo.jobs, "Worker threads")->capture_default_str();
    mc->add_option("--manifest", mo.manifest, "Manifest path (default: <out-dir>/manifest.json)");

    ExperimentOpts bo;
    auto* bc = app.add_subcommand("biascurve", "Asymptotic squared bias against outlier size");
    bc->add_option("--config", bo.config, "Bias-curve JSON")->required();
    bc->add_option("--seed", bo.seed, "Master seed")->required();
    bc->add_option("--out-dir", bo.out_dir, "Output directory")->required();
    bc->add_option("--jobs", bo.jobs, "Worker threads")->capture_default_str();
    bc->add_option("--manifest", bo.manifest, "Manifest path (default: <out-dir>/manifest.json)");

    SelectOpts se;
    auto* sel = app.add_subcommand("select-alpha", "Choose alpha by out-of-sample MAPE");
    sel->add_option("-i,--input", se.input, "Input CSV (train followed by test)")->required();
    sel->add_option("--column", se.column, "Value column name or 0-based index")->capture_default_str();
    sel->add_option("--config", se.config, "Base fit configuration JSON");
    sel->add_option("--test-len", se.test_len, "Length of the test window")->capture_default_str();
    sel->add_option("--alphas", se.alphas, "Candidate alphas")->delimiter(',')->capture_default_str();
    sel->add_flag("--log-returns", se.returns, "Use log returns of the column");
    sel->add_option("--jobs", se.jobs, "Worker threads")->capture_default_str();
    sel->add_option("-o,--out", se.out, "Output JSON")->required();
    sel->add_option("--manifest", se.manifest, "Manifest path");

    std::string replay_path;
    auto* rep = app.add_subcommand("replay", "Re-run a manifest and compare outputs");
    rep->add_option("manifest", replay_path, "Manifest JSON")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (rep->parsed()) return run_replay(replay_path);

    Manifest m;
    m.args = args;
    std::string manifest_file;
    int code = 0;
    if (sim->parsed()) {
        m.subcommand = "simulate";
        m.seed = so.seed;
        code = run_simulate(so, m);
        manifest_file = manifest_path_for(so.out, so.manifest);
    } else if (con->parsed()) {
        m.subcommand = "contaminate";
        m.seed = co.seed;
        code = run_contaminate(co, m);
        manifest_file = manifest_path_for(co.out, co.manifest);
    } else if (fit->parsed()) {
        m.subcommand = "fit";
        code = run_fit(fo, m);
        manifest_file = manifest_path_for(fo.out, fo.manifest);
    } else if (fcs->parsed()) {
        m.subcommand = "forecast";
        code = run_forecast(fc, m);
        manifest_file = manifest_path_for(fc.out, fc.manifest);
    } else if (out->parsed()) {
        m.subcommand = "outliers";
        code = run_outliers(oo, m);
        manifest_file = manifest_path_for(oo.out, oo.manifest);
    } else if (mc->parsed()) {
        m.subcommand = "montecarlo";
        m.seed = mo.seed;
        code = run_montecarlo(mo, m);
        manifest_file = mo.manifest.empty() ? (fs::path(mo.out_dir) / "manifest.json").string() : mo.manifest;
    } else if (bc->parsed()) {
        m.subcommand = "biascurve";
        m.seed = bo.seed;
        code = run_biascurve(bo, m);
        manifest_file = bo.manifest.empty() ? (fs::path(bo.out_dir) / "manifest.json").string() : bo.manifest;
    } else if (sel->parsed()) {
        m.subcommand = "select-alpha";
        code = run_select(se, m);
        manifest_file = manifest_path_for(se.out, se.manifest);
    }
    if (code == 0 && !manifest_file.empty()) write_manifest(m, manifest_file);
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        return run(args);
    } catch (const tarma::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const tarma::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    }
}
