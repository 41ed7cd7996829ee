#pragma once

// Command-line front end. Three subcommands share one engine:
//   reproduce <experiment>  regenerate a named dataset, run strategies + oracle
//   fit <manifest>          run the requested strategies, no oracle
//   compare <manifest>      strategies + oracle + comparison table
//
// Outputs per run: report-<strategy>.json, marginals-<strategy>.csv,
// table.csv, timings.csv, run.json (and counts.csv for skew-sim). JSON files
// carry no wall-clock fields, so reruns of the same manifest are
// byte-identical; timings live in the CSVs only.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "skewlap/experiments.hpp"
#include "skewlap/manifest.hpp"
#include "skewlap/mcmc.hpp"
#include "skewlap/quadrature_oracle.hpp"
#include "skewlap/report.hpp"

namespace skewlap {

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct StrategyRun {
    Strategy strategy = Strategy::Gaussian;
    std::string status = "ok"; // ok | failed
    std::string error;
    double seconds = 0.0;
    FitReport report;
};

struct OracleRun {
    std::string status = "skipped"; // ok | skipped | infeasible | failed
    std::string error;
    double seconds = 0.0;
    ChainSummary summary;
    bool ok() const { return status == "ok"; }
};

// Brute-force posterior for a single latent component with fixed
// hyperparameters: the log joint on a wide grid, normalized by trapezoid.
struct QuadratureRun {
    bool present = false;
    double seconds = 0.0;
    double mean = 0.0;
    double sd = 0.0;
    double skewness = 0.0;
};

inline QuadratureRun quadrature_oracle(const LatentModel& model, const Dataset& data) {
    QuadratureRun out;
    if (model.p() != 1 || model.theta_dim != 0) return out;
    const auto start = std::chrono::steady_clock::now();
    const DensityGrid density =
        exact_posterior_quadrature(model, data, model.theta_or_default());
    out.mean = grid_mean(density);
    out.sd = std::sqrt(grid_variance(density));
    out.skewness = grid_skewness(density);
    out.seconds = seconds_since(start);
    out.present = true;
    return out;
}

struct RunPlan {
    std::string command;
    Experiment experiment;
    std::uint64_t seed = 0;
    std::vector<Strategy> strategies = all_strategies();
    bool want_oracle = false;
    McmcOptions oracle_opts{};
    InlaOptions opts{};
    std::string out_dir = ".";
};

inline double pick_stat(const MarginalSummary& m, const std::string& stat) {
    if (stat == "mean") return m.mean;
    if (stat == "sd") return m.sd;
    return m.skewness;
}

inline double pick_stat(const ChainSummary& s, int comp, const std::string& stat) {
    if (stat == "mean") return s.mean[comp];
    if (stat == "sd") return s.sd[comp];
    return s.skewness[comp];
}

inline double pick_stat(const QuadratureRun& q, const std::string& stat) {
    if (stat == "mean") return q.mean;
    if (stat == "sd") return q.sd;
    return q.skewness;
}

inline std::optional<double> relative_error(double value, const std::optional<double>& reference) {
    if (!reference || std::abs(*reference) < 1e-12) return std::nullopt;
    return std::abs(value - *reference) / std::abs(*reference);
}

inline void write_counts_csv(std::ostream& os, const Dataset& data) {
    std::map<long, long> counts;
    for (double y : data.y) ++counts[std::lround(y)];
    os << "value,frequency\n";
    for (const auto& [value, frequency] : counts) os << value << ',' << frequency << '\n';
}

inline int run_plan(const RunPlan& plan) {
    namespace fs = std::filesystem;
    const LatentModel& model = plan.experiment.model;
    const Dataset& data = plan.experiment.data;
    fs::create_directories(plan.out_dir);
    const auto path = [&](const std::string& name) { return (fs::path(plan.out_dir) / name).string(); };

    std::vector<StrategyRun> runs;
    for (Strategy strategy : plan.strategies) {
        StrategyRun run;
        run.strategy = strategy;
        const auto start = std::chrono::steady_clock::now();
        try {
            run.report = fit_inla(model, data, strategy, plan.opts);
        } catch (const std::exception& e) {
            run.status = "failed";
            run.error = e.what();
        }
        run.seconds = seconds_since(start);
        if (run.status == "ok") {
            std::ofstream json_out(path("report-" + run.report.strategy + ".json"));
            write_fit_report_json(json_out, run.report);
            std::ofstream csv_out(path("marginals-" + run.report.strategy + ".csv"));
            write_marginals_csv(csv_out, run.report);
        }
        runs.push_back(std::move(run));
    }

    OracleRun oracle;
    if (plan.want_oracle) {
        const int dim = model.p() + (model.fixed_theta ? 0 : model.theta_dim);
        if (dim > 200) {
            oracle.status = "infeasible";
            oracle.error = "joint dimension " + std::to_string(dim) + " exceeds the oracle limit of 200";
        } else {
            const auto start = std::chrono::steady_clock::now();
            try {
                Eigen::VectorXd theta;
                if (model.fixed_theta) theta = *model.fixed_theta;
                const Chain chain = rw_metropolis(model, data, theta, plan.seed, plan.oracle_opts);
                oracle.summary = chain_summary(chain, chain.burn_in);
                oracle.status = "ok";
            } catch (const std::exception& e) {
                oracle.status = "failed";
                oracle.error = e.what();
            }
            oracle.seconds = seconds_since(start);
        }
    }
    QuadratureRun quadrature;
    if (plan.want_oracle) quadrature = quadrature_oracle(model, data);

    // Table rows: fixed-effect components only, mirroring how results are
    // usually summarized; full marginals are in the per-strategy CSVs.
    std::vector<int> components = plan.experiment.table_components;
    if (components.empty() && model.p() >= 1) components.push_back(0);
    const std::vector<std::string> names = latent_names(model);

    ComparisonTable table;
    for (int comp : components) {
        for (const std::string& stat : {std::string("mean"), std::string("sd"), std::string("skewness")}) {
            std::optional<double> reference;
            if (quadrature.present) reference = pick_stat(quadrature, stat);
            else if (oracle.ok()) reference = pick_stat(oracle.summary, comp, stat);
            for (const StrategyRun& run : runs) {
                if (run.status != "ok") continue;
                const double value = pick_stat(run.report.marginals[comp], stat);
                table.rows.push_back({names[comp], stat, run.report.strategy, value,
                                      relative_error(value, reference)});
            }
            if (oracle.ok()) {
                const double value = pick_stat(oracle.summary, comp, stat);
                std::optional<double> rel;
                if (quadrature.present) rel = relative_error(value, pick_stat(quadrature, stat));
                table.rows.push_back({names[comp], stat, "mcmc", value, rel});
            }
            if (quadrature.present) {
                table.rows.push_back({names[comp], stat, "true", pick_stat(quadrature, stat),
                                      std::nullopt});
            }
        }
    }
    std::vector<std::pair<std::string, double>> timings;
    for (const StrategyRun& run : runs) {
        if (run.status != "ok") continue;
        table.rows.push_back({"total", "time-seconds", run.report.strategy, run.seconds, std::nullopt});
        timings.emplace_back(run.report.strategy, run.seconds);
    }
    if (oracle.ok()) {
        table.rows.push_back({"total", "time-seconds", "mcmc", oracle.seconds, std::nullopt});
        timings.emplace_back("mcmc", oracle.seconds);
    }
    if (quadrature.present) {
        table.rows.push_back({"total", "time-seconds", "true", quadrature.seconds, std::nullopt});
        timings.emplace_back("true", quadrature.seconds);
    }

    {
        std::ofstream os(path("table.csv"));
        write_comparison_csv(os, table);
    }
    {
        std::ofstream os(path("timings.csv"));
        write_timings_csv(os, timings);
    }
    if (plan.experiment.name == "skew-sim") {
        std::ofstream os(path("counts.csv"));
        write_counts_csv(os, data);
    }

    nlohmann::json summary;
    summary["schema_version"] = kReportSchemaVersion;
    summary["command"] = plan.command;
    summary["experiment"] = plan.experiment.name;
    summary["seed"] = plan.seed;
    summary["n"] = model.n();
    summary["strategies"] = nlohmann::json::array();
    bool all_ok = true;
    for (const StrategyRun& run : runs) {
        nlohmann::json entry;
        entry["name"] = strategy_name(run.strategy);
        entry["status"] = run.status;
        entry["error"] = run.error;
        summary["strategies"].push_back(entry);
        all_ok = all_ok && run.status == "ok";
    }
    summary["oracle"] = {{"status", oracle.status}, {"error", oracle.error}};
    {
        std::ofstream os(path("run.json"));
        os << summary.dump(2) << '\n';
    }
    return all_ok ? 0 : 1;
}

inline std::vector<Strategy> parse_strategy_list(const std::string& csv) {
    std::vector<Strategy> out;
    for (const std::string& token : split_list(csv)) out.push_back(parse_strategy(token));
    if (out.empty()) throw DomainError("empty strategy list");
    return out;
}

inline void apply_skew_flags(InlaOptions& opts, int fft_points, int dense_limit) {
    if (fft_points > 0) {
        if (fft_points < 64 || !math::is_power_of_two(static_cast<std::size_t>(fft_points))) {
            throw DomainError("--fft-points must be a power of two, at least 64");
        }
        opts.skew.grid.point_count = fft_points;
    }
    if (dense_limit > 0) opts.skew.dense_limit = dense_limit;
}

inline McmcOptions oracle_options(const OracleSettings& settings, int iteration_override) {
    McmcOptions opts;
    opts.iterations = settings.iterations;
    opts.burn_in = settings.burn_in;
    if (iteration_override > 0) {
        opts.iterations = iteration_override;
        opts.burn_in = iteration_override / 10;
    }
    return opts;
}

} // namespace detail

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"approximate Bayesian inference for latent Gaussian models"};
    app.require_subcommand(1);

    std::string strategies;
    int fft_points = 0;
    int dense_limit = 0;
    int oracle_iters = 0;

    std::string rep_name;
    std::uint64_t rep_seed = 0;
    int rep_n = 0;
    std::string rep_out = ".";
    auto* rep = app.add_subcommand(
        "reproduce", "regenerate a named experiment and compare strategies against the oracle");
    rep->add_option("experiment", rep_name, "experiment name")->required();
    rep->add_option("--seed", rep_seed, "RNG seed")->required();
    rep->add_option("--n", rep_n, "sample size override");
    rep->add_option("--strategy", strategies, "comma-separated strategies (default: all)");
    rep->add_option("--out", rep_out, "output directory");
    rep->add_option("--oracle-iters", oracle_iters, "MCMC iterations (burn-in becomes a tenth)");
    rep->add_option("--fft-points", fft_points, "FFT window size, power of two");
    rep->add_option("--dense-limit", dense_limit, "largest dimension for the dense covariance path");

    std::string fit_path;
    std::string fit_out;
    auto* fit = app.add_subcommand("fit", "fit a manifest-specified model, no oracle");
    fit->add_option("manifest", fit_path, "manifest path")->required();
    fit->add_option("--strategy", strategies, "override the manifest strategy list");
    fit->add_option("--out", fit_out, "override the manifest output directory");
    fit->add_option("--fft-points", fft_points, "FFT window size, power of two");
    fit->add_option("--dense-limit", dense_limit, "largest dimension for the dense covariance path");

    std::string cmp_path;
    std::string cmp_out;
    auto* cmp = app.add_subcommand("compare", "fit a manifest and tabulate strategies vs the oracle");
    cmp->add_option("manifest", cmp_path, "manifest path")->required();
    cmp->add_option("--strategy", strategies, "override the manifest strategy list");
    cmp->add_option("--out", cmp_out, "override the manifest output directory");
    cmp->add_option("--oracle-iters", oracle_iters, "override the manifest oracle iterations");
    cmp->add_option("--fft-points", fft_points, "FFT window size, power of two");
    cmp->add_option("--dense-limit", dense_limit, "largest dimension for the dense covariance path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        detail::RunPlan plan;
        if (rep->parsed()) {
            plan.command = "reproduce";
            const int n = rep_n > 0 ? rep_n : default_sample_size(rep_name);
            plan.experiment = make_experiment(rep_name, rep_seed, n);
            plan.seed = rep_seed;
            plan.want_oracle = true;
            plan.oracle_opts = detail::oracle_options(OracleSettings{}, oracle_iters);
            plan.out_dir = rep_out;
        } else {
            ExperimentManifest manifest =
                load_manifest(fit->parsed() ? fit_path : cmp_path);
            plan.experiment = build_experiment(manifest);
            plan.seed = manifest.seed;
            plan.strategies = manifest.strategies;
            plan.out_dir = manifest.output_dir;
            if (fit->parsed()) {
                plan.command = "fit";
                if (!fit_out.empty()) plan.out_dir = fit_out;
            } else {
                plan.command = "compare";
                if (!cmp_out.empty()) plan.out_dir = cmp_out;
                plan.want_oracle = manifest.oracle.enabled;
                plan.oracle_opts = detail::oracle_options(manifest.oracle, oracle_iters);
            }
        }
        if (!strategies.empty()) plan.strategies = detail::parse_strategy_list(strategies);
        detail::apply_skew_flags(plan.opts, fft_points, dense_limit);
        return detail::run_plan(plan);
    } catch (const std::exception& e) {
        std::cerr << "skewlap: " << e.what() << '\n';
        return 2;
    }
}

} // namespace skewlap
