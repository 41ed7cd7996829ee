#pragma once

// Experiment manifests: a small sectioned key-value format that pins every
// input of a run (model, data size, seed, strategies, oracle, output).
// Parse and validation errors carry the offending line number.

#include <cstdint>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "skewlap/errors.hpp"
#include "skewlap/experiments.hpp"
#include "skewlap/inla.hpp"
#include "skewlap/model.hpp"
#include "skewlap/rng.hpp"

namespace skewlap {

struct OracleSettings {
    bool enabled = true;
    int iterations = 200000;
    int burn_in = 20000;
};

// Model description for experiment = custom; ignored for named experiments.
struct CustomModelSpec {
    std::string likelihood; // poisson | student-t | gpd | sens-spec | binomial-logit | gaussian
    std::vector<std::string> terms; // intercept | covariate | iid | ar1
    double fixed_effect_precision = 0.001;
    double random_effect_precision = 1.0;
    double ar1_rho = 0.7;
    int trials = 1;
    double dof = 4.0;
    double sensitivity = 0.8;
    double specificity = 0.985;
    double tail_xi = 0.3;
    double quantile_level = 0.5;
    double log_precision = 0.0;
    bool free_precision = false; // gaussian/student-t: make the log precision a hyperparameter
    std::vector<double> true_coefficients; // data generation, fixed-effect terms in order
};

struct ExperimentManifest {
    std::string experiment; // named experiment or "custom"
    int n = 0;              // 0 picks the experiment default
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::vector<Strategy> strategies = all_strategies();
    OracleSettings oracle;
    std::string output_dir = ".";
    CustomModelSpec custom;
};

namespace detail {

inline std::string manifest_trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = manifest_trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

[[noreturn]] inline void manifest_fail(int line, const std::string& message) {
    throw DomainError("manifest line " + std::to_string(line) + ": " + message);
}

inline double parse_double(const std::string& value, int line, const std::string& key) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(value, &used);
    } catch (const std::exception&) {
        manifest_fail(line, key + ": expected a number, got '" + value + "'");
    }
    if (used != value.size()) manifest_fail(line, key + ": trailing text after number");
    return out;
}

inline long long parse_int(const std::string& value, int line, const std::string& key) {
    std::size_t used = 0;
    long long out = 0;
    try {
        out = std::stoll(value, &used);
    } catch (const std::exception&) {
        manifest_fail(line, key + ": expected an integer, got '" + value + "'");
    }
    if (used != value.size()) manifest_fail(line, key + ": trailing text after integer");
    return out;
}

inline bool parse_bool(const std::string& value, int line, const std::string& key) {
    if (value == "true" || value == "yes" || value == "1") return true;
    if (value == "false" || value == "no" || value == "0") return false;
    manifest_fail(line, key + ": expected true or false, got '" + value + "'");
}

} // namespace detail

inline ExperimentManifest parse_manifest(std::istream& in) {
    ExperimentManifest manifest;
    std::string section;
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const std::string text = detail::manifest_trim(raw);
        if (text.empty() || text[0] == '#' || text[0] == ';') continue;
        if (text.front() == '[') {
            if (text.back() != ']') detail::manifest_fail(line, "unterminated section header");
            section = text.substr(1, text.size() - 2);
            if (section != "model" && section != "data" && section != "strategies" &&
                section != "oracle" && section != "output") {
                detail::manifest_fail(line, "unknown section [" + section + "]");
            }
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string::npos) detail::manifest_fail(line, "expected key = value");
        const std::string key = detail::manifest_trim(text.substr(0, eq));
        const std::string value = detail::manifest_trim(text.substr(eq + 1));
        if (section.empty()) detail::manifest_fail(line, "key outside any section");
        if (key.empty()) detail::manifest_fail(line, "empty key");

        if (section == "model") {
            auto& custom = manifest.custom;
            if (key == "experiment") manifest.experiment = value;
            else if (key == "likelihood") custom.likelihood = value;
            else if (key == "terms") custom.terms = detail::split_list(value);
            else if (key == "fixed-effect-precision") custom.fixed_effect_precision = detail::parse_double(value, line, key);
            else if (key == "random-effect-precision") custom.random_effect_precision = detail::parse_double(value, line, key);
            else if (key == "ar1-rho") custom.ar1_rho = detail::parse_double(value, line, key);
            else if (key == "trials") custom.trials = static_cast<int>(detail::parse_int(value, line, key));
            else if (key == "dof") custom.dof = detail::parse_double(value, line, key);
            else if (key == "sensitivity") custom.sensitivity = detail::parse_double(value, line, key);
            else if (key == "specificity") custom.specificity = detail::parse_double(value, line, key);
            else if (key == "tail-xi") custom.tail_xi = detail::parse_double(value, line, key);
            else if (key == "quantile-level") custom.quantile_level = detail::parse_double(value, line, key);
            else if (key == "log-precision") custom.log_precision = detail::parse_double(value, line, key);
            else if (key == "free-precision") custom.free_precision = detail::parse_bool(value, line, key);
            else if (key == "true-coefficients") {
                custom.true_coefficients.clear();
                for (const auto& item : detail::split_list(value)) {
                    custom.true_coefficients.push_back(detail::parse_double(item, line, key));
                }
            } else {
                detail::manifest_fail(line, "unknown key '" + key + "' in [model]");
            }
        } else if (section == "data") {
            if (key == "n") {
                const long long n = detail::parse_int(value, line, key);
                if (n < 1) detail::manifest_fail(line, "n must be at least 1");
                manifest.n = static_cast<int>(n);
            } else if (key == "seed") {
                const long long seed = detail::parse_int(value, line, key);
                if (seed < 0) detail::manifest_fail(line, "seed must be nonnegative");
                manifest.seed = static_cast<std::uint64_t>(seed);
                manifest.seed_set = true;
            } else {
                detail::manifest_fail(line, "unknown key '" + key + "' in [data]");
            }
        } else if (section == "strategies") {
            if (key == "list") {
                manifest.strategies.clear();
                for (const auto& item : detail::split_list(value)) {
                    try {
                        manifest.strategies.push_back(parse_strategy(item));
                    } catch (const DomainError&) {
                        detail::manifest_fail(line, "unknown strategy '" + item + "'");
                    }
                }
                if (manifest.strategies.empty()) detail::manifest_fail(line, "strategy list is empty");
            } else {
                detail::manifest_fail(line, "unknown key '" + key + "' in [strategies]");
            }
        } else if (section == "oracle") {
            if (key == "enabled") manifest.oracle.enabled = detail::parse_bool(value, line, key);
            else if (key == "iterations") manifest.oracle.iterations = static_cast<int>(detail::parse_int(value, line, key));
            else if (key == "burn-in") manifest.oracle.burn_in = static_cast<int>(detail::parse_int(value, line, key));
            else detail::manifest_fail(line, "unknown key '" + key + "' in [oracle]");
        } else if (section == "output") {
            if (key == "dir") manifest.output_dir = value;
            else detail::manifest_fail(line, "unknown key '" + key + "' in [output]");
        }
    }
    if (manifest.experiment.empty()) {
        throw DomainError("manifest: missing model.experiment");
    }
    bool known = manifest.experiment == "custom";
    for (const auto& name : experiment_names()) known = known || name == manifest.experiment;
    if (!known) throw DomainError("manifest: unknown experiment '" + manifest.experiment + "'");
    if (!manifest.seed_set) throw DomainError("manifest: missing data.seed (no implicit entropy)");
    if (manifest.experiment == "custom") {
        if (manifest.custom.likelihood.empty()) {
            throw DomainError("manifest: model.likelihood is required for a custom experiment");
        }
        if (manifest.custom.terms.empty()) {
            throw DomainError("manifest: model.terms is required for a custom experiment");
        }
        if (manifest.n < 1) throw DomainError("manifest: data.n is required for a custom experiment");
    }
    return manifest;
}

inline ExperimentManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DomainError("cannot open manifest '" + path + "'");
    return parse_manifest(in);
}

namespace detail {

inline Likelihood custom_likelihood(const CustomModelSpec& spec, int& theta_dim) {
    theta_dim = 0;
    if (spec.likelihood == "poisson") return Poisson{};
    if (spec.likelihood == "binomial-logit") {
        BinomialLogit lik;
        lik.trials = spec.trials;
        return lik;
    }
    if (spec.likelihood == "sens-spec") {
        BernoulliSensSpec lik;
        lik.sensitivity = spec.sensitivity;
        lik.specificity = spec.specificity;
        return lik;
    }
    if (spec.likelihood == "gpd") {
        GeneralizedPareto lik;
        lik.tail_xi = spec.tail_xi;
        lik.quantile_level = spec.quantile_level;
        return lik;
    }
    if (spec.likelihood == "student-t") {
        StudentT lik;
        lik.dof = spec.dof;
        if (spec.free_precision) {
            lik.log_precision_index = 0;
            theta_dim = 1;
        } else {
            lik.fixed_log_precision = spec.log_precision;
        }
        return lik;
    }
    if (spec.likelihood == "gaussian") {
        GaussianObs lik;
        if (spec.free_precision) {
            lik.log_precision_index = 0;
            theta_dim = 1;
        } else {
            lik.fixed_log_precision = spec.log_precision;
        }
        return lik;
    }
    throw DomainError("manifest: model.likelihood: unknown likelihood '" + spec.likelihood + "'");
}

inline double custom_response(const CustomModelSpec& spec, double eta, RngStream& rng) {
    if (spec.likelihood == "poisson") return static_cast<double>(rng.poisson(std::exp(eta)));
    if (spec.likelihood == "binomial-logit") {
        const double prob = 1.0 / (1.0 + std::exp(-eta));
        int count = 0;
        for (int t = 0; t < spec.trials; ++t) count += rng.u01() < prob ? 1 : 0;
        return count;
    }
    if (spec.likelihood == "sens-spec") {
        const double pi = 1.0 / (1.0 + std::exp(-eta));
        const double prob = spec.sensitivity * pi + (1.0 - spec.specificity) * (1.0 - pi);
        return rng.u01() < prob ? 1.0 : 0.0;
    }
    if (spec.likelihood == "gpd") {
        const double xi = spec.tail_xi;
        const double sigma =
            xi * std::exp(eta) / (std::pow(1.0 - spec.quantile_level, -xi) - 1.0);
        return sigma / xi * (std::pow(1.0 - rng.u01(), -xi) - 1.0);
    }
    const double noise = spec.likelihood == "student-t" ? rng.student_t(spec.dof) : rng.normal();
    return eta + noise / std::sqrt(std::exp(spec.log_precision));
}

} // namespace detail

// Build the custom experiment described by the manifest: the design follows
// the term list, fixed-effect truths come from true-coefficients (zero when
// omitted), and random-effect terms are drawn from their priors.
inline Experiment build_custom_experiment(const ExperimentManifest& manifest) {
    const CustomModelSpec& spec = manifest.custom;
    const int n = manifest.n;
    RngStream rng = RngStream(manifest.seed).substream("data");
    Experiment exp;
    exp.name = "custom";

    int theta_dim = 0;
    exp.model.lik = detail::custom_likelihood(spec, theta_dim);
    exp.model.theta_dim = theta_dim;

    std::vector<Triplet> trip;
    Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
    int col = 0;
    int fixed_seen = 0;
    int covariate_cols = 0;
    std::vector<Eigen::VectorXd> covariate_values;
    for (const auto& term : spec.terms) {
        if (term == "intercept" || term == "covariate") {
            const double truth = fixed_seen < static_cast<int>(spec.true_coefficients.size())
                                     ? spec.true_coefficients[static_cast<std::size_t>(fixed_seen)]
                                     : 0.0;
            PriorBlock b;
            b.kind = BlockKind::FixedEffect;
            b.count = 1;
            b.value = spec.fixed_effect_precision;
            b.name = term == "intercept" ? "intercept"
                                         : "x" + std::to_string(covariate_cols + 1);
            exp.model.blocks.push_back(b);
            Eigen::VectorXd column = Eigen::VectorXd::Ones(n);
            if (term == "covariate") {
                for (int i = 0; i < n; ++i) column[i] = rng.normal();
                covariate_values.push_back(column);
                ++covariate_cols;
            }
            for (int i = 0; i < n; ++i) trip.emplace_back(i, col, column[i]);
            eta += truth * column;
            ++fixed_seen;
            ++col;
        } else if (term == "iid" || term == "ar1") {
            PriorBlock b;
            b.kind = term == "iid" ? BlockKind::Iid : BlockKind::Ar1;
            b.count = n;
            b.value = term == "iid" ? spec.random_effect_precision : spec.ar1_rho;
            b.name = term;
            exp.model.blocks.push_back(b);
            Eigen::VectorXd field(n);
            if (term == "iid") {
                const double sd = 1.0 / std::sqrt(spec.random_effect_precision);
                for (int i = 0; i < n; ++i) field[i] = sd * rng.normal();
            } else {
                const double rho = spec.ar1_rho;
                field[0] = rng.normal() / std::sqrt(1.0 - rho * rho);
                for (int i = 1; i < n; ++i) field[i] = rho * field[i - 1] + rng.normal();
            }
            for (int i = 0; i < n; ++i) trip.emplace_back(i, col + i, 1.0);
            eta += field;
            col += n;
        } else {
            throw DomainError("manifest: model.terms: unknown term '" + term + "'");
        }
    }
    exp.model.A.resize(n, col);
    exp.model.A.setFromTriplets(trip.begin(), trip.end());

    exp.data.y.resize(n);
    for (int i = 0; i < n; ++i) exp.data.y[i] = detail::custom_response(spec, eta[i], rng);
    if (!covariate_values.empty()) {
        exp.data.covariates.resize(n, static_cast<int>(covariate_values.size()));
        for (std::size_t j = 0; j < covariate_values.size(); ++j) {
            exp.data.covariates.col(static_cast<int>(j)) = covariate_values[j];
            exp.data.covariate_names.push_back("x" + std::to_string(j + 1));
        }
    }
    detail::finish_experiment(exp);
    return exp;
}

inline Experiment build_experiment(const ExperimentManifest& manifest) {
    if (manifest.experiment == "custom") return build_custom_experiment(manifest);
    return make_experiment(manifest.experiment, manifest.seed, manifest.n);
}

} // namespace skewlap
