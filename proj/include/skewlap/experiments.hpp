#pragma once

// Named reproduction experiments: simulated datasets with documented true
// parameters, paired with the latent model used for inference. All
// randomness flows from the caller's seed through the "data" substream.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "skewlap/errors.hpp"
#include "skewlap/model.hpp"
#include "skewlap/rng.hpp"

namespace skewlap {

struct Experiment {
    std::string name;
    LatentModel model;
    Dataset data;
    std::vector<int> table_components; // fixed-effect offsets reported in tables
};

inline std::vector<std::string> experiment_names() {
    return {"poisson-intercept", "student-t", "gpd",
            "sens-spec",         "skew-sim",  "imbalanced-logistic"};
}

inline int default_sample_size(const std::string& name) {
    if (name == "poisson-intercept") return 300;
    if (name == "student-t") return 10;
    if (name == "gpd") return 10;
    if (name == "sens-spec") return 50;
    if (name == "skew-sim") return 20;
    if (name == "imbalanced-logistic") return 90;
    throw DomainError("default_sample_size: unknown experiment '" + name + "'");
}

namespace detail {

inline void finish_experiment(Experiment& exp) {
    int offset = 0;
    for (const auto& block : exp.model.blocks) {
        if (block.kind == BlockKind::FixedEffect) {
            for (int j = 0; j < block.count; ++j) exp.table_components.push_back(offset + j);
        }
        offset += block.count;
    }
}

inline PriorBlock fixed_block(const std::string& name, double precision) {
    PriorBlock b;
    b.kind = BlockKind::FixedEffect;
    b.count = 1;
    b.value = precision;
    b.name = name;
    return b;
}

} // namespace detail

// y_i ~ Poisson(exp(beta + u_i)), u_i iid N(0, 1), beta_true = 0. The
// random-effect precision is fixed at the generating value.
inline Experiment make_poisson_intercept(std::uint64_t seed, int n = 300) {
    if (n < 1) throw DomainError("make_poisson_intercept: n must be positive");
    RngStream rng = RngStream(seed).substream("data");
    Experiment exp;
    exp.name = "poisson-intercept";
    exp.model.blocks.push_back(detail::fixed_block("beta", 0.001));
    PriorBlock u;
    u.kind = BlockKind::Iid;
    u.count = n;
    u.value = 1.0;
    u.name = "u";
    exp.model.blocks.push_back(u);
    std::vector<Triplet> trip;
    for (int i = 0; i < n; ++i) {
        trip.emplace_back(i, 0, 1.0);
        trip.emplace_back(i, 1 + i, 1.0);
    }
    exp.model.A.resize(n, 1 + n);
    exp.model.A.setFromTriplets(trip.begin(), trip.end());
    exp.model.lik = Poisson{};
    exp.data.y.resize(n);
    for (int i = 0; i < n; ++i) {
        const double eta = rng.normal(); // beta_true = 0, u_i ~ N(0, 1)
        exp.data.y[i] = rng.poisson(std::exp(eta));
    }
    detail::finish_experiment(exp);
    return exp;
}

// sqrt(tau) (y_i - beta0 - beta1 x_i) ~ T_4 with beta = (0, 1) and tau fixed
// at the generating value 1.
inline Experiment make_student_t(std::uint64_t seed, int n = 10) {
    if (n < 1) throw DomainError("make_student_t: n must be positive");
    RngStream rng = RngStream(seed).substream("data");
    Experiment exp;
    exp.name = "student-t";
    exp.model.blocks.push_back(detail::fixed_block("beta0", 0.001));
    exp.model.blocks.push_back(detail::fixed_block("beta1", 0.001));
    Eigen::VectorXd x(n);
    std::vector<Triplet> trip;
    for (int i = 0; i < n; ++i) {
        x[i] = rng.normal();
        trip.emplace_back(i, 0, 1.0);
        trip.emplace_back(i, 1, x[i]);
    }
    exp.model.A.resize(n, 2);
    exp.model.A.setFromTriplets(trip.begin(), trip.end());
    StudentT lik;
    lik.dof = 4.0;
    lik.fixed_log_precision = 0.0;
    exp.model.lik = lik;
    exp.data.y.resize(n);
    for (int i = 0; i < n; ++i) exp.data.y[i] = x[i] + rng.student_t(4.0);
    exp.data.covariates = x;
    exp.data.covariate_names = {"x"};
    detail::finish_experiment(exp);
    return exp;
}

// Generalised Pareto samples whose log median is eta_i = beta0 + beta1 x_i
// with beta = (1, 1); the tail index is fixed at the generating value.
inline Experiment make_gpd(std::uint64_t seed, int n = 10) {
    if (n < 1) throw DomainError("make_gpd: n must be positive");
    const double xi = 0.3;
    const double alpha = 0.5;
    RngStream rng = RngStream(seed).substream("data");
    Experiment exp;
    exp.name = "gpd";
    exp.model.blocks.push_back(detail::fixed_block("beta0", 0.001));
    exp.model.blocks.push_back(detail::fixed_block("beta1", 0.001));
    Eigen::VectorXd x(n);
    std::vector<Triplet> trip;
    for (int i = 0; i < n; ++i) {
        x[i] = rng.normal();
        trip.emplace_back(i, 0, 1.0);
        trip.emplace_back(i, 1, x[i]);
    }
    exp.model.A.resize(n, 2);
    exp.model.A.setFromTriplets(trip.begin(), trip.end());
    GeneralizedPareto lik;
    lik.tail_xi = xi;
    lik.quantile_level = alpha;
    exp.model.lik = lik;
    exp.data.y.resize(n);
    for (int i = 0; i < n; ++i) {
        const double eta = 1.0 + x[i];
        const double sigma = xi * std::exp(eta) / (std::pow(1.0 - alpha, -xi) - 1.0);
        const double u = rng.u01();
        exp.data.y[i] = sigma / xi * (std::pow(1.0 - u, -xi) - 1.0);
    }
    exp.data.covariates = x;
    exp.data.covariate_names = {"x"};
    detail::finish_experiment(exp);
    return exp;
}

// Bernoulli screening-test outcomes with sensitivity 0.8 and specificity
// 0.985, common latent eta (true value 0) under a vague prior.
inline Experiment make_sens_spec(std::uint64_t seed, int n = 50) {
    if (n < 1) throw DomainError("make_sens_spec: n must be positive");
    RngStream rng = RngStream(seed).substream("data");
    Experiment exp;
    exp.name = "sens-spec";
    exp.model.blocks.push_back(detail::fixed_block("eta", 1e-6));
    std::vector<Triplet> trip;
    for (int i = 0; i < n; ++i) trip.emplace_back(i, 0, 1.0);
    exp.model.A.resize(n, 1);
    exp.model.A.setFromTriplets(trip.begin(), trip.end());
    BernoulliSensSpec lik;
    exp.model.lik = lik;
    const double pi_true = 0.5; // logistic(0)
    const double prob = lik.sensitivity * pi_true + (1.0 - lik.specificity) * (1.0 - pi_true);
    exp.data.y.resize(n);
    for (int i = 0; i < n; ++i) exp.data.y[i] = rng.u01() < prob ? 1.0 : 0.0;
    detail::finish_experiment(exp);
    return exp;
}

// Binomial(2, logistic(eta)) with four fixed effects and a unit-innovation
// AR1 field, rho fixed at the generating value sqrt(3)/2. Heavy on zeros by
// design: beta = (-2, -3, -3, 1).
inline Experiment make_skew_sim(std::uint64_t seed, int n = 20) {
    if (n < 1) throw DomainError("make_skew_sim: n must be positive");
    const double rho = std::sqrt(3.0) / 2.0;
    const Eigen::Vector4d beta(-2.0, -3.0, -3.0, 1.0);
    RngStream rng = RngStream(seed).substream("data");
    Experiment exp;
    exp.name = "skew-sim";
    for (int k = 0; k < 4; ++k) {
        exp.model.blocks.push_back(detail::fixed_block("beta" + std::to_string(k), 0.01));
    }
    PriorBlock u;
    u.kind = BlockKind::Ar1;
    u.count = n;
    u.value = rho;
    u.name = "u";
    exp.model.blocks.push_back(u);

    Eigen::MatrixXd x(n, 3);
    Eigen::VectorXd field(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < 3; ++j) x(i, j) = rng.normal();
    }
    field[0] = rng.normal() / std::sqrt(1.0 - rho * rho); // stationary start
    for (int i = 1; i < n; ++i) field[i] = rho * field[i - 1] + rng.normal();

    std::vector<Triplet> trip;
    for (int i = 0; i < n; ++i) {
        trip.emplace_back(i, 0, 1.0);
        for (int j = 0; j < 3; ++j) trip.emplace_back(i, 1 + j, x(i, j));
        trip.emplace_back(i, 4 + i, 1.0);
    }
    exp.model.A.resize(n, 4 + n);
    exp.model.A.setFromTriplets(trip.begin(), trip.end());
    BinomialLogit lik;
    lik.trials = 2;
    exp.model.lik = lik;

    exp.data.y.resize(n);
    for (int i = 0; i < n; ++i) {
        const double eta = beta[0] + beta[1] * x(i, 0) + beta[2] * x(i, 1) +
                           beta[3] * x(i, 2) + field[i];
        const double prob = 1.0 / (1.0 + std::exp(-eta));
        int count = 0;
        for (int t = 0; t < 2; ++t) count += rng.u01() < prob ? 1 : 0;
        exp.data.y[i] = count;
    }
    exp.data.covariates = x;
    exp.data.covariate_names = {"x1", "x2", "x3"};
    detail::finish_experiment(exp);
    return exp;
}

// Logistic regression with the 10-positive / 80-negative class shape on
// three standard-normal covariates; responses are redrawn until exactly
// n/9 positives occur, so the imbalance is reproduced at any n.
inline Experiment make_imbalanced_logistic(std::uint64_t seed, int n = 90) {
    if (n < 9) throw DomainError("make_imbalanced_logistic: n must be at least 9");
    const Eigen::Vector4d beta(-2.5, 1.0, -0.8, 0.6);
    const int positives = n / 9;
    RngStream rng = RngStream(seed).substream("data");
    Experiment exp;
    exp.name = "imbalanced-logistic";
    for (int k = 0; k < 4; ++k) {
        exp.model.blocks.push_back(detail::fixed_block("beta" + std::to_string(k), 0.001));
    }
    Eigen::MatrixXd x(n, 3);
    std::vector<Triplet> trip;
    for (int i = 0; i < n; ++i) {
        trip.emplace_back(i, 0, 1.0);
        for (int j = 0; j < 3; ++j) {
            x(i, j) = rng.normal();
            trip.emplace_back(i, 1 + j, x(i, j));
        }
    }
    exp.model.A.resize(n, 4);
    exp.model.A.setFromTriplets(trip.begin(), trip.end());
    exp.model.lik = BinomialLogit{};

    exp.data.y.resize(n);
    for (int attempt = 0; attempt < 100000; ++attempt) {
        int count = 0;
        for (int i = 0; i < n; ++i) {
            const double eta = beta[0] + beta[1] * x(i, 0) + beta[2] * x(i, 1) +
                               beta[3] * x(i, 2);
            exp.data.y[i] = rng.u01() < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
            count += exp.data.y[i] > 0.5 ? 1 : 0;
        }
        if (count == positives) {
            exp.data.covariates = x;
            exp.data.covariate_names = {"x1", "x2", "x3"};
            detail::finish_experiment(exp);
            return exp;
        }
    }
    throw NonConvergence("make_imbalanced_logistic: could not hit the target class count");
}

inline Experiment make_experiment(const std::string& name, std::uint64_t seed, int n = 0) {
    const int size = n > 0 ? n : default_sample_size(name);
    if (name == "poisson-intercept") return make_poisson_intercept(seed, size);
    if (name == "student-t") return make_student_t(seed, size);
    if (name == "gpd") return make_gpd(seed, size);
    if (name == "sens-spec") return make_sens_spec(seed, size);
    if (name == "skew-sim") return make_skew_sim(seed, size);
    if (name == "imbalanced-logistic") return make_imbalanced_logistic(seed, size);
    throw DomainError("make_experiment: unknown experiment '" + name + "'");
}

} // namespace skewlap
