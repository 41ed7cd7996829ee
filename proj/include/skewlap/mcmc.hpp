#pragma once

// Ground-truth sampler: adaptive random-walk Metropolis on the joint latent
// (and free hyperparameter) space, preconditioned by the Laplace covariance.
// Deliberately simple so it stays auditable; speed comes from preconditioning
// rather than from clever proposals.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "skewlap/density_grid.hpp"
#include "skewlap/errors.hpp"
#include "skewlap/gaussian.hpp"
#include "skewlap/model.hpp"
#include "skewlap/rng.hpp"

namespace skewlap {

struct Chain {
    Eigen::MatrixXd draws; // iterations x dim, burn-in rows included
    std::vector<std::string> names;
    double acceptance = 0.0; // post burn-in acceptance rate
    std::uint64_t seed = 0;
    int burn_in = 0;
};

struct McmcOptions {
    int iterations = 200000;
    int burn_in = 20000;
    double initial_scale = 0.0; // 0 picks 2.38 / sqrt(dim)
    int adapt_window = 100;
    int chain_index = 0; // substream label for parallel chains
};

namespace detail {

inline double data_loglik(const LatentModel& model, const Dataset& data,
                          const Eigen::VectorXd& f, const Eigen::VectorXd& theta) {
    double acc = 0.0;
    const Eigen::VectorXd eta = model.A * f;
    for (int i = 0; i < model.n(); ++i) {
        const double ll = loglik_eval(model.lik, data.y[i], eta[i], theta).value;
        if (!std::isfinite(ll)) return -std::numeric_limits<double>::infinity();
        acc += ll;
    }
    return acc;
}

// log p(f, theta | y) up to constants when theta is free; -inf off support
inline double joint_target(const LatentModel& model, const Dataset& data,
                           const Eigen::VectorXd& f, const Eigen::VectorXd& theta) {
    const double ll = data_loglik(model, data, f, theta);
    if (!std::isfinite(ll)) return ll;
    SparseMat q;
    try {
        q = prior_precision(model, theta);
    } catch (const DomainError&) {
        return -std::numeric_limits<double>::infinity();
    }
    SparseLLT llt(q);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    return ll + 0.5 * log_det_from_llt(llt) + model.log_hyperprior(theta) - 0.5 * f.dot(q * f);
}

} // namespace detail

inline std::vector<std::string> parameter_names(const LatentModel& model, bool with_theta) {
    std::vector<std::string> names;
    for (const auto& block : model.blocks) {
        for (int j = 0; j < block.count; ++j) {
            const std::string base = block.name.empty() ? "f" : block.name;
            names.push_back(block.count == 1 ? base : base + "[" + std::to_string(j) + "]");
        }
    }
    if (with_theta) {
        for (int j = 0; j < model.theta_dim; ++j) names.push_back("theta[" + std::to_string(j) + "]");
    }
    return names;
}

// theta of length theta_dim fixes the hyperparameters; an empty theta on a
// model with free hyperparameters samples them jointly with the field.
inline Chain rw_metropolis(const LatentModel& model, const Dataset& data,
                           const Eigen::VectorXd& theta, std::uint64_t seed,
                           const McmcOptions& opts = {}) {
    const int p = model.p();
    const bool sample_theta = model.theta_dim > 0 && theta.size() == 0;
    if (!sample_theta && theta.size() != model.theta_dim) {
        throw DimensionMismatch("rw_metropolis: theta length must match the model");
    }
    if (opts.iterations <= opts.burn_in || opts.burn_in < 0) {
        throw DomainError("rw_metropolis: iterations must exceed the burn-in");
    }
    const int dim = p + (sample_theta ? model.theta_dim : 0);
    if (dim > 200) throw DomainError("rw_metropolis: joint dimension above the oracle limit");

    const Eigen::VectorXd theta_init = sample_theta ? model.theta_or_default() : theta;
    const GaussianApprox precond = laplace_fit(model, data, theta_init);
    const SparseMat q_fixed = prior_precision(model, theta_init);

    auto target = [&](const Eigen::VectorXd& f, const Eigen::VectorXd& th) {
        if (sample_theta) return detail::joint_target(model, data, f, th);
        const double ll = detail::data_loglik(model, data, f, th);
        if (!std::isfinite(ll)) return ll;
        return ll - 0.5 * f.dot(q_fixed * f);
    };

    Eigen::VectorXd f = precond.mean;
    Eigen::VectorXd th = theta_init;
    double lp = target(f, th);
    if (!std::isfinite(lp)) {
        throw NonConvergence("rw_metropolis: log-density not finite at the Laplace mean");
    }

    RngStream stream = RngStream(seed).substream("oracle-chain", opts.chain_index);
    double scale = opts.initial_scale > 0.0 ? opts.initial_scale : 2.38 / std::sqrt(dim);

    Chain chain;
    chain.draws.resize(opts.iterations, dim);
    chain.names = parameter_names(model, sample_theta);
    chain.seed = seed;
    chain.burn_in = opts.burn_in;

    Eigen::VectorXd eps(p);
    int window_accepts = 0;
    long long main_accepts = 0;
    for (int it = 0; it < opts.iterations; ++it) {
        for (int j = 0; j < p; ++j) eps[j] = stream.normal();
        Eigen::VectorXd f_prop = f + scale * half_solve(precond, eps);
        Eigen::VectorXd th_prop = th;
        if (sample_theta) {
            for (int j = 0; j < model.theta_dim; ++j) {
                th_prop[j] += 0.5 * scale * stream.normal();
            }
        }
        const double lp_prop = target(f_prop, th_prop);
        const double u = stream.u01();
        if (std::log(u) < lp_prop - lp) {
            f = f_prop;
            th = th_prop;
            lp = lp_prop;
            ++window_accepts;
            if (it >= opts.burn_in) ++main_accepts;
        }
        chain.draws.row(it).head(p) = f;
        if (sample_theta) chain.draws.row(it).tail(model.theta_dim) = th;

        if (it < opts.burn_in && (it + 1) % opts.adapt_window == 0) {
            const double rate = static_cast<double>(window_accepts) / opts.adapt_window;
            if (rate < 0.23) {
                scale *= 0.8;
            } else if (rate > 0.44) {
                scale *= 1.25;
            }
            window_accepts = 0;
        } else if (it == opts.burn_in - 1) {
            window_accepts = 0;
        }
    }
    chain.acceptance = static_cast<double>(main_accepts) /
                       static_cast<double>(opts.iterations - opts.burn_in);
    return chain;
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

struct ChainSummary {
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;
    Eigen::VectorXd skewness; // standardized third moment
    Eigen::VectorXd ess;
    std::vector<DensityGrid> histograms;
    std::vector<std::string> names;
    double acceptance = 0.0;
    int retained = 0;
};

namespace detail {

// initial-positive-sequence truncation: sum autocorrelation pairs while the
// pair sums stay positive
inline double geyer_ess(const Eigen::VectorXd& x) {
    const int n = static_cast<int>(x.size());
    const Eigen::VectorXd c = x.array() - x.mean();
    const double gamma0 = c.squaredNorm() / n;
    if (!(gamma0 > 0.0)) throw DomainError("geyer_ess: degenerate (constant) chain");
    auto gamma = [&](int k) { return c.head(n - k).dot(c.tail(n - k)) / n; };
    double pair_sum = 0.0;
    const int max_lag = n / 3;
    for (int t = 0; 2 * t + 1 <= max_lag; ++t) {
        const double g = gamma(2 * t) + gamma(2 * t + 1);
        if (g <= 0.0) break;
        pair_sum += g;
    }
    const double tau = std::max(2.0 * pair_sum / gamma0 - 1.0, 1e-3);
    return n / tau;
}

inline DensityGrid fd_histogram(const Eigen::VectorXd& x) {
    const int n = static_cast<int>(x.size());
    std::vector<double> sorted(x.data(), x.data() + n);
    std::sort(sorted.begin(), sorted.end());
    const double q25 = sorted[static_cast<std::size_t>(0.25 * (n - 1))];
    const double q75 = sorted[static_cast<std::size_t>(0.75 * (n - 1))];
    const double iqr = q75 - q25;
    if (!(iqr > 0.0)) throw DomainError("fd_histogram: degenerate (constant) chain");
    const double width = 2.0 * iqr / std::cbrt(static_cast<double>(n));
    const double lo = sorted.front(), hi = sorted.back();
    const int bins = std::clamp(static_cast<int>(std::ceil((hi - lo) / width)), 10, 2000);
    const double h = (hi - lo) / bins;
    Eigen::VectorXd count = Eigen::VectorXd::Zero(bins);
    for (int i = 0; i < n; ++i) {
        const int b = std::min(static_cast<int>((x[i] - lo) / h), bins - 1);
        count[b] += 1.0;
    }
    DensityGrid grid;
    grid.x.resize(bins);
    grid.pdf.resize(bins);
    for (int b = 0; b < bins; ++b) {
        grid.x[b] = lo + (b + 0.5) * h;
        grid.pdf[b] = count[b] / (n * h);
    }
    normalize_grid(grid);
    return grid;
}

} // namespace detail

inline ChainSummary chain_summary(const Chain& chain, int discard) {
    const int total = static_cast<int>(chain.draws.rows());
    if (discard < 0 || discard >= total) {
        throw DomainError("chain_summary: discard must leave at least one draw");
    }
    const int n = total - discard;
    const int dim = static_cast<int>(chain.draws.cols());
    ChainSummary summary;
    summary.mean.resize(dim);
    summary.sd.resize(dim);
    summary.skewness.resize(dim);
    summary.ess.resize(dim);
    summary.names = chain.names;
    summary.acceptance = chain.acceptance;
    summary.retained = n;
    for (int j = 0; j < dim; ++j) {
        const Eigen::VectorXd x = chain.draws.col(j).tail(n);
        const double mean = x.mean();
        const Eigen::ArrayXd c = x.array() - mean;
        const double var = c.square().sum() / (n - 1);
        if (!(var > 0.0)) throw DomainError("chain_summary: degenerate (constant) chain");
        summary.mean[j] = mean;
        summary.sd[j] = std::sqrt(var);
        summary.skewness[j] = c.cube().mean() / std::pow(std::sqrt(var), 3);
        summary.ess[j] = detail::geyer_ess(x);
        summary.histograms.push_back(detail::fd_histogram(x));
    }
    return summary;
}

inline void write_chain_csv(std::ostream& os, const Chain& chain) {
    for (std::size_t j = 0; j < chain.names.size(); ++j) {
        os << (j ? "," : "") << chain.names[j];
    }
    os << '\n';
    char buffer[40];
    for (int i = 0; i < chain.draws.rows(); ++i) {
        for (int j = 0; j < chain.draws.cols(); ++j) {
            std::snprintf(buffer, sizeof(buffer), "%.17g", chain.draws(i, j));
            os << (j ? "," : "") << buffer;
        }
        os << '\n';
    }
}

} // namespace skewlap
