#pragma once

// Nested approximation pipeline: a hyperparameter posterior explored on a
// grid, per-point conditional latent approximations under a selectable
// strategy ladder, and latent marginals assembled as weighted mixtures.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "skewlap/density_grid.hpp"
#include "skewlap/errors.hpp"
#include "skewlap/gaussian.hpp"
#include "skewlap/math/normal.hpp"
#include "skewlap/math/optimize.hpp"
#include "skewlap/math/skew_normal.hpp"
#include "skewlap/model.hpp"
#include "skewlap/skew_vb.hpp"
#include "skewlap/vb.hpp"

namespace skewlap {

// Approximation ladder. Each rung consumes the previous rung's mean and
// precision, so disabling a correction reproduces the earlier strategy
// bit for bit.
enum class Strategy { Gaussian, VbMean, VbMeanVar, SgcVb };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Gaussian: return "gaussian";
        case Strategy::VbMean: return "vb-mean";
        case Strategy::VbMeanVar: return "vb-mean-var";
        case Strategy::SgcVb: return "sgc-vb";
    }
    throw DomainError("strategy_name: unknown strategy");
}

inline Strategy parse_strategy(const std::string& name) {
    if (name == "gaussian") return Strategy::Gaussian;
    if (name == "vb-mean") return Strategy::VbMean;
    if (name == "vb-mean-var") return Strategy::VbMeanVar;
    if (name == "sgc-vb") return Strategy::SgcVb;
    throw DomainError("parse_strategy: unknown strategy '" + name + "'");
}

inline std::vector<Strategy> all_strategies() {
    return {Strategy::Gaussian, Strategy::VbMean, Strategy::VbMeanVar, Strategy::SgcVb};
}

// Hyperparameter integration grid. Weights are stored as normalized log
// weights: the cells share one volume, so it cancels in the normalization.
struct ThetaGrid {
    Eigen::MatrixXd points;      // one integration point per row
    Eigen::VectorXd log_weights; // exp sums to one
    Eigen::VectorXd mode;
    Eigen::MatrixXd curvature;   // negative Hessian of the log posterior at the mode
};

struct MarginalSummary {
    int index = 0;
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    double skewness = 0.0;
    DensityGrid density; // normalized mixture on the component's grid
};

struct FitReport {
    std::string strategy;
    ThetaGrid grid;
    std::vector<MarginalSummary> marginals; // one entry per latent component
    std::vector<std::string> warnings;
    // objective values at the modal grid point; NaN when the rung is inactive
    double vb_mean_objective = std::numeric_limits<double>::quiet_NaN();
    double vb_var_objective = std::numeric_limits<double>::quiet_NaN();
    double skew_objective = std::numeric_limits<double>::quiet_NaN();
    // wall-clock split: hyperposterior evaluations / grid search / latent stage
    double stage1_seconds = 0.0;
    double stage2_seconds = 0.0;
    double stage3_seconds = 0.0;
};

struct InlaOptions {
    double grid_step = 0.5;          // step between points, in posterior-sd units
    double log_drop = 2.5;           // keep points within this drop from the mode
    int max_steps = 40;              // safety bound on steps per direction
    int marginal_points = 401;       // abscissae per latent marginal
    double marginal_width_sd = 8.0;  // grid reach around each conditional mean
    std::vector<int> vb_components;   // empty: default_correction_set
    std::vector<int> skew_components; // empty: default_skew_set
    VbOptions vb{};
    SkewOptions skew{};
    LaplaceOptions laplace{};
    int threads = 0; // stage-3 workers; 0 picks the hardware count
};

inline std::vector<std::string> latent_names(const LatentModel& model) {
    std::vector<std::string> names;
    for (const auto& block : model.blocks) {
        const std::string base = block.name.empty() ? "f" : block.name;
        for (int j = 0; j < block.count; ++j) {
            names.push_back(block.count == 1 ? base : base + "[" + std::to_string(j) + "]");
        }
    }
    return names;
}

namespace detail {

// log ptilde(theta | y) at an already-fitted Gaussian approximation: the
// joint at the conditional mean minus the Gaussian denominator at its own
// mean. The (p/2) log(2pi) terms cancel between prior and denominator.
inline double log_theta_posterior_at(const LatentModel& model, const Dataset& data,
                                     const Eigen::VectorXd& theta,
                                     const GaussianApprox& approx) {
    const SparseMat q_theta = prior_precision(model, theta);
    SparseLLT llt;
    llt.compute(q_theta);
    if (llt.info() != Eigen::Success) {
        throw CholeskyFailure("log_theta_posterior: prior precision is not positive definite");
    }
    return joint_latent_logdens(model, data, approx.mean, theta, q_theta) +
           0.5 * log_det_from_llt(llt) + model.log_hyperprior(theta) -
           0.5 * approx.log_det_q;
}

} // namespace detail

inline double log_theta_posterior(const LatentModel& model, const Dataset& data,
                                  const Eigen::VectorXd& theta,
                                  const LaplaceOptions& opts = {}) {
    const GaussianApprox approx = laplace_fit(model, data, theta, opts);
    return detail::log_theta_posterior_at(model, data, theta, approx);
}

namespace detail {

using LogPost = std::function<double(const Eigen::VectorXd&)>;

// Negative Hessian by central differences. Throws when the surface is not
// concave enough to standardize step directions.
inline Eigen::MatrixXd fd_neg_hessian(const LogPost& lp, const Eigen::VectorXd& mode,
                                      double lp_mode) {
    const int d = static_cast<int>(mode.size());
    const double h = 1e-3;
    Eigen::MatrixXd hess(d, d);
    for (int i = 0; i < d; ++i) {
        Eigen::VectorXd up = mode;
        Eigen::VectorXd dn = mode;
        up[i] += h;
        dn[i] -= h;
        hess(i, i) = (lp(up) - 2.0 * lp_mode + lp(dn)) / (h * h);
    }
    for (int i = 0; i < d; ++i) {
        for (int j = i + 1; j < d; ++j) {
            Eigen::VectorXd pp = mode, pm = mode, mp = mode, mm = mode;
            pp[i] += h; pp[j] += h;
            pm[i] += h; pm[j] -= h;
            mp[i] -= h; mp[j] += h;
            mm[i] -= h; mm[j] -= h;
            const double cross = (lp(pp) - lp(pm) - lp(mp) + lp(mm)) / (4.0 * h * h);
            hess(i, j) = cross;
            hess(j, i) = cross;
        }
    }
    if (!hess.allFinite()) {
        throw ModeSearchFailure("explore_theta: curvature is not finite at the mode");
    }
    return -hess;
}

struct GridPoint {
    std::array<int, 2> z{0, 0}; // lattice offsets, second unused in 1-D
    Eigen::VectorXd theta;
    double lp = 0.0;
};

inline ThetaGrid single_point_grid(const Eigen::VectorXd& theta) {
    ThetaGrid grid;
    const int d = static_cast<int>(theta.size());
    grid.points = theta.transpose();
    grid.log_weights = Eigen::VectorXd::Zero(1);
    grid.mode = theta;
    grid.curvature = Eigen::MatrixXd::Zero(d, d);
    return grid;
}

inline ThetaGrid explore_impl(const LatentModel& model, const Dataset& data,
                              const InlaOptions& opts, double* eval_seconds) {
    const int dim = model.theta_dim;
    if (model.fixed_theta) return single_point_grid(*model.fixed_theta);
    if (dim == 0) return single_point_grid(Eigen::VectorXd());
    if (dim > 2) {
        throw DomainError("explore_theta: grid exploration supports at most two free hyperparameters");
    }

    const LogPost lp = [&](const Eigen::VectorXd& th) -> double {
        const auto t0 = std::chrono::steady_clock::now();
        double value;
        try {
            value = log_theta_posterior(model, data, th, opts.laplace);
        } catch (const DomainError&) {
            value = -std::numeric_limits<double>::infinity();
        } catch (const std::runtime_error&) {
            value = -std::numeric_limits<double>::infinity();
        }
        if (eval_seconds) {
            *eval_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
        return value;
    };

    Eigen::VectorXd start = model.theta_or_default();
    if (!std::isfinite(lp(start))) {
        throw ModeSearchFailure("explore_theta: log posterior is not finite at the starting point");
    }

    // Re-center and retry when a grid point beats the located mode; the grid
    // invariant is that the mode carries the largest log posterior.
    for (int attempt = 0; attempt < 5; ++attempt) {
        const auto res = math::nelder_mead([&](const Eigen::VectorXd& th) { return -lp(th); },
                                           start, 1.0, 1e-12, 2000);
        const Eigen::VectorXd mode = res.x;
        const double lp_mode = -res.value;
        if (!std::isfinite(lp_mode)) {
            throw ModeSearchFailure("explore_theta: mode search ended at a non-finite log posterior");
        }

        const Eigen::MatrixXd curv = fd_neg_hessian(lp, mode, lp_mode);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(curv);
        if (eig.eigenvalues().minCoeff() <= 0.0) {
            throw ModeSearchFailure("explore_theta: log posterior is not concave at the candidate mode");
        }
        // columns are unit steps of one posterior sd in each principal direction
        const Eigen::MatrixXd dirs =
            eig.eigenvectors() * eig.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal();

        std::map<std::array<int, 2>, double> cache;
        cache[{0, 0}] = lp_mode;
        const auto eval = [&](int k1, int k2) -> double {
            const std::array<int, 2> key{k1, k2};
            const auto it = cache.find(key);
            if (it != cache.end()) return it->second;
            Eigen::VectorXd z = Eigen::VectorXd::Zero(dim);
            z[0] = opts.grid_step * k1;
            if (dim == 2) z[1] = opts.grid_step * k2;
            const double value = lp(mode + dirs * z);
            cache[key] = value;
            return value;
        };
        const auto keeps = [&](double value) { return lp_mode - value <= opts.log_drop; };

        // axis extents first, then (in 2-D) a filtered rectangle with a
        // one-cell margin for diagonal spill
        std::array<int, 2> neg{0, 0};
        std::array<int, 2> pos{0, 0};
        for (int d = 0; d < dim; ++d) {
            for (int k = 1; k <= opts.max_steps; ++k) {
                if (!keeps(eval(d == 0 ? k : 0, d == 0 ? 0 : k))) break;
                pos[d] = k;
            }
            for (int k = 1; k <= opts.max_steps; ++k) {
                if (!keeps(eval(d == 0 ? -k : 0, d == 0 ? 0 : -k))) break;
                neg[d] = k;
            }
        }

        std::vector<GridPoint> kept;
        const int margin = dim == 2 ? 1 : 0;
        const int lo1 = -std::min(neg[0] + margin, opts.max_steps);
        const int hi1 = std::min(pos[0] + margin, opts.max_steps);
        const int lo2 = dim == 2 ? -std::min(neg[1] + margin, opts.max_steps) : 0;
        const int hi2 = dim == 2 ? std::min(pos[1] + margin, opts.max_steps) : 0;
        for (int k1 = lo1; k1 <= hi1; ++k1) {
            for (int k2 = lo2; k2 <= hi2; ++k2) {
                const double value = eval(k1, k2);
                if (!keeps(value)) continue;
                GridPoint point;
                point.z = {k1, k2};
                Eigen::VectorXd z = Eigen::VectorXd::Zero(dim);
                z[0] = opts.grid_step * k1;
                if (dim == 2) z[1] = opts.grid_step * k2;
                point.theta = mode + dirs * z;
                point.lp = value;
                kept.push_back(std::move(point));
            }
        }

        double best = lp_mode;
        Eigen::VectorXd best_theta = mode;
        for (const auto& point : kept) {
            if (point.lp > best) {
                best = point.lp;
                best_theta = point.theta;
            }
        }
        if (best > lp_mode) {
            start = best_theta;
            continue;
        }

        ThetaGrid grid;
        grid.mode = mode;
        grid.curvature = curv;
        grid.points.resize(static_cast<int>(kept.size()), dim);
        grid.log_weights.resize(static_cast<int>(kept.size()));
        for (int i = 0; i < static_cast<int>(kept.size()); ++i) {
            grid.points.row(i) = kept[i].theta.transpose();
            grid.log_weights[i] = kept[i].lp;
        }
        const double top = grid.log_weights.maxCoeff();
        const double lse = top + std::log((grid.log_weights.array() - top).exp().sum());
        grid.log_weights.array() -= lse;
        return grid;
    }
    throw ModeSearchFailure("explore_theta: mode search failed to settle on the grid maximum");
}

} // namespace detail

inline ThetaGrid explore_theta(const LatentModel& model, const Dataset& data,
                               const InlaOptions& opts = {}) {
    return detail::explore_impl(model, data, opts, nullptr);
}

namespace detail {

struct ConditionalFit {
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;
    Eigen::VectorXd skewness; // standardized marginal skewness, zero off sgc-vb
    double vb_mean_objective = std::numeric_limits<double>::quiet_NaN();
    double vb_var_objective = std::numeric_limits<double>::quiet_NaN();
    double skew_objective = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> notes;
    bool ok = false;
    std::string error;
};

inline ConditionalFit conditional_fit(const LatentModel& model, const Dataset& data,
                                      const Eigen::VectorXd& theta, Strategy strategy,
                                      const InlaOptions& opts) {
    ConditionalFit out;
    GaussianApprox approx = laplace_fit(model, data, theta, opts.laplace);
    if (strategy != Strategy::Gaussian) {
        const CorrectionIndexSet set = opts.vb_components.empty()
                                           ? default_correction_set(model)
                                           : CorrectionIndexSet{opts.vb_components};
        const MeanCorrection mean_corr = vb_mean_correct(model, data, approx, set, opts.vb);
        out.vb_mean_objective = mean_corr.objective;
        if (strategy == Strategy::VbMean) {
            approx.mean = mean_corr.corrected_mean;
        } else {
            const VarCorrection var_corr =
                vb_var_correct(model, data, approx, mean_corr, set, opts.vb);
            out.vb_var_objective = var_corr.objective;
            approx = make_gaussian_approx(mean_corr.corrected_mean, var_corr.corrected_precision,
                                          theta);
        }
    }
    out.mean = approx.mean;
    out.sd = approx.selected_inverse().diagonal().cwiseSqrt();
    out.skewness = Eigen::VectorXd::Zero(model.p());
    if (strategy == Strategy::SgcVb) {
        const std::vector<int> comps =
            opts.skew_components.empty() ? default_skew_set(model) : opts.skew_components;
        const SkewnessFit fit = optimize_skewness(model, data, theta, approx, comps, opts.skew);
        out.skewness = fit.s;
        double total = 0.0;
        for (const auto& comp : fit.components) {
            total += comp.objective;
            if (!comp.converged) {
                out.notes.push_back("skewness for component " + std::to_string(comp.index) +
                                    " fell back to zero");
            }
        }
        out.skew_objective = total;
    }
    out.ok = true;
    return out;
}

} // namespace detail

inline FitReport latent_marginals(const LatentModel& model, const Dataset& data,
                                  const ThetaGrid& grid, Strategy strategy,
                                  const InlaOptions& opts = {}) {
    const int p = model.p();
    const int m = static_cast<int>(grid.points.rows());
    if (m < 1) throw DomainError("latent_marginals: theta grid is empty");
    if (grid.log_weights.size() != m) {
        throw DimensionMismatch("latent_marginals: grid weights do not match points");
    }
    if (grid.points.cols() != model.theta_dim) {
        throw DimensionMismatch("latent_marginals: grid dimension does not match theta_dim");
    }

    FitReport report;
    report.strategy = strategy_name(strategy);
    report.grid = grid;

    std::vector<detail::ConditionalFit> fits(m);
    const auto run_point = [&](int k) {
        try {
            fits[k] = detail::conditional_fit(model, data, grid.points.row(k).transpose(),
                                              strategy, opts);
        } catch (const std::exception& err) {
            fits[k].ok = false;
            fits[k].error = err.what();
        }
    };
    int workers = opts.threads > 0 ? opts.threads
                                   : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, std::min(workers, m));
    if (workers == 1) {
        for (int k = 0; k < m; ++k) run_point(k);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&]() {
                for (int k = next.fetch_add(1); k < m; k = next.fetch_add(1)) run_point(k);
            });
        }
        for (auto& th : pool) th.join();
    }

    // drop failed points and push their weight onto the survivors
    Eigen::VectorXd weights = grid.log_weights.array().exp();
    double surviving = 0.0;
    for (int k = 0; k < m; ++k) {
        if (!fits[k].ok) {
            report.warnings.push_back("theta point " + std::to_string(k) +
                                      " dropped: " + fits[k].error);
            weights[k] = 0.0;
            continue;
        }
        surviving += weights[k];
        for (const auto& note : fits[k].notes) {
            report.warnings.push_back("theta point " + std::to_string(k) + ": " + note);
        }
    }
    if (!(surviving > 0.0)) {
        std::string first;
        for (const auto& fit : fits) {
            if (!fit.ok) { first = fit.error; break; }
        }
        throw NonConvergence("latent_marginals: every theta point failed; first error: " + first);
    }
    weights /= surviving;

    int modal = 0;
    double modal_weight = -1.0;
    for (int k = 0; k < m; ++k) {
        if (weights[k] > modal_weight) {
            modal_weight = weights[k];
            modal = k;
        }
    }
    report.vb_mean_objective = fits[modal].vb_mean_objective;
    report.vb_var_objective = fits[modal].vb_var_objective;
    report.skew_objective = fits[modal].skew_objective;

    const std::vector<std::string> names = latent_names(model);
    report.marginals.resize(static_cast<std::size_t>(p));
    for (int l = 0; l < p; ++l) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < m; ++k) {
            if (weights[k] == 0.0) continue;
            lo = std::min(lo, fits[k].mean[l] - opts.marginal_width_sd * fits[k].sd[l]);
            hi = std::max(hi, fits[k].mean[l] + opts.marginal_width_sd * fits[k].sd[l]);
        }
        DensityGrid density =
            make_uniform_grid(0.5 * (lo + hi), 0.5 * (hi - lo), opts.marginal_points);
        for (int k = 0; k < m; ++k) {
            if (weights[k] == 0.0) continue;
            const double mu = fits[k].mean[l];
            const double sd = fits[k].sd[l];
            const double s = fits[k].skewness[l];
            if (s == 0.0) {
                for (int i = 0; i < density.x.size(); ++i) {
                    density.pdf[i] += weights[k] * math::norm_pdf((density.x[i] - mu) / sd) / sd;
                }
            } else {
                const math::SkewNormalStd sn(s);
                for (int i = 0; i < density.x.size(); ++i) {
                    density.pdf[i] += weights[k] * sn.pdf((density.x[i] - mu) / sd) / sd;
                }
            }
        }
        normalize_grid(density);

        MarginalSummary summary;
        summary.index = l;
        summary.name = names[static_cast<std::size_t>(l)];
        summary.mean = grid_mean(density);
        summary.sd = std::sqrt(grid_variance(density));
        summary.skewness = grid_skewness(density);
        summary.density = std::move(density);
        report.marginals[static_cast<std::size_t>(l)] = std::move(summary);
    }
    return report;
}

inline FitReport fit_inla(const LatentModel& model, const Dataset& data, Strategy strategy,
                          const InlaOptions& opts = {}) {
    const auto issues = validate_model(model, data);
    if (!issues.empty()) {
        throw DomainError("fit_inla: invalid model: " + issues.front().where + ": " +
                          issues.front().message);
    }
    double stage1 = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    const ThetaGrid grid = detail::explore_impl(model, data, opts, &stage1);
    const auto t1 = std::chrono::steady_clock::now();
    FitReport report = latent_marginals(model, data, grid, strategy, opts);
    const auto t2 = std::chrono::steady_clock::now();
    report.stage1_seconds = stage1;
    report.stage2_seconds = std::chrono::duration<double>(t1 - t0).count() - stage1;
    report.stage3_seconds = std::chrono::duration<double>(t2 - t1).count();
    return report;
}

// CSV export of every component's marginal density, long format.
inline void write_marginals_csv(std::ostream& os, const FitReport& report) {
    os << "component,abscissa,density\n";
    char buffer[96];
    for (const auto& summary : report.marginals) {
        for (int i = 0; i < summary.density.x.size(); ++i) {
            std::snprintf(buffer, sizeof(buffer), "%.17g,%.17g", summary.density.x[i],
                          summary.density.pdf[i]);
            os << summary.name << ',' << buffer << '\n';
        }
    }
}

} // namespace skewlap
