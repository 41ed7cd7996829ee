#pragma once

// Low-rank variational corrections on top of a converged Gaussian
// approximation: an additive correction to the latent mean and a diagonal
// correction to the latent precision, both restricted to a small index set.
// The objective in both cases is the variational bound
//   sum_i E[-loglik_i] + KLD(approx family || latent prior),
// evaluated with Gauss-Hermite quadrature over the eta_i marginals.

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "skewlap/errors.hpp"
#include "skewlap/gaussian.hpp"
#include "skewlap/math/optimize.hpp"
#include "skewlap/math/quadrature.hpp"
#include "skewlap/model.hpp"

namespace skewlap {

// Latent components whose mean (b-entries) or precision diagonal is free to
// move; everything outside stays at the Gaussian approximation values.
struct CorrectionIndexSet {
    std::vector<int> indices;
};

inline CorrectionIndexSet default_correction_set(const LatentModel& model) {
    return CorrectionIndexSet{default_component_set(model)};
}

inline void validate_correction_set(const CorrectionIndexSet& set, int p) {
    if (set.indices.empty()) throw DomainError("correction index set is empty");
    std::vector<int> sorted = set.indices;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw DomainError("correction index set contains duplicates");
    }
    if (sorted.front() < 0 || sorted.back() >= p) {
        throw OutOfRange("correction index out of latent range");
    }
}

struct VbOptions {
    int gh_nodes = 15;      // Gauss-Hermite nodes per observation
    double grad_tol = 1e-6; // infinity norm at the optimum
    int max_iter = 200;
};

struct CorrectionTraceRow {
    int iteration = 0;
    double objective = 0.0;
    double grad_norm = 0.0;
    Eigen::VectorXd delta; // restricted to the index set, same order
};
using CorrectionTrace = std::vector<CorrectionTraceRow>;

// CSV export of an optimizer trace for convergence diagnostics.
inline void write_correction_trace_csv(std::ostream& os, const CorrectionTrace& trace,
                                       const std::vector<std::string>& delta_names) {
    os << "iteration,objective,grad_norm";
    for (const auto& name : delta_names) os << ",delta_" << name;
    os << "\n";
    char buf[40];
    const auto fmt = [&buf](double x) {
        std::snprintf(buf, sizeof(buf), "%.17g", x);
        return std::string(buf);
    };
    for (const auto& row : trace) {
        os << row.iteration << "," << fmt(row.objective) << "," << fmt(row.grad_norm);
        for (int k = 0; k < row.delta.size(); ++k) os << "," << fmt(row.delta[k]);
        os << "\n";
    }
}

struct MeanCorrection {
    Eigen::VectorXd delta;          // length p, zero off the index set
    Eigen::VectorXd corrected_mean; // length p
    double objective = 0.0;         // variational objective at the optimum
    int iterations = 0;
};

struct VarCorrection {
    Eigen::VectorXd delta;         // length p, zero off the index set
    SparseMat corrected_precision; // Q_f + diag(delta), SPD
    Eigen::VectorXd latent_var;    // diag of the corrected covariance
    double objective = 0.0;
    int iterations = 0;
};

// Corrected mean from the perturbed normal equations Q_f mu = b_f + delta,
// where b_f = A^T b_vec is the latent-scale right-hand side of the site.
inline Eigen::VectorXd solve_corrected_mean(const LatentModel& model,
                                            const GaussianApprox& approx,
                                            const Eigen::VectorXd& delta) {
    if (delta.size() != model.p()) {
        throw DimensionMismatch("solve_corrected_mean: delta has wrong length");
    }
    const Eigen::VectorXd rhs = model.A.transpose() * approx.site.b_vec + delta;
    return approx.solver->solve(rhs);
}

namespace detail {

// Pieces shared by every objective evaluation at one theta-point.
struct VbContext {
    const LatentModel* model = nullptr;
    const Dataset* data = nullptr;
    const GaussianApprox* approx = nullptr;
    Eigen::VectorXd theta;
    Eigen::VectorXd b_full;   // A^T b_vec
    SparseMat q_theta;
    double log_det_q_theta = 0.0;
    double trace_q_theta = 0.0;  // tr(Q_theta Q_f^{-1}) at delta = 0
    Eigen::VectorXd eta_var0;    // eta marginal variances at delta = 0
    std::vector<int> set;
    int gh_nodes = 15;
};

inline double trace_product(const SparseMat& q_theta, const SelectedInverse& sel,
                            const SparseLLT& llt) {
    double acc = 0.0;
    bool pattern_ok = true;
    for (int j = 0; j < q_theta.outerSize() && pattern_ok; ++j) {
        for (SparseMat::InnerIterator it(q_theta, j); it; ++it) {
            if (!sel.has(static_cast<int>(it.row()), j)) {
                pattern_ok = false;
                break;
            }
            acc += it.value() * sel.entry(static_cast<int>(it.row()), j);
        }
    }
    if (pattern_ok) return acc;
    // Fall back to column solves if the prior pattern ever escapes the factor.
    acc = 0.0;
    const int p = static_cast<int>(q_theta.rows());
    Eigen::VectorXd e = Eigen::VectorXd::Zero(p);
    for (int j = 0; j < p; ++j) {
        e[j] = 1.0;
        const Eigen::VectorXd col = llt.solve(e);
        e[j] = 0.0;
        for (SparseMat::InnerIterator it(q_theta, j); it; ++it) {
            acc += it.value() * col[it.row()];
        }
    }
    return acc;
}

// Marginal variances of eta under precision whose factorization and selected
// inverse are supplied (same pattern argument as eta_marginal).
inline Eigen::VectorXd eta_variances(const SparseRowMat& A, const SelectedInverse& sel,
                                     const SparseLLT& llt) {
    const int n = static_cast<int>(A.rows());
    const int p = static_cast<int>(A.cols());
    Eigen::VectorXd var(n);
    std::vector<int> idx;
    std::vector<double> val;
    for (int i = 0; i < n; ++i) {
        idx.clear();
        val.clear();
        for (SparseRowMat::InnerIterator it(A, i); it; ++it) {
            idx.push_back(static_cast<int>(it.col()));
            val.push_back(it.value());
        }
        bool in_pattern = true;
        for (std::size_t a = 0; a < idx.size() && in_pattern; ++a) {
            for (std::size_t b = a; b < idx.size() && in_pattern; ++b) {
                in_pattern = sel.has(idx[a], idx[b]);
            }
        }
        double v = 0.0;
        if (in_pattern) {
            for (std::size_t a = 0; a < idx.size(); ++a) {
                for (std::size_t b = 0; b < idx.size(); ++b) {
                    v += val[a] * val[b] * sel.entry(idx[a], idx[b]);
                }
            }
        } else {
            Eigen::VectorXd a = Eigen::VectorXd::Zero(p);
            for (std::size_t k = 0; k < idx.size(); ++k) a[idx[k]] = val[k];
            v = a.dot(llt.solve(a));
        }
        var[i] = std::max(v, 0.0);
    }
    return var;
}

inline VbContext make_vb_context(const LatentModel& model, const Dataset& data,
                                 const GaussianApprox& approx,
                                 const CorrectionIndexSet& set, int gh_nodes) {
    validate_correction_set(set, model.p());
    VbContext ctx;
    ctx.model = &model;
    ctx.data = &data;
    ctx.approx = &approx;
    ctx.theta = approx.theta_at;
    ctx.b_full = model.A.transpose() * approx.site.b_vec;
    ctx.q_theta = prior_precision(model, ctx.theta);
    SparseLLT prior_llt(ctx.q_theta);
    if (prior_llt.info() != Eigen::Success) {
        throw CholeskyFailure("latent prior precision is not SPD");
    }
    ctx.log_det_q_theta = log_det_from_llt(prior_llt);
    ctx.trace_q_theta = trace_product(ctx.q_theta, approx.selected_inverse(), *approx.solver);
    ctx.eta_var0 = eta_variances(model.A, approx.selected_inverse(), *approx.solver);
    ctx.set = set.indices;
    ctx.gh_nodes = gh_nodes;
    return ctx;
}

inline Eigen::VectorXd expand_delta(const VbContext& ctx, const Eigen::VectorXd& reduced) {
    Eigen::VectorXd full = Eigen::VectorXd::Zero(ctx.model->p());
    for (std::size_t k = 0; k < ctx.set.size(); ++k) full[ctx.set[k]] = reduced[k];
    return full;
}

// Expected negative log likelihood terms for one observation under
// N(m, v), together with the derivatives of the quadrature sum itself with
// respect to m and v (so optimizer line searches see a consistent gradient).
struct GhMoments {
    double value = 0.0;
    double d_mean = 0.0;
    double d_var = 0.0;
};

inline GhMoments gh_neg_loglik(const LatentModel& model, const Dataset& data, int i,
                               double m, double v, const Eigen::VectorXd& theta,
                               int nodes) {
    const auto& rule = math::gauss_hermite_rule(nodes);
    const double scale = std::sqrt(2.0 * std::max(v, 0.0));
    GhMoments out;
    for (int k = 0; k < nodes; ++k) {
        const double x = rule.nodes[k];
        const LogLikEval ll = loglik_eval(model.lik, data.y[i], m + scale * x, theta);
        const double w = rule.weights[k];
        out.value -= w * ll.value;
        out.d_mean -= w * ll.d1;
        if (scale > 0.0) out.d_var -= w * ll.d1 * x / scale;
    }
    const double inv_sqrt_pi = 1.0 / std::sqrt(M_PI);
    out.value *= inv_sqrt_pi;
    out.d_mean *= inv_sqrt_pi;
    out.d_var *= inv_sqrt_pi;
    return out;
}

// Mean-correction objective and gradient on the reduced coordinates.
inline double mean_objective_impl(const VbContext& ctx, const Eigen::VectorXd& reduced,
                                  Eigen::VectorXd* grad) {
    const LatentModel& model = *ctx.model;
    const Eigen::VectorXd delta = expand_delta(ctx, reduced);
    const Eigen::VectorXd mu = ctx.approx->solver->solve(ctx.b_full + delta);
    const Eigen::VectorXd eta = model.A * mu;
    const int n = model.n();
    double lik = 0.0;
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) {
        const GhMoments gm =
            gh_neg_loglik(model, *ctx.data, i, eta[i], ctx.eta_var0[i], ctx.theta, ctx.gh_nodes);
        lik += gm.value;
        w[i] = gm.d_mean;
    }
    const Eigen::VectorXd q_mu = ctx.q_theta * mu;
    const double kld = 0.5 * (ctx.trace_q_theta + mu.dot(q_mu) - model.p() +
                              ctx.approx->log_det_q - ctx.log_det_q_theta);
    if (grad) {
        const Eigen::VectorXd full =
            ctx.approx->solver->solve(model.A.transpose() * w + q_mu);
        grad->resize(static_cast<int>(ctx.set.size()));
        for (std::size_t k = 0; k < ctx.set.size(); ++k) (*grad)[k] = full[ctx.set[k]];
    }
    return lik + kld;
}

// Variance-correction objective and gradient on the reduced coordinates.
// Factorizes Q_f + diag(delta) per evaluation; throws CholeskyFailure when
// the trial point leaves the SPD domain so the line search can backtrack.
struct VarEvalWorkspace {
    SparseLLT llt;
    bool analyzed = false;
};

inline double var_objective_impl(const VbContext& ctx, const Eigen::VectorXd& mu_corr,
                                 const Eigen::VectorXd& reduced, Eigen::VectorXd* grad,
                                 VarEvalWorkspace& ws, SparseMat* q_out = nullptr,
                                 Eigen::VectorXd* latent_var_out = nullptr) {
    const LatentModel& model = *ctx.model;
    const int p = model.p();
    SparseMat q_corr = ctx.approx->Q;
    for (std::size_t k = 0; k < ctx.set.size(); ++k) {
        q_corr.coeffRef(ctx.set[k], ctx.set[k]) += reduced[k];
    }
    if (!ws.analyzed) {
        ws.llt.analyzePattern(q_corr);
        ws.analyzed = true;
    }
    ws.llt.factorize(q_corr);
    if (ws.llt.info() != Eigen::Success) {
        throw CholeskyFailure("corrected precision is not positive definite");
    }
    const SelectedInverse sel(ws.llt);
    const Eigen::VectorXd eta_var = eta_variances(model.A, sel, ws.llt);
    const Eigen::VectorXd eta = model.A * mu_corr;
    const int n = model.n();
    double lik = 0.0;
    Eigen::VectorXd dvar(n);
    for (int i = 0; i < n; ++i) {
        const GhMoments gm =
            gh_neg_loglik(model, *ctx.data, i, eta[i], eta_var[i], ctx.theta, ctx.gh_nodes);
        lik += gm.value;
        dvar[i] = gm.d_var;
    }
    const double log_det = log_det_from_llt(ws.llt);
    const double trace = trace_product(ctx.q_theta, sel, ws.llt);
    const Eigen::VectorXd q_mu = ctx.q_theta * mu_corr;
    const double kld =
        0.5 * (trace + mu_corr.dot(q_mu) - p + log_det - ctx.log_det_q_theta);
    if (grad) {
        grad->resize(static_cast<int>(ctx.set.size()));
        Eigen::VectorXd e = Eigen::VectorXd::Zero(p);
        for (std::size_t k = 0; k < ctx.set.size(); ++k) {
            const int j = ctx.set[k];
            e[j] = 1.0;
            const Eigen::VectorXd s = ws.llt.solve(e);
            e[j] = 0.0;
            const Eigen::VectorXd a_s = model.A * s;
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc -= dvar[i] * a_s[i] * a_s[i];
            acc += 0.5 * (s[j] - s.dot(ctx.q_theta * s));
            (*grad)[k] = acc;
        }
    }
    if (q_out) *q_out = q_corr;
    if (latent_var_out) *latent_var_out = sel.diagonal();
    return lik + kld;
}

} // namespace detail

// Variational objective for the mean correction at the given full-length
// delta. Includes the delta-free constants so reported values are comparable
// across strategies.
inline double vb_mean_objective(const LatentModel& model, const Dataset& data,
                                const GaussianApprox& approx, const Eigen::VectorXd& delta,
                                const CorrectionIndexSet& set, int gh_nodes = 15) {
    const auto ctx = detail::make_vb_context(model, data, approx, set, gh_nodes);
    Eigen::VectorXd reduced(static_cast<int>(set.indices.size()));
    for (std::size_t k = 0; k < set.indices.size(); ++k) reduced[k] = delta[set.indices[k]];
    return detail::mean_objective_impl(ctx, reduced, nullptr);
}

// Variational objective for the variance correction; mu_corr is held fixed.
inline double vb_var_objective(const LatentModel& model, const Dataset& data,
                               const GaussianApprox& approx, const Eigen::VectorXd& mu_corr,
                               const Eigen::VectorXd& delta, const CorrectionIndexSet& set,
                               int gh_nodes = 15) {
    const auto ctx = detail::make_vb_context(model, data, approx, set, gh_nodes);
    Eigen::VectorXd reduced(static_cast<int>(set.indices.size()));
    for (std::size_t k = 0; k < set.indices.size(); ++k) reduced[k] = delta[set.indices[k]];
    detail::VarEvalWorkspace ws;
    return detail::var_objective_impl(ctx, mu_corr, reduced, nullptr, ws);
}

inline MeanCorrection vb_mean_correct(const LatentModel& model, const Dataset& data,
                                      const GaussianApprox& approx,
                                      const CorrectionIndexSet& set,
                                      const VbOptions& opts = {},
                                      CorrectionTrace* trace = nullptr) {
    const auto ctx = detail::make_vb_context(model, data, approx, set, opts.gh_nodes);
    math::ObjectiveWithGrad fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        return detail::mean_objective_impl(ctx, x, &g);
    };
    math::IterateObserver obs = nullptr;
    if (trace) {
        obs = [trace](int it, const Eigen::VectorXd& x, double f, double gnorm) {
            trace->push_back({it, f, gnorm, x});
        };
    }
    math::BfgsOptions bopts;
    bopts.grad_tol = opts.grad_tol;
    bopts.max_iter = opts.max_iter;
    const auto res = math::bfgs_minimize(
        fn, Eigen::VectorXd::Zero(static_cast<int>(set.indices.size())), bopts, obs);
    if (!res.converged) {
        throw NonConvergence("vb mean correction did not reach gradient tolerance");
    }
    MeanCorrection out;
    out.delta = detail::expand_delta(ctx, res.x);
    out.corrected_mean = solve_corrected_mean(model, approx, out.delta);
    out.objective = res.value;
    out.iterations = res.iterations;
    return out;
}

inline VarCorrection vb_var_correct(const LatentModel& model, const Dataset& data,
                                    const GaussianApprox& approx,
                                    const MeanCorrection& mean_corr,
                                    const CorrectionIndexSet& set,
                                    const VbOptions& opts = {},
                                    CorrectionTrace* trace = nullptr) {
    const auto ctx = detail::make_vb_context(model, data, approx, set, opts.gh_nodes);
    detail::VarEvalWorkspace ws;
    math::ObjectiveWithGrad fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        return detail::var_objective_impl(ctx, mean_corr.corrected_mean, x, &g, ws);
    };
    math::IterateObserver obs = nullptr;
    if (trace) {
        obs = [trace](int it, const Eigen::VectorXd& x, double f, double gnorm) {
            trace->push_back({it, f, gnorm, x});
        };
    }
    math::BfgsOptions bopts;
    bopts.grad_tol = opts.grad_tol;
    bopts.max_iter = opts.max_iter;
    const auto res = math::bfgs_minimize(
        fn, Eigen::VectorXd::Zero(static_cast<int>(set.indices.size())), bopts, obs);
    if (!res.converged) {
        throw NonConvergence("vb variance correction did not reach gradient tolerance");
    }
    VarCorrection out;
    out.delta = detail::expand_delta(ctx, res.x);
    Eigen::VectorXd unused_grad;
    out.objective = detail::var_objective_impl(ctx, mean_corr.corrected_mean, res.x, nullptr,
                                               ws, &out.corrected_precision, &out.latent_var);
    out.iterations = res.iterations;
    return out;
}

} // namespace skewlap
