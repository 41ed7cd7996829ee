#pragma once

// Gaussian (Laplace) approximation of the latent posterior: second-order
// Taylor sites, safeguarded Newton iteration, Takahashi selected inverse,
// and linear-predictor marginals.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include "skewlap/errors.hpp"
#include "skewlap/model.hpp"

namespace skewlap {

using SparseLLT = Eigen::SimplicialLLT<SparseMat>;

struct TaylorSite {
    Eigen::VectorXd f0;     // expansion point (latent scale, length p)
    Eigen::VectorXd c_diag; // -l_i'' at eta_i, length n
    Eigen::VectorXd b_vec;  // l_i' - l_i'' * eta_i, length n
};

inline TaylorSite taylor_site(const LatentModel& model, const Dataset& data,
                              const Eigen::VectorXd& f0, const Eigen::VectorXd& theta) {
    const int n = model.n();
    if (f0.size() != model.p()) throw DimensionMismatch("taylor_site: f0 has wrong length");
    TaylorSite site;
    site.f0 = f0;
    site.c_diag.resize(n);
    site.b_vec.resize(n);
    const Eigen::VectorXd eta = model.A * f0;
    for (int i = 0; i < n; ++i) {
        const LogLikEval ll = loglik_eval(model.lik, data.y[i], eta[i], theta);
        site.c_diag[i] = -ll.d2;
        site.b_vec[i] = ll.d1 - ll.d2 * eta[i];
    }
    return site;
}

// ---------------------------------------------------------------------------
// Selected inverse (Takahashi recursion on the Cholesky fill pattern)
// ---------------------------------------------------------------------------

class SelectedInverse {
public:
    SelectedInverse() = default;

    // Takes the factorization P Q P^T = L L^T and computes the entries of
    // Q^{-1} on the (filled) pattern of L + L^T.
    explicit SelectedInverse(const SparseLLT& llt) {
        const SparseMat L = llt.matrixL();
        perm_ = llt.permutationP().indices();
        const int p = static_cast<int>(L.rows());
        cols_.resize(p);
        for (int j = 0; j < p; ++j) {
            auto& col = cols_[j];
            for (SparseMat::InnerIterator it(L, j); it; ++it) {
                col.rows.push_back(static_cast<int>(it.row()));
                col.lvals.push_back(it.value());
            }
            col.svals.assign(col.rows.size(), 0.0);
        }
        // backward recursion: S_ij = delta_ij / L_jj^2 - (1/L_jj) sum_k L_kj S_ki
        for (int j = p - 1; j >= 0; --j) {
            auto& col = cols_[j];
            const double ljj = col.lvals[0];
            for (int r = static_cast<int>(col.rows.size()) - 1; r >= 0; --r) {
                const int i = col.rows[r];
                double acc = 0.0;
                for (std::size_t k = 1; k < col.rows.size(); ++k) {
                    acc += col.lvals[k] * lookup(std::max(col.rows[k], i),
                                                 std::min(col.rows[k], i));
                }
                double s = -acc / ljj;
                if (i == j) s += 1.0 / (ljj * ljj);
                col.svals[r] = s;
            }
        }
    }

    bool has(int i, int j) const {
        int a = perm_[i], b = perm_[j];
        if (a < b) std::swap(a, b);
        return find(a, b) >= 0;
    }

    // Q^{-1}(i, j); throws if the pair lies outside the computed pattern.
    double entry(int i, int j) const {
        int a = perm_[i], b = perm_[j];
        if (a < b) std::swap(a, b);
        const int r = find(a, b);
        if (r < 0) throw OutOfRange("SelectedInverse: entry outside factor pattern");
        return cols_[b].svals[r];
    }

    Eigen::VectorXd diagonal() const {
        Eigen::VectorXd d(static_cast<int>(cols_.size()));
        for (int i = 0; i < d.size(); ++i) d[i] = cols_[perm_[i]].svals[0];
        return d;
    }

private:
    struct Column {
        std::vector<int> rows; // ascending, rows[0] == diagonal
        std::vector<double> lvals;
        std::vector<double> svals;
    };

    int find(int a, int b) const { // a >= b: row a within column b
        const auto& rows = cols_[b].rows;
        const auto it = std::lower_bound(rows.begin(), rows.end(), a);
        if (it == rows.end() || *it != a) return -1;
        return static_cast<int>(it - rows.begin());
    }

    double lookup(int a, int b) const { // permuted indices, a >= b
        const int r = find(a, b);
        if (r < 0) throw OutOfRange("SelectedInverse: pattern closure violated");
        return cols_[b].svals[r];
    }

    std::vector<Column> cols_;
    Eigen::VectorXi perm_;
};

// ---------------------------------------------------------------------------
// Gaussian approximation
// ---------------------------------------------------------------------------

struct GaussianApprox {
    Eigen::VectorXd mean;
    SparseMat Q; // A^T C A + Q_theta at the converged site
    std::shared_ptr<SparseLLT> solver;
    double log_det_q = 0.0;
    Eigen::VectorXd theta_at;
    TaylorSite site; // converged Taylor site (c_diag, b_vec at the mean)

    const SelectedInverse& selected_inverse() const {
        if (!sel_) sel_ = std::make_shared<SelectedInverse>(*solver);
        return *sel_;
    }

    void invalidate_cache() { sel_.reset(); }

private:
    mutable std::shared_ptr<SelectedInverse> sel_;
};

inline double log_det_from_llt(const SparseLLT& llt) {
    const SparseMat L = llt.matrixL();
    double acc = 0.0;
    for (int j = 0; j < L.outerSize(); ++j) {
        acc += std::log(SparseMat::InnerIterator(L, j).value());
    }
    return 2.0 * acc;
}

// log p(y, f | theta) up to theta-only constants: sum_i l_i + log N(f; 0, Q_theta^{-1})
// with the normalizing pieces of the prior dropped (they do not depend on f).
inline double joint_latent_logdens(const LatentModel& model, const Dataset& data,
                                   const Eigen::VectorXd& f, const Eigen::VectorXd& theta,
                                   const SparseMat& q_theta) {
    const Eigen::VectorXd eta = model.A * f;
    double acc = 0.0;
    for (int i = 0; i < model.n(); ++i) {
        acc += loglik_eval(model.lik, data.y[i], eta[i], theta).value;
    }
    return acc - 0.5 * f.dot(q_theta * f);
}

struct LaplaceOptions {
    double tol = 1e-8;
    int max_iter = 100;
    std::optional<Eigen::VectorXd> init;
};

// Newton iteration on the latent field with step halving when the proposed
// step lowers the joint log density or the system loses positive
// definiteness. Fill-reducing ordering is analyzed once per pattern.
inline GaussianApprox laplace_fit(const LatentModel& model, const Dataset& data,
                                  const Eigen::VectorXd& theta,
                                  const LaplaceOptions& opts = {}) {
    const int p = model.p();
    const int n = model.n();
    if (data.y.size() != n) throw DimensionMismatch("laplace_fit: data length mismatch");
    const SparseMat q_theta = prior_precision(model, theta);
    const SparseMat at = model.A.transpose(); // column-major n-col view of A^T

    Eigen::VectorXd f = opts.init ? *opts.init : Eigen::VectorXd::Zero(p);
    if (f.size() != p) throw DimensionMismatch("laplace_fit: init has wrong length");

    auto solver = std::make_shared<SparseLLT>();
    bool analyzed = false;

    auto build_system = [&](const Eigen::VectorXd& c) {
        SparseMat C(n, n);
        C.reserve(Eigen::VectorXi::Constant(n, 1));
        for (int i = 0; i < n; ++i) C.insert(i, i) = c[i];
        C.makeCompressed();
        SparseMat Q = SparseMat(at * C * model.A) + q_theta;
        return Q;
    };

    double logdens = joint_latent_logdens(model, data, f, theta, q_theta);
    double grad_norm = std::numeric_limits<double>::infinity();
    bool converged = false;

    for (int iter = 0; iter < opts.max_iter; ++iter) {
        TaylorSite site = taylor_site(model, data, f, theta);
        SparseMat Q = build_system(site.c_diag);
        if (!analyzed) {
            solver->analyzePattern(Q);
            analyzed = true;
        }
        solver->factorize(Q);
        if (solver->info() != Eigen::Success) {
            // Non-concave sites can make the system indefinite away from the
            // mode; drop the offending negative curvature to regain a
            // positive-definite system for this proposal only.
            Eigen::VectorXd clamped = site.c_diag.cwiseMax(0.0);
            Q = build_system(clamped);
            solver->factorize(Q);
            if (solver->info() != Eigen::Success) {
                throw IndefiniteSystem("laplace_fit: system indefinite even after clamping");
            }
        }
        const Eigen::VectorXd rhs = at * site.b_vec;
        const Eigen::VectorXd proposal = solver->solve(rhs);
        const Eigen::VectorXd direction = proposal - f;

        // step halving on the joint log density
        double step = 1.0;
        Eigen::VectorXd f_new;
        double ld_new = -std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int h = 0; h <= 20; ++h) {
            f_new = f + step * direction;
            ld_new = joint_latent_logdens(model, data, f_new, theta, q_theta);
            if (std::isfinite(ld_new) && ld_new >= logdens - 1e-10 * (1.0 + std::abs(logdens))) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            throw NonConvergence("laplace_fit: step halving exhausted at iteration " +
                                 std::to_string(iter));
        }
        const double move = (f_new - f).lpNorm<Eigen::Infinity>();
        f = f_new;
        logdens = ld_new;

        // gradient of log p(f | y, theta)
        const Eigen::VectorXd eta = model.A * f;
        Eigen::VectorXd d1(n);
        for (int i = 0; i < n; ++i) d1[i] = loglik_eval(model.lik, data.y[i], eta[i], theta).d1;
        grad_norm = (at * d1 - q_theta * f).lpNorm<Eigen::Infinity>();

        if (move < opts.tol && grad_norm <= 10.0 * opts.tol) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw NonConvergence("laplace_fit: no convergence after " +
                             std::to_string(opts.max_iter) + " iterations (grad " +
                             std::to_string(grad_norm) + ")");
    }

    GaussianApprox out;
    out.site = taylor_site(model, data, f, theta);
    SparseMat Q = build_system(out.site.c_diag);
    solver->factorize(Q);
    if (solver->info() != Eigen::Success) {
        throw IndefiniteSystem("laplace_fit: posterior precision indefinite at the mode");
    }
    out.mean = f;
    out.Q = Q;
    out.solver = solver;
    out.log_det_q = log_det_from_llt(*solver);
    out.theta_at = theta;
    return out;
}

// ---------------------------------------------------------------------------
// Marginals of linear combinations
// ---------------------------------------------------------------------------

struct EtaMarginal {
    double mean = 0.0;
    double var = 0.0;
};

// Mean and variance of eta_i = A_i f under the approximation. Uses selected
// inverse entries when the row support lies inside the factor pattern;
// otherwise falls back to a sparse solve.
inline EtaMarginal eta_marginal(const LatentModel& model, const GaussianApprox& approx,
                                int i) {
    if (i < 0 || i >= model.n()) throw OutOfRange("eta_marginal: row index out of range");
    EtaMarginal out;
    std::vector<int> idx;
    std::vector<double> val;
    for (SparseRowMat::InnerIterator it(model.A, i); it; ++it) {
        idx.push_back(static_cast<int>(it.col()));
        val.push_back(it.value());
        out.mean += it.value() * approx.mean[it.col()];
    }
    const auto& sel = approx.selected_inverse();
    bool in_pattern = true;
    for (std::size_t a = 0; a < idx.size() && in_pattern; ++a) {
        for (std::size_t b = a; b < idx.size() && in_pattern; ++b) {
            in_pattern = sel.has(idx[a], idx[b]);
        }
    }
    if (in_pattern) {
        for (std::size_t a = 0; a < idx.size(); ++a) {
            for (std::size_t b = 0; b < idx.size(); ++b) {
                out.var += val[a] * val[b] * sel.entry(idx[a], idx[b]);
            }
        }
    } else {
        Eigen::VectorXd a = Eigen::VectorXd::Zero(model.p());
        for (std::size_t k = 0; k < idx.size(); ++k) a[idx[k]] = val[k];
        out.var = a.dot(approx.solver->solve(a));
    }
    if (out.var < 0.0) out.var = 0.0;
    return out;
}

// Dense covariance block of Q^{-1} over the given indices (order preserved).
inline Eigen::MatrixXd covariance_block(const GaussianApprox& approx,
                                        const std::vector<int>& indices) {
    const int m = static_cast<int>(indices.size());
    const int p = static_cast<int>(approx.mean.size());
    Eigen::MatrixXd out(m, m);
    const auto& sel = approx.selected_inverse();
    bool in_pattern = true;
    for (int a = 0; a < m && in_pattern; ++a) {
        for (int b = a; b < m && in_pattern; ++b) {
            in_pattern = sel.has(indices[a], indices[b]);
        }
    }
    if (in_pattern) {
        for (int a = 0; a < m; ++a) {
            for (int b = 0; b < m; ++b) out(a, b) = sel.entry(indices[a], indices[b]);
        }
        return out;
    }
    for (int b = 0; b < m; ++b) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(p);
        e[indices[b]] = 1.0;
        const Eigen::VectorXd col = approx.solver->solve(e);
        for (int a = 0; a < m; ++a) out(a, b) = col[indices[a]];
    }
    out = 0.5 * (out + out.transpose().eval()); // symmetrize solve round-off
    return out;
}

// Full dense covariance via p sparse solves; guarded by the dense limit.
inline Eigen::MatrixXd dense_covariance(const GaussianApprox& approx, int dense_limit) {
    const int p = static_cast<int>(approx.mean.size());
    if (p > dense_limit) {
        throw DenseLimitExceeded("dense_covariance: p = " + std::to_string(p) +
                                 " exceeds dense limit " + std::to_string(dense_limit));
    }
    Eigen::MatrixXd cov(p, p);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(p);
    for (int j = 0; j < p; ++j) {
        e[j] = 1.0;
        cov.col(j) = approx.solver->solve(e);
        e[j] = 0.0;
    }
    cov = 0.5 * (cov + cov.transpose().eval());
    return cov;
}

// Applies Q^{-1/2} in the Cholesky sense: returns P^{-1} L^{-T} eps, whose
// covariance is Q^{-1}. Used by samplers and the MCMC preconditioner.
inline Eigen::VectorXd half_solve(const GaussianApprox& approx, const Eigen::VectorXd& eps) {
    const Eigen::VectorXd x = approx.solver->matrixU().solve(eps);
    return approx.solver->permutationPinv() * x;
}

// Wraps an externally supplied (mean, precision) pair as a GaussianApprox,
// e.g. after a variational moment correction replaces the Laplace fit.
inline GaussianApprox make_gaussian_approx(const Eigen::VectorXd& mean, const SparseMat& Q,
                                           const Eigen::VectorXd& theta) {
    if (mean.size() != Q.rows() || Q.rows() != Q.cols()) {
        throw DimensionMismatch("make_gaussian_approx: mean and precision sizes disagree");
    }
    GaussianApprox approx;
    approx.mean = mean;
    approx.Q = Q;
    approx.solver = std::make_shared<SparseLLT>();
    approx.solver->compute(Q);
    if (approx.solver->info() != Eigen::Success) {
        throw CholeskyFailure("make_gaussian_approx: precision is not positive definite");
    }
    approx.log_det_q = log_det_from_llt(*approx.solver);
    approx.theta_at = theta;
    return approx;
}

} // namespace skewlap
