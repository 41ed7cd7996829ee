#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "skewlap/errors.hpp"

namespace skewlap::math {

struct ScalarMinResult {
    double x = 0.0;
    double value = 0.0;
    int evaluations = 0;
};

// Brent's bounded scalar minimization over [a, b].
template <typename Fn>
ScalarMinResult brent_minimize(const Fn& fn, double a, double b, double xtol = 1e-6,
                               int max_iter = 200) {
    const double golden = 0.3819660112501051;
    const double eps_seq = 1e-11;
    double x = a + golden * (b - a);
    double w = x, v = x;
    int evals = 0;
    double fx = fn(x);
    ++evals;
    double fw = fx, fv = fx;
    double d = 0.0, e = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        const double xm = 0.5 * (a + b);
        const double tol1 = xtol * std::abs(x) + eps_seq;
        const double tol2 = 2.0 * tol1;
        if (std::abs(x - xm) <= tol2 - 0.5 * (b - a)) break;
        bool use_golden = true;
        if (std::abs(e) > tol1) {
            // trial parabolic fit
            const double r = (x - w) * (fx - fv);
            double q = (x - v) * (fx - fw);
            double p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if (q > 0.0) p = -p;
            q = std::abs(q);
            const double etmp = e;
            e = d;
            if (std::abs(p) < std::abs(0.5 * q * etmp) && p > q * (a - x) && p < q * (b - x)) {
                d = p / q;
                const double u = x + d;
                if (u - a < tol2 || b - u < tol2) d = (xm - x >= 0 ? tol1 : -tol1);
                use_golden = false;
            }
        }
        if (use_golden) {
            e = (x >= xm) ? a - x : b - x;
            d = golden * e;
        }
        const double u = (std::abs(d) >= tol1) ? x + d : x + (d >= 0 ? tol1 : -tol1);
        const double fu = fn(u);
        ++evals;
        if (fu <= fx) {
            if (u >= x) a = x; else b = x;
            v = w; w = x; x = u;
            fv = fw; fw = fx; fx = fu;
        } else {
            if (u < x) a = u; else b = u;
            if (fu <= fw || w == x) {
                v = w; w = u; fv = fw; fw = fu;
            } else if (fu <= fv || v == x || v == w) {
                v = u; fv = fu;
            }
        }
    }
    return {x, fx, evals};
}

struct BfgsOptions {
    double grad_tol = 1e-6; // infinity norm
    int max_iter = 200;
    int max_line_search = 40;
};

struct BfgsResult {
    Eigen::VectorXd x;
    double value = 0.0;
    Eigen::VectorXd gradient;
    int iterations = 0;
    bool converged = false;
};

// Objective callback: value = fn(x, &grad). May throw CholeskyFailure at
// infeasible trial points; the line search treats that as +infinity.
using ObjectiveWithGrad = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

// Optional per-iterate observer (iteration, x, value, grad inf-norm).
using IterateObserver = std::function<void(int, const Eigen::VectorXd&, double, double)>;

inline BfgsResult bfgs_minimize(const ObjectiveWithGrad& fn, const Eigen::VectorXd& x0,
                                const BfgsOptions& opts = {},
                                const IterateObserver& observer = nullptr) {
    const auto n = x0.size();
    BfgsResult res;
    res.x = x0;
    Eigen::VectorXd g(n);
    res.value = fn(res.x, g);
    res.gradient = g;
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n); // inverse Hessian approximation
    if (observer) observer(0, res.x, res.value, g.lpNorm<Eigen::Infinity>());
    for (int it = 0; it < opts.max_iter; ++it) {
        if (g.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
            res.converged = true;
            break;
        }
        Eigen::VectorXd p = -(H * g);
        double descent = g.dot(p);
        if (!(descent < 0.0)) { // reset to steepest descent
            H.setIdentity();
            p = -g;
            descent = g.dot(p);
        }
        // Armijo backtracking
        double step = 1.0;
        double f_new = std::numeric_limits<double>::infinity();
        Eigen::VectorXd x_new, g_new(n);
        bool ok = false;
        for (int ls = 0; ls < opts.max_line_search; ++ls) {
            x_new = res.x + step * p;
            try {
                f_new = fn(x_new, g_new);
            } catch (const CholeskyFailure&) {
                step *= 0.5;
                continue;
            }
            if (std::isfinite(f_new) && f_new <= res.value + 1e-4 * step * descent) {
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if (!ok) break; // no usable step; stationary for our purposes
        const Eigen::VectorXd s = x_new - res.x;
        const Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
            H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) +
                rho * s * s.transpose();
        }
        res.x = x_new;
        res.value = f_new;
        g = g_new;
        res.gradient = g;
        res.iterations = it + 1;
        if (observer) observer(it + 1, res.x, res.value, g.lpNorm<Eigen::Infinity>());
    }
    if (!res.converged && res.gradient.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
        res.converged = true;
    }
    return res;
}

struct NelderMeadResult {
    Eigen::VectorXd x;
    double value = 0.0;
    int iterations = 0;
};

// Derivative-free simplex minimization; used for hyperparameter mode search.
template <typename Fn>
NelderMeadResult nelder_mead(const Fn& fn, const Eigen::VectorXd& x0, double scale = 1.0,
                             double ftol = 1e-10, int max_iter = 2000) {
    const int n = static_cast<int>(x0.size());
    std::vector<Eigen::VectorXd> simplex(n + 1, x0);
    std::vector<double> fval(n + 1);
    for (int i = 0; i < n; ++i) simplex[i + 1][i] += scale;
    for (int i = 0; i <= n; ++i) fval[i] = fn(simplex[i]);
    int iters = 0;
    for (; iters < max_iter; ++iters) {
        // order
        std::vector<int> idx(n + 1);
        for (int i = 0; i <= n; ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fval[a] < fval[b]; });
        std::vector<Eigen::VectorXd> s2;
        std::vector<double> f2;
        for (int i = 0; i <= n; ++i) { s2.push_back(simplex[idx[i]]); f2.push_back(fval[idx[i]]); }
        simplex = s2; fval = f2;
        if (std::abs(fval[n] - fval[0]) < ftol * (std::abs(fval[0]) + ftol)) break;
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < n; ++i) centroid += simplex[i];
        centroid /= n;
        const Eigen::VectorXd xr = centroid + (centroid - simplex[n]);
        const double fr = fn(xr);
        if (fr < fval[0]) {
            const Eigen::VectorXd xe = centroid + 2.0 * (centroid - simplex[n]);
            const double fe = fn(xe);
            if (fe < fr) { simplex[n] = xe; fval[n] = fe; }
            else { simplex[n] = xr; fval[n] = fr; }
        } else if (fr < fval[n - 1]) {
            simplex[n] = xr; fval[n] = fr;
        } else {
            const Eigen::VectorXd xc = centroid + 0.5 * (simplex[n] - centroid);
            const double fc = fn(xc);
            if (fc < fval[n]) { simplex[n] = xc; fval[n] = fc; }
            else {
                for (int i = 1; i <= n; ++i) {
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0]);
                    fval[i] = fn(simplex[i]);
                }
            }
        }
    }
    NelderMeadResult res;
    res.x = simplex[0];
    res.value = fval[0];
    res.iterations = iters;
    return res;
}

} // namespace skewlap::math
