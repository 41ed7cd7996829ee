#pragma once

// Deterministic ground truth for one- and two-dimensional latent posteriors:
// the unnormalized log posterior on a dense grid around the Laplace fit,
// normalized by trapezoid integration.

#include <Eigen/Core>
#include <cmath>

#include "skewlap/density_grid.hpp"
#include "skewlap/errors.hpp"
#include "skewlap/gaussian.hpp"
#include "skewlap/model.hpp"

namespace skewlap {

namespace detail {

inline double latent_log_posterior(const LatentModel& model, const Dataset& data,
                                   const Eigen::VectorXd& theta, const SparseMat& q,
                                   const Eigen::VectorXd& f) {
    double acc = -0.5 * f.dot(q * f);
    const Eigen::VectorXd eta = model.A * f;
    for (int i = 0; i < model.n(); ++i) {
        const double ll = loglik_eval(model.lik, data.y[i], eta[i], theta).value;
        if (!std::isfinite(ll)) return -std::numeric_limits<double>::infinity();
        acc += ll;
    }
    return acc;
}

} // namespace detail

inline DensityGrid exact_posterior_quadrature(const LatentModel& model, const Dataset& data,
                                              const Eigen::VectorXd& theta, int count = 4001,
                                              double half_width_sd = 10.0) {
    if (model.p() != 1) throw DomainError("exact_posterior_quadrature: latent dimension must be 1");
    const auto approx = laplace_fit(model, data, theta);
    const double sd = std::sqrt(approx.selected_inverse().entry(0, 0));
    const SparseMat q = prior_precision(model, theta);
    DensityGrid grid = make_uniform_grid(approx.mean[0], half_width_sd * sd, count);
    Eigen::VectorXd f(1);
    for (int t = 0; t < count; ++t) {
        f[0] = grid.x[t];
        grid.pdf[t] = detail::latent_log_posterior(model, data, theta, q, f);
    }
    const double top = grid.pdf.maxCoeff();
    for (int t = 0; t < count; ++t) grid.pdf[t] = std::exp(grid.pdf[t] - top);
    normalize_grid(grid);
    return grid;
}

struct QuadratureTable {
    Eigen::VectorXd x; // first latent coordinate
    Eigen::VectorXd y; // second latent coordinate
    Eigen::MatrixXd density; // density(i, j) at (x[i], y[j]), integrates to 1
};

inline QuadratureTable exact_posterior_quadrature_2d(const LatentModel& model,
                                                     const Dataset& data,
                                                     const Eigen::VectorXd& theta,
                                                     int count = 801,
                                                     double half_width_sd = 8.0) {
    if (model.p() != 2) throw DomainError("exact_posterior_quadrature_2d: latent dimension must be 2");
    if (count < 3) throw DomainError("exact_posterior_quadrature_2d: grid too coarse");
    const auto approx = laplace_fit(model, data, theta);
    const auto& sel = approx.selected_inverse();
    const SparseMat q = prior_precision(model, theta);

    QuadratureTable table;
    table.x.resize(count);
    table.y.resize(count);
    for (int axis = 0; axis < 2; ++axis) {
        const double sd = std::sqrt(sel.entry(axis, axis));
        const double lo = approx.mean[axis] - half_width_sd * sd;
        const double step = 2.0 * half_width_sd * sd / (count - 1);
        for (int t = 0; t < count; ++t) {
            (axis == 0 ? table.x : table.y)[t] = lo + step * t;
        }
    }

    table.density.resize(count, count);
    Eigen::VectorXd f(2);
    for (int i = 0; i < count; ++i) {
        f[0] = table.x[i];
        for (int j = 0; j < count; ++j) {
            f[1] = table.y[j];
            table.density(i, j) = detail::latent_log_posterior(model, data, theta, q, f);
        }
    }
    const double top = table.density.maxCoeff();
    table.density = (table.density.array() - top).exp();

    // trapezoid mass over the uniform grid
    const double hx = table.x[1] - table.x[0];
    const double hy = table.y[1] - table.y[0];
    double mass = 0.0;
    for (int i = 0; i < count; ++i) {
        const double wi = (i == 0 || i == count - 1) ? 0.5 : 1.0;
        for (int j = 0; j < count; ++j) {
            const double wj = (j == 0 || j == count - 1) ? 0.5 : 1.0;
            mass += wi * wj * table.density(i, j);
        }
    }
    mass *= hx * hy;
    table.density /= mass;
    return table;
}

// integrates the other coordinate away; axis 0 keeps x, axis 1 keeps y
inline DensityGrid quadrature_marginal(const QuadratureTable& table, int axis) {
    if (axis != 0 && axis != 1) throw DomainError("quadrature_marginal: axis must be 0 or 1");
    const Eigen::VectorXd& keep = axis == 0 ? table.x : table.y;
    const Eigen::VectorXd& drop = axis == 0 ? table.y : table.x;
    DensityGrid grid;
    grid.x = keep;
    grid.pdf.resize(keep.size());
    for (int t = 0; t < keep.size(); ++t) {
        Eigen::VectorXd slice;
        if (axis == 0) {
            slice = table.density.row(t).transpose();
        } else {
            slice = table.density.col(t);
        }
        grid.pdf[t] = trapezoid(drop, slice);
    }
    normalize_grid(grid);
    return grid;
}

} // namespace skewlap
