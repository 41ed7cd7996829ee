#pragma once

// Tabulated univariate density on an ascending grid, plus the trapezoid
// helpers used everywhere a marginal is reported or post-processed.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "skewlap/errors.hpp"

namespace skewlap {

struct DensityGrid {
    Eigen::VectorXd x;   // ascending abscissae
    Eigen::VectorXd pdf; // density values, nonnegative
};

inline DensityGrid make_uniform_grid(double center, double half_width, int count) {
    if (count < 2) throw DomainError("density grid needs at least two points");
    if (!(half_width > 0.0)) throw DomainError("density grid needs positive width");
    DensityGrid grid;
    grid.x = Eigen::VectorXd::LinSpaced(count, center - half_width, center + half_width);
    grid.pdf = Eigen::VectorXd::Zero(count);
    return grid;
}

inline double trapezoid(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    if (x.size() != y.size()) throw DimensionMismatch("trapezoid abscissae/ordinate sizes differ");
    double acc = 0.0;
    for (int i = 1; i < x.size(); ++i) {
        acc += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    }
    return acc;
}

inline double grid_mass(const DensityGrid& grid) { return trapezoid(grid.x, grid.pdf); }

inline void normalize_grid(DensityGrid& grid) {
    const double mass = grid_mass(grid);
    if (!(mass > 0.0)) throw DomainError("density grid has no mass to normalize");
    grid.pdf /= mass;
}

inline double grid_mean(const DensityGrid& grid) {
    return trapezoid(grid.x, (grid.x.array() * grid.pdf.array()).matrix()) / grid_mass(grid);
}

inline double grid_variance(const DensityGrid& grid) {
    const double m = grid_mean(grid);
    const Eigen::ArrayXd centered = grid.x.array() - m;
    return trapezoid(grid.x, (centered.square() * grid.pdf.array()).matrix()) / grid_mass(grid);
}

inline double grid_skewness(const DensityGrid& grid) {
    const double m = grid_mean(grid);
    const double v = grid_variance(grid);
    const Eigen::ArrayXd centered = grid.x.array() - m;
    const double third = trapezoid(grid.x, (centered.cube() * grid.pdf.array()).matrix()) / grid_mass(grid);
    return third / std::pow(v, 1.5);
}

inline double grid_quantile(const DensityGrid& grid, double prob) {
    if (!(prob > 0.0 && prob < 1.0)) throw DomainError("grid quantile needs prob in (0, 1)");
    const double mass = grid_mass(grid);
    double acc = 0.0;
    for (int i = 1; i < grid.x.size(); ++i) {
        const double piece = 0.5 * (grid.x[i] - grid.x[i - 1]) * (grid.pdf[i] + grid.pdf[i - 1]);
        if (acc + piece >= prob * mass) {
            const double need = prob * mass - acc;
            // linear density on the cell: invert the quadratic mass function
            const double h = grid.x[i] - grid.x[i - 1];
            const double p0 = grid.pdf[i - 1];
            const double slope = (grid.pdf[i] - p0) / h;
            double t;
            if (std::abs(slope) < 1e-300) {
                t = p0 > 0.0 ? need / p0 : 0.5 * h;
            } else {
                const double disc = p0 * p0 + 2.0 * slope * need;
                t = (std::sqrt(std::max(disc, 0.0)) - p0) / slope;
            }
            return grid.x[i - 1] + std::clamp(t, 0.0, h);
        }
        acc += piece;
    }
    return grid.x[grid.x.size() - 1];
}

inline double interpolate_pdf(const DensityGrid& grid, double x) {
    const int n = static_cast<int>(grid.x.size());
    if (x <= grid.x[0] || x >= grid.x[n - 1]) return 0.0;
    int lo = 0;
    int hi = n - 1;
    while (hi - lo > 1) {
        const int mid = (lo + hi) / 2;
        if (grid.x[mid] <= x) lo = mid; else hi = mid;
    }
    const double t = (x - grid.x[lo]) / (grid.x[hi] - grid.x[lo]);
    return (1.0 - t) * grid.pdf[lo] + t * grid.pdf[hi];
}

inline void write_grid_csv(std::ostream& os, const DensityGrid& grid,
                           const char* x_name = "x", const char* pdf_name = "pdf") {
    os << x_name << ',' << pdf_name << '\n';
    char buffer[64];
    for (int i = 0; i < grid.x.size(); ++i) {
        std::snprintf(buffer, sizeof(buffer), "%.17g,%.17g", grid.x[i], grid.pdf[i]);
        os << buffer << '\n';
    }
}

} // namespace skewlap
