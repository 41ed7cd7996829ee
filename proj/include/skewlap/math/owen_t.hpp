#pragma once

// Owen's T function T(h, a) = 1/(2 pi) * int_0^a exp(-h^2 (1+x^2)/2) / (1+x^2) dx.
// Reduction to a in [0, 1] plus fixed Gauss-Legendre quadrature of the
// (analytic) integrand; good to ~1e-15 absolute.

#include <cmath>

#include "skewlap/math/normal.hpp"
#include "skewlap/math/quadrature.hpp"

namespace skewlap::math {

namespace detail {

// integral over [0, a] with 0 <= a <= 1, h >= 0
inline double owen_t_core(double h, double a) {
    const auto& gl = gauss_legendre_rule(48);
    const double half = 0.5 * a;
    double acc = 0.0;
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
        const double x = half * (gl.nodes[i] + 1.0);
        const double t = 1.0 + x * x;
        acc += gl.weights[i] * std::exp(-0.5 * h * h * t) / t;
    }
    return acc * half / (2.0 * M_PI);
}

} // namespace detail

inline double owen_t(double h, double a) {
    h = std::abs(h); // T is even in h
    const double sign = a < 0.0 ? -1.0 : 1.0;
    a = std::abs(a);
    if (a == 0.0) return 0.0;
    double value;
    if (a <= 1.0) {
        value = detail::owen_t_core(h, a);
    } else {
        // T(h,a) = Phi(h)/2 + Phi(ah)/2 - Phi(h) Phi(ah) - T(ah, 1/a), written
        // with complement probabilities so the lead terms cannot cancel away
        // once Phi saturates to 1
        const double u = norm_cdf(-h);
        const double v = norm_cdf(-a * h);
        value = 0.5 * (u + v) - u * v - detail::owen_t_core(a * h, 1.0 / a);
    }
    return sign * value;
}

} // namespace skewlap::math
