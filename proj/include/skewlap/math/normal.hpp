#pragma once

// Standard normal pdf/cdf/quantile with log-scale tail handling.

#include <cmath>
#include <limits>

#include "skewlap/errors.hpp"

namespace skewlap::math {

inline constexpr double kLog2Pi = 1.8378770664093454836;
inline constexpr double kSqrt2 = 1.4142135623730950488;
inline constexpr double kSqrt2Pi = 2.5066282746310005024;

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / kSqrt2Pi; }

inline double norm_logpdf(double x) { return -0.5 * (x * x + kLog2Pi); }

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

// log Phi(x), accurate far into the left tail. erfc stays normal down to
// about x = -37; beyond that use the Mills-ratio asymptotic series.
inline double log_norm_cdf(double x) {
    if (x > -8.0) {
        return std::log(norm_cdf(x));
    }
    if (x > -36.0) {
        return std::log(0.5) + std::log(std::erfc(-x / kSqrt2));
    }
    const double z2 = 1.0 / (x * x);
    // Phi(x) = phi(x)/|x| * (1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8 - ...)
    double series = 1.0 + z2 * (-1.0 + z2 * (3.0 + z2 * (-15.0 + z2 * 105.0)));
    return norm_logpdf(x) - std::log(-x) + std::log(series);
}

namespace detail {

// Wichura AS241 (PPND16) rational approximations.
inline double ppnd16(double p) {
    const double q = p - 0.5;
    if (std::abs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        const double num =
            (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                  6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
                1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
              1.3314166789178437745e+2) * r + 3.3871328727963666080e+0);
        const double den =
            (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                  3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
                5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
              4.2313330701600911252e+1) * r + 1.0);
        return q * num / den;
    }
    double r = q < 0.0 ? p : 1.0 - p;
    if (r <= 0.0) {
        return q < 0.0 ? -std::numeric_limits<double>::infinity()
                       : std::numeric_limits<double>::infinity();
    }
    r = std::sqrt(-std::log(r));
    double value;
    if (r <= 5.0) {
        r -= 1.6;
        const double num =
            (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                  2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
                3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
              4.63033784615654529590e+0) * r + 1.42343711074968357734e+0);
        const double den =
            (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                  1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
              2.05319162663775882187e+0) * r + 1.0);
        value = num / den;
    } else {
        r -= 5.0;
        const double num =
            (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                  1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
              5.46378491116411436990e+0) * r + 6.65790464350110377720e+0);
        const double den =
            (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                  1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
              5.99832206555887937690e-1) * r + 1.0);
        value = num / den;
    }
    return q < 0.0 ? -value : value;
}

} // namespace detail

inline double norm_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw DomainError("norm_quantile: p must lie in (0,1)");
    }
    return detail::ppnd16(p);
}

// Quantile from log-probability; handles arguments far below log(DBL_MIN)
// by Newton iteration on log Phi.
inline double norm_quantile_log(double logp) {
    if (!(logp < 0.0)) {
        throw DomainError("norm_quantile_log: log p must be negative");
    }
    if (logp > -690.0) {
        double x = detail::ppnd16(std::exp(logp));
        if (std::isfinite(x)) return x;
    }
    double x = -std::sqrt(-2.0 * logp); // leading-order inversion
    for (int it = 0; it < 60; ++it) {
        const double f = log_norm_cdf(x) - logp;
        // d/dx log Phi = phi/Phi
        const double d = std::exp(norm_logpdf(x) - log_norm_cdf(x));
        const double step = f / d;
        x -= step;
        if (std::abs(step) < 1e-13 * std::max(1.0, std::abs(x))) break;
    }
    return x;
}

} // namespace skewlap::math
