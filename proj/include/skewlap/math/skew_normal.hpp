#pragma once

// Standardized skew-normal utilities: the unique skew-normal with mean zero
// and unit variance at a given standardized skewness, with CDF and quantile
// evaluation that stays accurate in the light tail, and the monotone
// Gaussian-to-skew-normal quantile transform used by the copula machinery.

#include <algorithm>
#include <cmath>

#include "skewlap/errors.hpp"
#include "skewlap/math/normal.hpp"
#include "skewlap/math/owen_t.hpp"
#include "skewlap/math/quadrature.hpp"

namespace skewlap::math {

// Supremum of the standardized skewness as the shape parameter grows.
inline double skew_normal_max_skewness() {
    const double m2 = 2.0 / M_PI;
    return 0.5 * (4.0 - M_PI) * m2 * std::sqrt(m2) / std::pow(1.0 - m2, 1.5);
}

namespace detail {

inline double skewness_from_delta(double d) {
    const double m = d * std::sqrt(2.0 / M_PI);
    return 0.5 * (4.0 - M_PI) * m * m * m / std::pow(1.0 - m * m, 1.5);
}

// log density of the shape-parameter skew-normal 2 phi(z) Phi(alpha z)
inline double sn_shape_logpdf(double z, double alpha) {
    return std::log(2.0) + norm_logpdf(z) + log_norm_cdf(alpha * z);
}

// Tail evaluation of log F(z; alpha) for z < 0 by integrating the density
// leftward from z, scaled by the local decay rate so a fixed quadrature
// grid resolves the exponential falloff.
inline double sn_shape_log_cdf_tail(double z, double alpha) {
    const double mills = std::exp(norm_logpdf(alpha * z) - log_norm_cdf(alpha * z));
    const double lambda = std::max(-z + alpha * mills, 1.0);
    const double logf0 = sn_shape_logpdf(z, alpha);
    const auto& gl = gauss_legendre_rule(48);
    const double breaks[3] = {0.0, 10.0, 50.0};
    double acc = 0.0;
    for (int seg = 0; seg < 2; ++seg) {
        const double a = breaks[seg];
        const double b = breaks[seg + 1];
        for (std::size_t k = 0; k < gl.nodes.size(); ++k) {
            const double u = 0.5 * (a + b) + 0.5 * (b - a) * gl.nodes[k];
            const double w = 0.5 * (b - a) * gl.weights[k];
            acc += w * std::exp(sn_shape_logpdf(z - u / lambda, alpha) - logf0);
        }
    }
    return logf0 - std::log(lambda) + std::log(acc);
}

// log CDF of the shape-parameter skew-normal, accurate on both sides. The
// closed form Phi(z) - 2 T(z, alpha) cancels catastrophically in the light
// tail, so the integral path takes over once the direct value loses digits.
inline double sn_shape_log_cdf(double z, double alpha) {
    if (alpha == 0.0) return log_norm_cdf(z);
    if (z >= 0.0) {
        const double f = norm_cdf(z) - 2.0 * owen_t(z, alpha);
        return std::log(std::clamp(f, 1e-300, 1.0));
    }
    if (z > -20.0) {
        const double f = norm_cdf(z) - 2.0 * owen_t(z, alpha);
        if (f > 1e-2 * norm_cdf(z)) return std::log(f);
    }
    return sn_shape_log_cdf_tail(z, alpha);
}

// Solve F(z; alpha) = exp(log_u) for the lower half (log_u <= log 1/2),
// Newton on the log CDF with a maintained bisection bracket.
inline double sn_shape_quantile_lower(double log_u, double alpha) {
    double x = norm_quantile_log(log_u);
    if (alpha > 0.0 && x < -5.0) x /= std::sqrt(1.0 + alpha * alpha);
    double h = sn_shape_log_cdf(x, alpha) - log_u;
    double lo, hi;
    double step = 1.0;
    if (h >= 0.0) {
        hi = x;
        lo = x - step;
        while (sn_shape_log_cdf(lo, alpha) - log_u > 0.0) {
            hi = lo;
            step *= 2.0;
            lo -= step;
            if (step > 1e8) throw NonConvergence("skew-normal quantile bracket (lower)");
        }
    } else {
        lo = x;
        hi = x + step;
        while (sn_shape_log_cdf(hi, alpha) - log_u < 0.0) {
            lo = hi;
            step *= 2.0;
            hi += step;
            if (step > 1e8) throw NonConvergence("skew-normal quantile bracket (upper)");
        }
    }
    x = 0.5 * (lo + hi);
    for (int it = 0; it < 300; ++it) {
        const double logF = sn_shape_log_cdf(x, alpha);
        h = logF - log_u;
        if (std::abs(h) <= 1e-15 * std::max(1.0, std::abs(log_u))) return x;
        if (h > 0.0) hi = x; else lo = x;
        const double slope = std::exp(sn_shape_logpdf(x, alpha) - logF);
        double next = x - h / slope;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        const double move = std::abs(next - x);
        x = next;
        if (move <= 1e-15 * std::max(1.0, std::abs(x))) return x;
    }
    if (std::abs(h) <= 1e-8 * std::max(1.0, std::abs(log_u))) return x;
    throw NonConvergence("skew-normal quantile did not converge");
}

} // namespace detail

inline double shape_to_skewness(double alpha) {
    return detail::skewness_from_delta(alpha / std::sqrt(1.0 + alpha * alpha));
}

// Unique shape parameter with the given standardized skewness, by bisection
// on delta = alpha / sqrt(1 + alpha^2) where the relation is monotone.
inline double skewness_to_shape(double s) {
    if (!(std::abs(s) < skew_normal_max_skewness())) {
        throw OutOfRange("skewness outside the admissible skew-normal range");
    }
    if (s == 0.0) return 0.0;
    const double target = std::abs(s);
    double lo = 0.0;
    double hi = 1.0;
    for (int it = 0; it < 120; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (detail::skewness_from_delta(mid) < target) lo = mid; else hi = mid;
    }
    const double d = 0.5 * (lo + hi);
    const double alpha = d / std::sqrt((1.0 - d) * (1.0 + d));
    return s > 0.0 ? alpha : -alpha;
}

// Skew-normal standardized to mean zero and unit variance.
class SkewNormalStd {
public:
    explicit SkewNormalStd(double s) : s_(s), alpha_(skewness_to_shape(s)) {
        const double d = alpha_ / std::sqrt(1.0 + alpha_ * alpha_);
        const double m1 = d * std::sqrt(2.0 / M_PI);
        omega_ = 1.0 / std::sqrt(1.0 - m1 * m1);
        xi0_ = -omega_ * m1;
    }

    double skewness() const { return s_; }
    double shape() const { return alpha_; }
    double location() const { return xi0_; }
    double scale() const { return omega_; }

    double logpdf(double x) const {
        return detail::sn_shape_logpdf((x - xi0_) / omega_, alpha_) - std::log(omega_);
    }
    double pdf(double x) const { return std::exp(logpdf(x)); }

    double log_cdf(double x) const {
        return detail::sn_shape_log_cdf((x - xi0_) / omega_, alpha_);
    }
    double cdf(double x) const { return std::exp(log_cdf(x)); }

    // survival in log scale, via the mirror identity S(x; s) = F(-x; -s)
    double log_sf(double x) const {
        return detail::sn_shape_log_cdf(-(x - xi0_) / omega_, -alpha_);
    }

    // quantile given both tail log-probabilities, solving on whichever side
    // is the lower half so the Newton iteration never needs 1 - u
    double quantile_log(double log_u_lower, double log_u_upper) const {
        if (log_u_lower <= log_u_upper) {
            return xi0_ + omega_ * detail::sn_shape_quantile_lower(log_u_lower, alpha_);
        }
        return -(-xi0_ + omega_ * detail::sn_shape_quantile_lower(log_u_upper, -alpha_));
    }

    double quantile(double u) const {
        if (!(u > 0.0 && u < 1.0)) throw DomainError("quantile needs u in (0, 1)");
        return quantile_log(std::log(u), std::log1p(-u));
    }

private:
    double s_;
    double alpha_;
    double omega_;
    double xi0_;
};

struct SkewMapResult {
    double g = 0.0;       // value of the transform
    double g_prime = 1.0; // derivative, always positive
};

// Monotone quantile transform g(z) = F_SN^{-1}(Phi(z)) from the standard
// Gaussian to the standardized skew-normal, with its derivative.
inline SkewMapResult skew_map(double z, const SkewNormalStd& sn) {
    if (sn.skewness() == 0.0) return {z, 1.0};
    SkewMapResult out;
    out.g = sn.quantile_log(log_norm_cdf(z), log_norm_cdf(-z));
    out.g_prime = std::exp(norm_logpdf(z) - sn.logpdf(out.g));
    return out;
}

inline SkewMapResult skew_map(double z, double s) {
    if (s == 0.0) return {z, 1.0};
    return skew_map(z, SkewNormalStd(s));
}

// Inverse transform g^{-1}(x) = Phi^{-1}(F_SN(x)), in log scale on whichever
// side of the median x falls.
inline double skew_map_inverse(double x, const SkewNormalStd& sn) {
    if (sn.skewness() == 0.0) return x;
    const double log_f = sn.log_cdf(x);
    if (log_f <= std::log(0.5)) return norm_quantile_log(log_f);
    return -norm_quantile_log(sn.log_sf(x));
}

inline double skew_map_inverse(double x, double s) {
    if (s == 0.0) return x;
    return skew_map_inverse(x, SkewNormalStd(s));
}

} // namespace skewlap::math
