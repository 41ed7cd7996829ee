#pragma once

// Gauss-Legendre and Gauss-Hermite rules, computed on demand and cached per
// node count. Nodes are refined by Newton on the three-term recurrences.

#include <cmath>
#include <cstddef>
#include <map>
#include <mutex>
#include <vector>

#include <Eigen/Dense>

#include "skewlap/errors.hpp"

namespace skewlap::math {

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

namespace detail {

inline QuadratureRule make_gauss_legendre(int n) {
    QuadratureRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const int half = (n + 1) / 2;
    for (int i = 0; i < half; ++i) {
        double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int k = 0; k < n; ++k) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k + 1.0) * z * p1 - k * p2) / (k + 1.0);
            }
            pp = n * (z * p0 - p1) / (z * z - 1.0);
            const double step = p0 / pp;
            z -= step;
            if (std::abs(step) < 1e-15) break;
        }
        rule.nodes[i] = -z;
        rule.nodes[n - 1 - i] = z;
        rule.weights[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        rule.weights[n - 1 - i] = rule.weights[i];
    }
    return rule;
}

// Physicists' Hermite rule for weight exp(-x^2). Starting nodes come from
// the Jacobi-matrix eigenvalues, which stay reliable at large n where the
// classical asymptotic guesses send Newton to the wrong root; a short
// Newton polish on the orthonormal recurrence then restores full precision
// and supplies the derivative needed for the weights.
inline QuadratureRule make_gauss_hermite(int n) {
    QuadratureRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const double pim4 = 0.75112554446494248286; // pi^{-1/4}

    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd subdiag(std::max(n - 1, 0));
    for (int k = 1; k < n; ++k) subdiag[k - 1] = std::sqrt(0.5 * k);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
    eig.computeFromTridiagonal(diag, subdiag, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) {
        throw NonConvergence("gauss-hermite Jacobi eigenvalues did not converge");
    }

    const int half = (n + 1) / 2;
    for (int i = 0; i < half; ++i) {
        double z = eig.eigenvalues()[n - 1 - i]; // eigenvalues sorted ascending
        double p2 = 0.0;
        for (int it = 0; it < 16; ++it) {
            double p1 = pim4;
            p2 = 0.0;
            for (int k = 0; k < n; ++k) {
                const double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / (k + 1.0)) * p2 -
                     std::sqrt(static_cast<double>(k) / (k + 1.0)) * p3;
            }
            const double pp = std::sqrt(2.0 * n) * p2; // derivative of orthonormal H_n
            const double step = p1 / pp;
            z -= step;
            if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(z))) break;
        }
        const double pp = std::sqrt(2.0 * n) * p2;
        rule.nodes[n - 1 - i] = z;
        rule.nodes[i] = -z;
        rule.weights[n - 1 - i] = 2.0 / (pp * pp);
        rule.weights[i] = rule.weights[n - 1 - i];
    }
    if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
    return rule;
}

} // namespace detail

inline const QuadratureRule& gauss_legendre_rule(int n) {
    if (n < 1) throw DomainError("gauss_legendre_rule: n must be positive");
    static std::map<int, QuadratureRule> cache;
    static std::mutex guard;
    std::lock_guard<std::mutex> lock(guard);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, detail::make_gauss_legendre(n)).first;
    return it->second;
}

inline const QuadratureRule& gauss_hermite_rule(int n) {
    if (n < 1) throw DomainError("gauss_hermite_rule: n must be positive");
    static std::map<int, QuadratureRule> cache;
    static std::mutex guard;
    std::lock_guard<std::mutex> lock(guard);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, detail::make_gauss_hermite(n)).first;
    return it->second;
}

// E[fn(X)] for X ~ N(mean, var), by Gauss-Hermite.
template <typename Fn>
double gauss_hermite_expect(const Fn& fn, double mean, double var, int n) {
    const auto& rule = gauss_hermite_rule(n);
    const double scale = std::sqrt(2.0 * var);
    double acc = 0.0;
    for (int k = 0; k < n; ++k) {
        acc += rule.weights[k] * fn(mean + scale * rule.nodes[k]);
    }
    return acc / std::sqrt(M_PI);
}

} // namespace skewlap::math
