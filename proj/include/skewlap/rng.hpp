#pragma once

// Counter-based splittable RNG. Every stream is identified by (seed, path of
// substream labels); draws depend only on the stream identity and a counter,
// so parallel or reordered consumers see identical sequences. Normal draws
// go through the inverse CDF to stay bit-reproducible across platforms.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "skewlap/errors.hpp"
#include "skewlap/math/normal.hpp"

namespace skewlap {

namespace detail {

inline std::uint64_t splitmix_finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xCBF29CE484222325ULL) {
    for (const char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace detail

class RngStream {
public:
    explicit RngStream(std::uint64_t seed)
        : key_(detail::splitmix_finalize(seed ^ 0x6A09E667F3BCC908ULL)) {}

    RngStream substream(std::string_view label) const {
        RngStream child(*this);
        child.key_ = detail::splitmix_finalize(key_ ^ detail::fnv1a(label));
        child.counter_ = 0;
        return child;
    }

    RngStream substream(std::string_view label, std::uint64_t index) const {
        RngStream child = substream(label);
        child.key_ = detail::splitmix_finalize(child.key_ + 0x9E3779B97F4A7C15ULL * (index + 1));
        return child;
    }

    std::uint64_t next_u64() {
        counter_ += 0x9E3779B97F4A7C15ULL;
        return detail::splitmix_finalize(key_ ^ counter_);
    }

    // uniform on the open interval (0, 1)
    double u01() {
        const std::uint64_t bits = next_u64() >> 11;
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

    double normal() { return math::norm_quantile(u01()); }

    double exponential() { return -std::log(u01()); }

    int bernoulli(double p) { return u01() < p ? 1 : 0; }

    // Knuth's product-of-uniforms method; adequate for the moderate rates
    // used in the bundled experiments.
    int poisson(double lambda) {
        if (!(lambda >= 0.0)) throw DomainError("poisson rate must be non-negative");
        const double limit = std::exp(-lambda);
        int k = 0;
        double prod = 1.0;
        do {
            prod *= u01();
            if (prod <= limit) break;
            ++k;
        } while (k < 100000000);
        return k;
    }

    int binomial(int trials, double p) {
        int k = 0;
        for (int i = 0; i < trials; ++i) k += bernoulli(p);
        return k;
    }

    // chi-square as a sum of squared normals keeps the draw reproducible
    // for the integer degrees of freedom the experiments use.
    double chi_square(int dof) {
        if (dof < 1) throw DomainError("chi-square needs dof >= 1");
        double acc = 0.0;
        for (int i = 0; i < dof; ++i) {
            const double z = normal();
            acc += z * z;
        }
        return acc;
    }

    double student_t(int dof) { return normal() / std::sqrt(chi_square(dof) / dof); }

    // Generalized Pareto with scale sigma and shape xi > 0, by inverse CDF.
    double gpd(double sigma, double xi) {
        if (!(sigma > 0.0) || !(xi > 0.0)) throw DomainError("gpd needs sigma, xi > 0");
        return sigma / xi * (std::pow(u01(), -xi) - 1.0);
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace skewlap
