#pragma once

// Skewed Gaussian copula over the latent field: a Gaussian copula carrying
// the dependence of N(mean, Q^{-1}) combined with standardized skew-normal
// marginals, one skewness value per component. Setting every skewness to
// zero recovers the Gaussian exactly.

#include <Eigen/Core>
#include <cstdio>
#include <memory>
#include <ostream>
#include <vector>

#include "skewlap/density_grid.hpp"
#include "skewlap/errors.hpp"
#include "skewlap/gaussian.hpp"
#include "skewlap/math/normal.hpp"
#include "skewlap/math/skew_normal.hpp"
#include "skewlap/model.hpp"
#include "skewlap/rng.hpp"

namespace skewlap {

struct SgcDistribution {
    Eigen::VectorXd mean;
    SparseMat Q;                                 // precision of the Gaussian base
    Eigen::VectorXd skewness;                    // per-component, zeros allowed
    std::shared_ptr<SparseLLT> solver;
    Eigen::VectorXd marginal_sd;                 // sqrt of diag(Q^{-1})
    double log_det_q = 0.0;
    std::vector<math::SkewNormalStd> marginals;  // one per component

    int dim() const { return static_cast<int>(mean.size()); }
};

inline SgcDistribution make_sgc(const Eigen::VectorXd& mean, const SparseMat& Q,
                                const Eigen::VectorXd& skewness) {
    const int p = static_cast<int>(mean.size());
    if (Q.rows() != p || Q.cols() != p) throw DimensionMismatch("make_sgc: precision size mismatch");
    if (skewness.size() != p) throw DimensionMismatch("make_sgc: skewness size mismatch");
    SgcDistribution dist;
    dist.mean = mean;
    dist.Q = Q;
    dist.skewness = skewness;
    dist.solver = std::make_shared<SparseLLT>();
    dist.solver->compute(Q);
    if (dist.solver->info() != Eigen::Success) {
        throw CholeskyFailure("make_sgc: precision matrix is not positive definite");
    }
    dist.log_det_q = log_det_from_llt(*dist.solver);
    dist.marginal_sd = SelectedInverse(*dist.solver).diagonal().cwiseSqrt();
    dist.marginals.reserve(p);
    for (int i = 0; i < p; ++i) dist.marginals.emplace_back(skewness[i]);
    return dist;
}

// Joint log density. The copula draw u ~ N(mean, Q^{-1}) maps to
// f_i = mean_i + sd_i * g_i((u_i - mean_i) / sd_i), so the density at f is
// the Gaussian evaluated at the pulled-back point times the inverse map's
// Jacobian.
inline double sgc_logpdf(const SgcDistribution& dist, const Eigen::VectorXd& x) {
    const int p = dist.dim();
    if (x.size() != p) throw DimensionMismatch("sgc_logpdf: point has wrong length");
    Eigen::VectorXd pulled(p);
    double log_jac = 0.0;
    for (int i = 0; i < p; ++i) {
        const double std_x = (x[i] - dist.mean[i]) / dist.marginal_sd[i];
        const double z = math::skew_map_inverse(std_x, dist.marginals[i]);
        pulled[i] = dist.mean[i] + dist.marginal_sd[i] * z;
        // d z / d x = 1 / g'(z), with g' = phi(z) / f_SN(g(z))
        log_jac += dist.marginals[i].logpdf(std_x) - math::norm_logpdf(z);
    }
    const Eigen::VectorXd centered = pulled - dist.mean;
    const double quad = centered.dot(dist.Q * centered);
    return 0.5 * dist.log_det_q - 0.5 * p * std::log(2.0 * M_PI) - 0.5 * quad + log_jac;
}

// Draws; one row per sample. Each draw takes a Gaussian vector with the base
// covariance, standardizes it per component, pushes it through the quantile
// transform, and restores location and scale.
inline Eigen::MatrixXd sgc_sample(const SgcDistribution& dist, int count, RngStream& rng) {
    if (count < 0) throw DomainError("sgc_sample: negative draw count");
    const int p = dist.dim();
    Eigen::MatrixXd out(count, p);
    Eigen::VectorXd eps(p);
    for (int s = 0; s < count; ++s) {
        for (int i = 0; i < p; ++i) eps[i] = rng.normal();
        const Eigen::VectorXd u = dist.solver->permutationPinv() * dist.solver->matrixU().solve(eps);
        for (int i = 0; i < p; ++i) {
            const double z = u[i] / dist.marginal_sd[i];
            const double g = math::skew_map(z, dist.marginals[i]).g;
            out(s, i) = dist.mean[i] + dist.marginal_sd[i] * g;
        }
    }
    return out;
}

// Marginal density of one component on the given abscissae.
inline DensityGrid sgc_marginal_pdf(const SgcDistribution& dist, int index,
                                    const Eigen::VectorXd& x) {
    if (index < 0 || index >= dist.dim()) throw OutOfRange("sgc_marginal_pdf: index out of range");
    DensityGrid grid;
    grid.x = x;
    grid.pdf.resize(x.size());
    const double mu = dist.mean[index];
    const double sd = dist.marginal_sd[index];
    const auto& sn = dist.marginals[index];
    for (int i = 0; i < x.size(); ++i) {
        grid.pdf[i] = sn.pdf((x[i] - mu) / sd) / sd;
    }
    return grid;
}

inline DensityGrid sgc_marginal_pdf(const SgcDistribution& dist, int index,
                                    int count = 401, double half_width_sd = 8.0) {
    if (index < 0 || index >= dist.dim()) throw OutOfRange("sgc_marginal_pdf: index out of range");
    const auto grid = make_uniform_grid(dist.mean[index],
                                        half_width_sd * dist.marginal_sd[index], count);
    return sgc_marginal_pdf(dist, index, grid.x);
}

// Bivariate restriction to a component pair: the copula marginalizes to the
// pair's covariance block and the marginals carry over unchanged.
inline SgcDistribution sgc_pair(const SgcDistribution& dist, int i, int j) {
    const int p = dist.dim();
    if (i < 0 || i >= p || j < 0 || j >= p) throw OutOfRange("sgc_pair: index out of range");
    if (i == j) throw DomainError("sgc_pair: indices must differ");
    Eigen::VectorXd ei = Eigen::VectorXd::Zero(p);
    ei[i] = 1.0;
    Eigen::VectorXd ej = Eigen::VectorXd::Zero(p);
    ej[j] = 1.0;
    const Eigen::VectorXd col_i = dist.solver->solve(ei);
    const Eigen::VectorXd col_j = dist.solver->solve(ej);
    const double a = col_i[i];
    const double b = 0.5 * (col_i[j] + col_j[i]);
    const double c = col_j[j];
    const double det = a * c - b * b;
    if (!(det > 0.0)) throw CholeskyFailure("sgc_pair: covariance block not positive definite");
    SparseMat q2(2, 2);
    q2.insert(0, 0) = c / det;
    q2.insert(0, 1) = -b / det;
    q2.insert(1, 0) = -b / det;
    q2.insert(1, 1) = a / det;
    q2.makeCompressed();
    Eigen::VectorXd mu2(2), s2(2);
    mu2 << dist.mean[i], dist.mean[j];
    s2 << dist.skewness[i], dist.skewness[j];
    return make_sgc(mu2, q2, s2);
}

struct ContourGridSpec {
    int count = 101;          // points per axis
    double half_width_sd = 4.0;
};

// Joint density of a component pair tabulated on a rectangular grid, emitted
// as x,y,density rows with x varying slowest.
inline void write_contour_csv(std::ostream& os, const SgcDistribution& dist, int i, int j,
                              const ContourGridSpec& spec = {}) {
    const SgcDistribution pair = sgc_pair(dist, i, j);
    const Eigen::VectorXd xs = Eigen::VectorXd::LinSpaced(
        spec.count, pair.mean[0] - spec.half_width_sd * pair.marginal_sd[0],
        pair.mean[0] + spec.half_width_sd * pair.marginal_sd[0]);
    const Eigen::VectorXd ys = Eigen::VectorXd::LinSpaced(
        spec.count, pair.mean[1] - spec.half_width_sd * pair.marginal_sd[1],
        pair.mean[1] + spec.half_width_sd * pair.marginal_sd[1]);
    os << "x,y,density\n";
    char buffer[96];
    Eigen::VectorXd point(2);
    for (int a = 0; a < xs.size(); ++a) {
        for (int b = 0; b < ys.size(); ++b) {
            point << xs[a], ys[b];
            const double dens = std::exp(sgc_logpdf(pair, point));
            std::snprintf(buffer, sizeof(buffer), "%.17g,%.17g,%.17g", xs[a], ys[b], dens);
            os << buffer << '\n';
        }
    }
}

} // namespace skewlap
