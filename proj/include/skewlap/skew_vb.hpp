#pragma once

// Variational skewness fitting on top of a corrected Gaussian approximation:
// exact predictor densities under a skewed whitened coordinate (full FFT
// path, or a blocked path for large fields), the SGC-vs-Gaussian divergence,
// and the per-component scalar optimizer that produces the skewness vector.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <ostream>
#include <vector>

#include "skewlap/density_grid.hpp"
#include "skewlap/errors.hpp"
#include "skewlap/gaussian.hpp"
#include "skewlap/math/fft.hpp"
#include "skewlap/math/optimize.hpp"
#include "skewlap/math/quadrature.hpp"
#include "skewlap/math/skew_normal.hpp"
#include "skewlap/model.hpp"
#include "skewlap/sgc.hpp"
#include "skewlap/vb.hpp"

namespace skewlap {

// ---------------------------------------------------------------------------
// Whitened representation: eta_i = eta_mean_i + sum_j C_ij gamma_j with
// independent standard-normal gamma, so skewing one gamma coordinate keeps
// the summands independent.
// ---------------------------------------------------------------------------

struct WhitenedModel {
    Eigen::MatrixXd L;        // lower Cholesky factor of the reordered covariance
    Eigen::MatrixXd C;        // n x p predictor coefficients
    std::vector<int> order;   // order[t] = original coordinate in whitened slot t
    Eigen::VectorXd eta_mean; // A * mean
    Eigen::VectorXd eta_sd;   // row norms of C
};

inline std::vector<int> front_order(int p, int k) {
    if (k < 0 || k >= p) throw OutOfRange("front_order: index out of range");
    std::vector<int> order;
    order.reserve(p);
    order.push_back(k);
    for (int j = 0; j < p; ++j) {
        if (j != k) order.push_back(j);
    }
    return order;
}

namespace detail {

inline void validate_permutation(const std::vector<int>& order, int p) {
    if (static_cast<int>(order.size()) != p) {
        throw DimensionMismatch("whiten: order length must equal the field dimension");
    }
    std::vector<char> seen(p, 0);
    for (int v : order) {
        if (v < 0 || v >= p || seen[v]) throw DomainError("whiten: order is not a permutation");
        seen[v] = 1;
    }
}

inline WhitenedModel whiten_with_cov(const LatentModel& model, const Eigen::MatrixXd& cov,
                                     const Eigen::VectorXd& mean,
                                     const std::vector<int>& order) {
    const int p = model.p();
    validate_permutation(order, p);
    Eigen::MatrixXd cov_perm(p, p);
    for (int a = 0; a < p; ++a) {
        for (int b = 0; b < p; ++b) cov_perm(a, b) = cov(order[a], order[b]);
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(cov_perm);
    if (llt.info() != Eigen::Success) {
        throw CholeskyFailure("whiten: covariance is not positive definite");
    }
    WhitenedModel wm;
    wm.L = llt.matrixL();
    wm.order = order;
    std::vector<int> slot(p);
    for (int t = 0; t < p; ++t) slot[order[t]] = t;
    Eigen::MatrixXd a_perm = Eigen::MatrixXd::Zero(model.n(), p);
    for (int i = 0; i < model.n(); ++i) {
        for (SparseRowMat::InnerIterator it(model.A, i); it; ++it) {
            a_perm(i, slot[it.col()]) = it.value();
        }
    }
    wm.C = a_perm * wm.L;
    wm.eta_mean = model.A * mean;
    wm.eta_sd = wm.C.rowwise().norm();
    return wm;
}

} // namespace detail

inline WhitenedModel whiten(const LatentModel& model, const GaussianApprox& approx,
                            const std::vector<int>& order, int dense_limit = 1000) {
    return detail::whiten_with_cov(model, dense_covariance(approx, dense_limit), approx.mean,
                                   order);
}

// ---------------------------------------------------------------------------
// FFT density of a sum of independent summands
// ---------------------------------------------------------------------------

struct FftGrid {
    int point_count = 1024;    // physical window points, power of two
    double half_width_sd = 8.0;
};

namespace detail {

inline void validate_fft_grid(const FftGrid& grid) {
    if (grid.point_count < 64 || !math::is_power_of_two(static_cast<std::size_t>(grid.point_count))) {
        throw DomainError("fft grid needs a power-of-two point count of at least 64");
    }
    if (!(grid.half_width_sd > 0.0)) throw DomainError("fft grid needs a positive width");
}

// Density of center + sum_j coeffs_j X_j + N(0, extra_var), where X_j is a
// standardized skew-normal for entries with a marginal object and standard
// normal otherwise. Gaussian summands fold into one analytic characteristic
// factor; so do skewed summands too narrow for the grid spacing, via their
// second and third cumulants. The remaining summands are convolved by FFT on
// a window twice the output width so circular wrap-around cannot reach the
// reported grid.
inline DensityGrid sum_density_fft(double center, const Eigen::VectorXd& coeffs,
                                   const std::vector<const math::SkewNormalStd*>& marginals,
                                   double extra_var, const FftGrid& grid) {
    validate_fft_grid(grid);
    if (marginals.size() != static_cast<std::size_t>(coeffs.size())) {
        throw DimensionMismatch("sum_density_fft: marginal list length mismatch");
    }
    const double total_var = coeffs.squaredNorm() + extra_var;
    if (!(total_var > 0.0)) throw DomainError("sum_density_fft: degenerate (zero-variance) sum");
    const double sd = std::sqrt(total_var);
    const int m = grid.point_count;
    const int n_fft = 2 * m;
    const double delta = 2.0 * grid.half_width_sd * sd / m;

    double v_fold = extra_var;
    double kappa3 = 0.0;
    std::vector<int> sampled;
    for (int j = 0; j < coeffs.size(); ++j) {
        const double c = coeffs[j];
        if (marginals[j] == nullptr || marginals[j]->skewness() == 0.0) {
            v_fold += c * c;
        } else if (std::abs(c) < delta) {
            v_fold += c * c;
            kappa3 += c * c * c * marginals[j]->skewness();
        } else {
            sampled.push_back(j);
        }
    }

    std::vector<std::complex<double>> cf(n_fft);
    for (int k = 0; k < n_fft; ++k) {
        const int k_signed = k <= n_fft / 2 ? k : k - n_fft;
        const double w = 2.0 * M_PI * k_signed / (n_fft * delta);
        const double phase = -kappa3 * w * w * w / 6.0;
        cf[k] = std::exp(-0.5 * v_fold * w * w) *
                std::complex<double>(std::cos(phase), std::sin(phase));
    }

    std::vector<std::complex<double>> buf(n_fft);
    for (int j : sampled) {
        const double c = coeffs[j];
        const math::SkewNormalStd& sn = *marginals[j];
        for (int t = 0; t < n_fft; ++t) {
            const int t_signed = t <= n_fft / 2 ? t : t - n_fft;
            buf[t] = sn.pdf(t_signed * delta / c) / std::abs(c);
        }
        math::fft_forward(buf);
        for (int k = 0; k < n_fft; ++k) cf[k] *= buf[k] * delta;
    }

    math::fft_inverse(cf);

    DensityGrid out;
    out.x.resize(m + 1);
    out.pdf.resize(m + 1);
    for (int t = -m / 2; t <= m / 2; ++t) {
        const int idx = (t + n_fft) % n_fft;
        out.x[t + m / 2] = center + t * delta;
        out.pdf[t + m / 2] = cf[idx].real() / delta;
    }
    const double mass = trapezoid(out.x, out.pdf);
    if (mass < 1.0 - 1e-5) {
        throw GridTooNarrow("eta density mass outside the grid window exceeds tolerance");
    }
    for (int i = 0; i < out.pdf.size(); ++i) out.pdf[i] = std::max(out.pdf[i], 0.0);
    out.pdf /= trapezoid(out.x, out.pdf);
    return out;
}

inline std::vector<const math::SkewNormalStd*> marginal_pointers(
    const Eigen::VectorXd& skews, std::vector<math::SkewNormalStd>& storage) {
    storage.clear();
    std::vector<int> where;
    for (int j = 0; j < skews.size(); ++j) {
        if (skews[j] != 0.0) {
            storage.emplace_back(skews[j]);
            where.push_back(j);
        }
    }
    std::vector<const math::SkewNormalStd*> ptrs(skews.size(), nullptr);
    for (std::size_t r = 0; r < where.size(); ++r) ptrs[where[r]] = &storage[r];
    return ptrs;
}

} // namespace detail

// Density of center + sum_j coeffs_j X_j + N(0, extra_var) with independent
// standardized skew-normal summands X_j of the given skewness.
inline DensityGrid skew_sum_density(double center, const Eigen::VectorXd& coeffs,
                                    const Eigen::VectorXd& skews, double extra_var,
                                    const FftGrid& grid = {}) {
    if (coeffs.size() != skews.size()) {
        throw DimensionMismatch("skew_sum_density: coefficient and skew lengths disagree");
    }
    std::vector<math::SkewNormalStd> storage;
    const auto ptrs = detail::marginal_pointers(skews, storage);
    return detail::sum_density_fft(center, coeffs, ptrs, extra_var, grid);
}

// Density of eta for one observation, with gamma_skew giving the skewness of
// each whitened coordinate (usually a single nonzero in slot 0).
inline DensityGrid eta_density_fft(const WhitenedModel& wm, const Eigen::VectorXd& gamma_skew,
                                   int obs, const FftGrid& grid = {}) {
    if (obs < 0 || obs >= wm.C.rows()) throw OutOfRange("eta_density_fft: observation out of range");
    if (gamma_skew.size() != wm.C.cols()) {
        throw DimensionMismatch("eta_density_fft: skew vector length mismatch");
    }
    std::vector<math::SkewNormalStd> storage;
    const auto ptrs = detail::marginal_pointers(gamma_skew, storage);
    return detail::sum_density_fft(wm.eta_mean[obs], wm.C.row(obs).transpose(), ptrs, 0.0, grid);
}

// ---------------------------------------------------------------------------
// Blocked path: whiten only a small block around the optimized component and
// treat the remainder as Gaussian conditioned on the block's Gaussian image.
// ---------------------------------------------------------------------------

struct BlockSplit {
    std::vector<int> block;   // original indices, optimized component first
    Eigen::MatrixXd L2;       // Cholesky factor of the block covariance
    Eigen::MatrixXd C2;       // n x |block| whitened block coefficients
    Eigen::VectorXd beta;     // per observation: slope of the remainder on the block sum
    Eigen::VectorXd v_res;    // per observation: conditional remainder variance
    Eigen::VectorXd eta_mean; // per observation
};

inline BlockSplit make_block_split(const LatentModel& model, const GaussianApprox& approx,
                                   int target, const std::vector<int>& companions,
                                   int block_limit = 30) {
    const int p = model.p();
    const int n = model.n();
    if (target < 0 || target >= p) throw OutOfRange("make_block_split: target out of range");
    if (block_limit < 1) throw DomainError("make_block_split: block limit must be positive");

    std::vector<char> in_block(p, 0);
    std::vector<int> block;
    block.push_back(target);
    in_block[target] = 1;
    for (int c : companions) {
        if (c < 0 || c >= p) throw OutOfRange("make_block_split: companion out of range");
        if (!in_block[c] && static_cast<int>(block.size()) < block_limit) {
            block.push_back(c);
            in_block[c] = 1;
        }
    }
    // fill with the strongest precision neighbors of the target
    std::vector<std::pair<double, int>> neighbors;
    for (SparseMat::InnerIterator it(approx.Q, target); it; ++it) {
        const int r = static_cast<int>(it.row());
        if (!in_block[r]) neighbors.emplace_back(std::abs(it.value()), r);
    }
    std::sort(neighbors.begin(), neighbors.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& nb : neighbors) {
        if (static_cast<int>(block.size()) >= block_limit) break;
        block.push_back(nb.second);
        in_block[nb.second] = 1;
    }

    const int bsz = static_cast<int>(block.size());
    Eigen::MatrixXd cov_cols(p, bsz); // Sigma(:, block)
    Eigen::VectorXd e = Eigen::VectorXd::Zero(p);
    for (int b = 0; b < bsz; ++b) {
        e[block[b]] = 1.0;
        cov_cols.col(b) = approx.solver->solve(e);
        e[block[b]] = 0.0;
    }
    Eigen::MatrixXd sigma2(bsz, bsz);
    for (int a = 0; a < bsz; ++a) {
        for (int b = 0; b < bsz; ++b) sigma2(a, b) = cov_cols(block[a], b);
    }
    sigma2 = 0.5 * (sigma2 + sigma2.transpose().eval());
    const Eigen::LLT<Eigen::MatrixXd> llt(sigma2);
    if (llt.info() != Eigen::Success) {
        throw CholeskyFailure("make_block_split: block covariance not positive definite");
    }

    BlockSplit split;
    split.block = block;
    split.L2 = llt.matrixL();
    Eigen::MatrixXd a_block = Eigen::MatrixXd::Zero(n, bsz);
    std::vector<int> slot(p, -1);
    for (int b = 0; b < bsz; ++b) slot[block[b]] = b;
    for (int i = 0; i < n; ++i) {
        for (SparseRowMat::InnerIterator it(model.A, i); it; ++it) {
            if (slot[it.col()] >= 0) a_block(i, slot[it.col()]) = it.value();
        }
    }
    split.C2 = a_block * split.L2;
    split.eta_mean = model.A * approx.mean;

    const Eigen::VectorXd var_tot =
        detail::eta_variances(model.A, approx.selected_inverse(), *approx.solver);
    const Eigen::MatrixXd cross = model.A * cov_cols; // n x |block|: A Sigma(:, block)
    split.beta.resize(n);
    split.v_res.resize(n);
    for (int i = 0; i < n; ++i) {
        const double var2 = split.C2.row(i).squaredNorm();
        if (var2 <= 1e-14 * std::max(var_tot[i], 1e-300)) {
            split.beta[i] = 0.0;
            split.v_res[i] = var_tot[i];
            continue;
        }
        const double cov12 = cross.row(i).dot(a_block.row(i)) - var2;
        split.beta[i] = cov12 / var2;
        const double scale = 1.0 + split.beta[i];
        split.v_res[i] = std::max(var_tot[i] - scale * scale * var2, 0.0);
    }
    return split;
}

// Density of eta for one observation under the blocked construction: the
// block sum is scaled by (1 + beta) and convolved with the conditional
// Gaussian remainder, which keeps the total mean and variance exact.
inline DensityGrid eta_density_blocked(const BlockSplit& split, const Eigen::VectorXd& block_skew,
                                       int obs, const FftGrid& grid = {}) {
    if (obs < 0 || obs >= split.C2.rows()) {
        throw OutOfRange("eta_density_blocked: observation out of range");
    }
    if (block_skew.size() != split.C2.cols()) {
        throw DimensionMismatch("eta_density_blocked: skew vector length mismatch");
    }
    std::vector<math::SkewNormalStd> storage;
    const auto ptrs = detail::marginal_pointers(block_skew, storage);
    const double scale = 1.0 + split.beta[obs];
    return detail::sum_density_fft(split.eta_mean[obs], scale * split.C2.row(obs).transpose(),
                                   ptrs, split.v_res[obs], grid);
}

// ---------------------------------------------------------------------------
// Expected negative log-likelihood under per-observation eta densities
// ---------------------------------------------------------------------------

inline double expected_nll_sgc(const LatentModel& model, const Dataset& data,
                               const Eigen::VectorXd& theta,
                               const std::vector<DensityGrid>& densities) {
    if (static_cast<int>(densities.size()) != model.n()) {
        throw DimensionMismatch("expected_nll_sgc: one density per observation required");
    }
    double total = 0.0;
    for (int i = 0; i < model.n(); ++i) {
        const DensityGrid& g = densities[i];
        Eigen::VectorXd integrand(g.x.size());
        for (int t = 0; t < g.x.size(); ++t) {
            if (g.pdf[t] <= 0.0) {
                integrand[t] = 0.0;
                continue;
            }
            const double ll = loglik_eval(model.lik, data.y[i], g.x[t], theta).value;
            if (!std::isfinite(ll)) {
                throw DomainError("expected_nll_sgc: likelihood not finite inside the grid");
            }
            integrand[t] = -ll * g.pdf[t];
        }
        total += trapezoid(g.x, integrand);
    }
    return total;
}

inline void write_eta_density_csv(std::ostream& os, const std::vector<DensityGrid>& densities) {
    os << "observation,eta,density\n";
    char buffer[80];
    for (std::size_t i = 0; i < densities.size(); ++i) {
        const DensityGrid& g = densities[i];
        for (int t = 0; t < g.x.size(); ++t) {
            std::snprintf(buffer, sizeof(buffer), "%zu,%.17g,%.17g", i, g.x[t], g.pdf[t]);
            os << buffer << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Divergence of the SGC from its Gaussian base
// ---------------------------------------------------------------------------

// E[f_k^j f_l^j'] for a centered bivariate Gaussian with the given covariance
// entries; odd total order vanishes identically.
inline double gaussian_even_moments(double vkk, double vkl, double vll, int j, int jp) {
    if (j < 0 || jp < 0 || j > 3 || jp > 3) throw DomainError("gaussian_even_moments: powers must lie in [0, 3]");
    if ((j + jp) % 2 == 1) return 0.0;
    if (j > jp) {
        std::swap(j, jp);
        std::swap(vkk, vll);
    }
    if (j == 0) {
        if (jp == 0) return 1.0;
        return vll; // jp == 2
    }
    if (j == 1) {
        if (jp == 1) return vkl;
        return 3.0 * vll * vkl; // jp == 3
    }
    if (j == 2) return vkk * vll + 2.0 * vkl * vkl; // jp == 2
    return 9.0 * vkk * vll * vkl + 6.0 * vkl * vkl * vkl; // (3, 3)
}

// Degree-3 power-basis coefficients of the quantile transform g under the
// standard-normal weight, tabulated on a fixed skewness grid: g(z) is
// approximated by c0 + c1 z + c2 z^2 + c3 z^3.
class MomentCoeffTable {
public:
    struct Coeffs {
        double c0 = 0.0, c1 = 1.0, c2 = 0.0, c3 = 0.0;
    };

    static const MomentCoeffTable& instance() {
        static const MomentCoeffTable table;
        return table;
    }

    MomentCoeffTable() {
        entries_.resize(2 * half_steps_ + 1);
        for (int i = 0; i < static_cast<int>(entries_.size()); ++i) {
            entries_[i] = fit((i - half_steps_) / 100.0);
        }
    }

    double bound() const { return half_steps_ / 100.0; }

    Coeffs at(double s) const {
        if (!(std::abs(s) <= bound() + 1e-12)) {
            throw OutOfRange("skewness outside the coefficient table range");
        }
        const double pos = std::clamp(s * 100.0 + half_steps_, 0.0,
                                      static_cast<double>(2 * half_steps_));
        const int lo = std::min(static_cast<int>(pos), 2 * half_steps_ - 1);
        const double t = pos - lo;
        const Coeffs& a = entries_[lo];
        const Coeffs& b = entries_[lo + 1];
        return {(1.0 - t) * a.c0 + t * b.c0, (1.0 - t) * a.c1 + t * b.c1,
                (1.0 - t) * a.c2 + t * b.c2, (1.0 - t) * a.c3 + t * b.c3};
    }

    // Hermite least squares: project g onto He_0..He_3 with 201-node
    // quadrature, then convert to the power basis.
    static Coeffs fit(double s) {
        if (s == 0.0) return {};
        const math::SkewNormalStd sn(s);
        const auto& rule = math::gauss_hermite_rule(201);
        double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
        for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
            const double z = std::sqrt(2.0) * rule.nodes[k];
            const double g = math::skew_map(z, sn).g;
            const double w = rule.weights[k] / std::sqrt(M_PI);
            a0 += w * g;
            a1 += w * g * z;
            a2 += w * g * (z * z - 1.0);
            a3 += w * g * (z * z * z - 3.0 * z);
        }
        a2 /= 2.0;
        a3 /= 6.0;
        return {a0 - a2, a1 - 3.0 * a3, a2, a3};
    }

private:
    static constexpr int half_steps_ = 95;
    std::vector<Coeffs> entries_;
};

namespace detail {

// E[S_k(w_1) S_l(w_2)] for the degree-3 series under a standardized bivariate
// Gaussian with correlation r
inline double series_cross_moment(const MomentCoeffTable::Coeffs& ck,
                                  const MomentCoeffTable::Coeffs& cl, double r) {
    const double fk[4] = {ck.c0, ck.c1, ck.c2, ck.c3};
    const double fl[4] = {cl.c0, cl.c1, cl.c2, cl.c3};
    double acc = 0.0;
    for (int j = 0; j <= 3; ++j) {
        if (fk[j] == 0.0) continue;
        for (int jp = 0; jp <= 3; ++jp) {
            if (fl[jp] == 0.0) continue;
            acc += fk[j] * fl[jp] * gaussian_even_moments(1.0, r, 1.0, j, jp);
        }
    }
    return acc;
}

// E[-log g'(Z)] under a standard normal, by 201-node quadrature
inline double kld_entropy_term(const math::SkewNormalStd& sn) {
    const auto& rule = math::gauss_hermite_rule(201);
    double acc = 0.0;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
        const double z = std::sqrt(2.0) * rule.nodes[k];
        acc -= rule.weights[k] * std::log(math::skew_map(z, sn).g_prime);
    }
    return acc / std::sqrt(M_PI);
}

struct KldPair {
    int k = 0, l = 0;
    double q_kl = 0.0, r_kl = 0.0;
};

struct KldLayout {
    Eigen::VectorXd sigma;
    std::vector<KldPair> pairs; // off-diagonal upper pattern of Q
};

inline KldLayout kld_layout(const SparseMat& Q, const SelectedInverse& sel) {
    KldLayout layout;
    const int p = static_cast<int>(Q.rows());
    layout.sigma.resize(p);
    for (int i = 0; i < p; ++i) layout.sigma[i] = std::sqrt(sel.entry(i, i));
    for (int j = 0; j < Q.outerSize(); ++j) {
        for (SparseMat::InnerIterator it(Q, j); it; ++it) {
            const int i = static_cast<int>(it.row());
            if (i >= j || it.value() == 0.0) continue;
            KldPair pair;
            pair.k = i;
            pair.l = j;
            pair.q_kl = it.value();
            pair.r_kl = sel.entry(i, j) / (layout.sigma[i] * layout.sigma[j]);
            layout.pairs.push_back(pair);
        }
    }
    return layout;
}

inline double kld_from_layout(const KldLayout& layout, const Eigen::VectorXd& skewness,
                              const std::vector<const math::SkewNormalStd*>& marginals,
                              const MomentCoeffTable& table) {
    double i1 = 0.0;
    for (int i = 0; i < skewness.size(); ++i) {
        if (skewness[i] != 0.0) i1 += kld_entropy_term(*marginals[i]);
    }
    double i2 = 0.0;
    const MomentCoeffTable::Coeffs identity;
    for (const auto& pair : layout.pairs) {
        const double sk = skewness[pair.k];
        const double sl = skewness[pair.l];
        if (sk == 0.0 && sl == 0.0) continue;
        const auto ck = sk == 0.0 ? identity : table.at(sk);
        const auto cl = sl == 0.0 ? identity : table.at(sl);
        const double cross = series_cross_moment(ck, cl, pair.r_kl);
        i2 += pair.q_kl * layout.sigma[pair.k] * layout.sigma[pair.l] * (cross - pair.r_kl);
    }
    return i1 + i2;
}

} // namespace detail

inline double kld_sgc_gaussian(const SgcDistribution& dist,
                               const MomentCoeffTable& table = MomentCoeffTable::instance()) {
    const SelectedInverse sel(*dist.solver);
    const auto layout = detail::kld_layout(dist.Q, sel);
    std::vector<const math::SkewNormalStd*> ptrs(dist.dim());
    for (int i = 0; i < dist.dim(); ++i) ptrs[i] = &dist.marginals[i];
    return detail::kld_from_layout(layout, dist.skewness, ptrs, table);
}

// ---------------------------------------------------------------------------
// Skewness optimization
// ---------------------------------------------------------------------------

struct SkewOptions {
    double bound = 0.95;      // optimizer box, kept inside the table range
    double xtol = 5e-4;       // scalar minimizer tolerance on s
    int max_iter = 100;
    double snap_tol = 1e-9;   // keep s = 0 unless the objective improves by this
    int dense_limit = 1000;   // above this the blocked path takes over
    int block_limit = 30;
    FftGrid grid{};
};

struct SkewComponentReport {
    int index = -1;
    double s_hat = 0.0;
    double objective_at_zero = 0.0;
    double objective = 0.0;
    int evaluations = 0;
    bool converged = true;
};

struct SkewnessFit {
    Eigen::VectorXd s;
    std::vector<SkewComponentReport> components;
};

inline std::vector<int> default_skew_set(const LatentModel& model) {
    std::vector<int> out;
    int offset = 0;
    for (const auto& block : model.blocks) {
        if (block.kind == BlockKind::FixedEffect) {
            for (int j = 0; j < block.count; ++j) out.push_back(offset + j);
        }
        offset += block.count;
    }
    return out;
}

// Minimizes expected_nll + KLD over the skewness of each selected component
// in turn, holding all other components Gaussian; the subproblems are
// independent by construction.
inline SkewnessFit optimize_skewness(const LatentModel& model, const Dataset& data,
                                     const Eigen::VectorXd& theta, const GaussianApprox& approx,
                                     const std::vector<int>& components,
                                     const SkewOptions& opts = {},
                                     const MomentCoeffTable& table = MomentCoeffTable::instance()) {
    const int p = model.p();
    const int n = model.n();
    SkewnessFit fit;
    fit.s = Eigen::VectorXd::Zero(p);
    if (components.empty()) return fit;
    {
        std::vector<char> seen(p, 0);
        for (int k : components) {
            if (k < 0 || k >= p) throw OutOfRange("optimize_skewness: component out of range");
            if (seen[k]) throw DomainError("optimize_skewness: duplicate component index");
            seen[k] = 1;
        }
    }
    if (!(opts.bound > 0.0 && opts.bound <= table.bound())) {
        throw DomainError("optimize_skewness: bound must lie inside the coefficient table");
    }

    const auto layout = detail::kld_layout(approx.Q, approx.selected_inverse());
    const bool dense_path = p <= opts.dense_limit;
    Eigen::MatrixXd cov;
    if (dense_path) cov = dense_covariance(approx, opts.dense_limit);

    for (int k : components) {
        SkewComponentReport report;
        report.index = k;
        // per-observation center, coefficient rows, and extra variance for
        // the chosen density path, with the optimized component in slot 0
        Eigen::MatrixXd coeff_rows;
        Eigen::VectorXd centers, extra_var, row_scale;
        try {
            if (dense_path) {
                const auto wm = detail::whiten_with_cov(model, cov, approx.mean, front_order(p, k));
                coeff_rows = wm.C;
                centers = wm.eta_mean;
                extra_var = Eigen::VectorXd::Zero(n);
                row_scale = Eigen::VectorXd::Ones(n);
            } else {
                std::vector<int> companions;
                for (int c : components) {
                    if (c != k) companions.push_back(c);
                }
                const auto split = make_block_split(model, approx, k, companions, opts.block_limit);
                coeff_rows = split.C2;
                centers = split.eta_mean;
                extra_var = split.v_res;
                row_scale = (1.0 + split.beta.array()).matrix();
            }

            Eigen::VectorXd skew_slots = Eigen::VectorXd::Zero(coeff_rows.cols());
            Eigen::VectorXd field_skew = Eigen::VectorXd::Zero(p);
            auto objective = [&](double s) {
                std::vector<math::SkewNormalStd> storage;
                std::vector<const math::SkewNormalStd*> ptrs(coeff_rows.cols(), nullptr);
                if (s != 0.0) {
                    storage.emplace_back(s);
                    ptrs[0] = &storage[0];
                }
                std::vector<DensityGrid> densities;
                densities.reserve(n);
                for (int i = 0; i < n; ++i) {
                    densities.push_back(detail::sum_density_fft(
                        centers[i], row_scale[i] * coeff_rows.row(i).transpose(), ptrs,
                        extra_var[i], opts.grid));
                }
                const double nll = expected_nll_sgc(model, data, theta, densities);
                field_skew[k] = s;
                std::vector<const math::SkewNormalStd*> field_ptrs(p, nullptr);
                if (s != 0.0) field_ptrs[k] = &storage[0];
                const double kld = detail::kld_from_layout(layout, field_skew, field_ptrs, table);
                field_skew[k] = 0.0;
                return nll + kld;
            };

            report.objective_at_zero = objective(0.0);
            const auto result =
                math::brent_minimize(objective, -opts.bound, opts.bound, opts.xtol, opts.max_iter);
            report.evaluations = result.evaluations + 1;
            if (report.objective_at_zero - result.value < opts.snap_tol) {
                report.s_hat = 0.0;
                report.objective = report.objective_at_zero;
            } else {
                report.s_hat = result.x;
                report.objective = result.value;
            }
        } catch (const NonConvergence&) {
            report.converged = false;
            report.s_hat = 0.0;
        } catch (const GridTooNarrow&) {
            report.converged = false;
            report.s_hat = 0.0;
        }
        fit.s[k] = report.s_hat;
        fit.components.push_back(report);
    }
    return fit;
}

inline SgcDistribution fit_sgc(const LatentModel& model, const Dataset& data,
                               const Eigen::VectorXd& theta, const GaussianApprox& approx,
                               const std::vector<int>& components, const SkewOptions& opts = {}) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(model.p());
    if (!components.empty()) {
        s = optimize_skewness(model, data, theta, approx, components, opts).s;
    }
    return make_sgc(approx.mean, approx.Q, s);
}

} // namespace skewlap
