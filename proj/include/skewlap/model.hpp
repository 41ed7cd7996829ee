#pragma once

// Model core: likelihood families with analytic derivatives, latent prior
// blocks, and structural validation.
//
// A latent Gaussian model here is
//   y_i | f, theta  ~  L_i(y_i; eta_i, theta),   eta = A f
//   f | theta       ~  N(0, Q_theta^{-1})        (precision parametrization)
// with an optional low-dimensional hyperparameter vector theta.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "skewlap/errors.hpp"
#include "skewlap/math/normal.hpp"

namespace skewlap {

using SparseMat = Eigen::SparseMatrix<double>;
using SparseRowMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

// ---------------------------------------------------------------------------
// Likelihood families
// ---------------------------------------------------------------------------

struct Poisson {}; // log link: mean = exp(eta)

struct StudentT {
    double dof = 4.0;
    int log_precision_index = -1; // index into theta; tau = exp(theta[i])
    double fixed_log_precision = 0.0;
};

struct GeneralizedPareto {
    double tail_xi = 0.3;        // xi > 0
    double quantile_level = 0.5; // alpha: eta is the log alpha-quantile
};

struct BernoulliSensSpec {
    double sensitivity = 0.8;  // pi0
    double specificity = 0.985; // pi1
};

struct BinomialLogit {
    int trials = 1;
};

struct GaussianObs {
    int log_precision_index = -1;
    double fixed_log_precision = 0.0;
};

using Likelihood =
    std::variant<Poisson, StudentT, GeneralizedPareto, BernoulliSensSpec, BinomialLogit,
                 GaussianObs>;

struct LogLikEval {
    double value = 0.0; // log L_i
    double d1 = 0.0;    // d/d eta
    double d2 = 0.0;    // d^2/d eta^2
};

// Scale of the generalized Pareto likelihood given the linear predictor:
// eta is the log of the alpha-quantile, so sigma = xi exp(eta) / ((1-alpha)^{-xi} - 1).
inline double gpd_scale(double eta, double xi, double alpha) {
    if (!(xi > 0.0)) throw DomainError("gpd_scale: tail index xi must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("gpd_scale: alpha must lie in (0,1)");
    return xi * std::exp(eta) / (std::pow(1.0 - alpha, -xi) - 1.0);
}

namespace detail {

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) { // log(1 + e^x)
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double theta_value(int index, double fallback, const Eigen::VectorXd& theta,
                          const char* what) {
    if (index < 0) return fallback;
    if (index >= theta.size()) throw DimensionMismatch(std::string(what) + ": theta index out of range");
    return theta[index];
}

} // namespace detail

inline LogLikEval loglik_eval(const Likelihood& lik, double y, double eta,
                              const Eigen::VectorXd& theta) {
    LogLikEval out;
    if (std::holds_alternative<Poisson>(lik)) {
        if (y < 0.0 || y != std::floor(y)) throw DomainError("poisson: y must be a count");
        const double mu = std::exp(eta);
        out.value = y * eta - mu - std::lgamma(y + 1.0);
        out.d1 = y - mu;
        out.d2 = -mu;
    } else if (const auto* st = std::get_if<StudentT>(&lik)) {
        const double nu = st->dof;
        if (!(nu > 0.0)) throw DomainError("student_t: dof must be positive");
        const double tau = std::exp(detail::theta_value(st->log_precision_index,
                                                        st->fixed_log_precision, theta,
                                                        "student_t"));
        const double r = y - eta;
        const double u = 1.0 + tau * r * r / nu;
        out.value = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                    0.5 * std::log(nu * M_PI) + 0.5 * std::log(tau) -
                    0.5 * (nu + 1.0) * std::log(u);
        out.d1 = (nu + 1.0) * tau * r / (nu * u);
        out.d2 = (nu + 1.0) * (tau / nu) * (tau * r * r / nu - 1.0) / (u * u);
    } else if (const auto* gp = std::get_if<GeneralizedPareto>(&lik)) {
        if (!(y > 0.0)) throw DomainError("gpd: y must be positive");
        const double xi = gp->tail_xi;
        const double sigma = gpd_scale(eta, xi, gp->quantile_level);
        const double v = xi * y / sigma; // support 1 + xi y / sigma > 0 holds for y > 0
        const double w = 1.0 + v;
        out.value = -std::log(sigma) - (1.0 / xi + 1.0) * std::log(w);
        out.d1 = -1.0 + (1.0 + 1.0 / xi) * v / w;
        out.d2 = -(1.0 + 1.0 / xi) * v / (w * w);
    } else if (const auto* bs = std::get_if<BernoulliSensSpec>(&lik)) {
        if (y != 0.0 && y != 1.0) throw DomainError("bernoulli_sens_spec: y must be 0 or 1");
        const double a = 1.0 - bs->specificity;
        const double b = bs->sensitivity + bs->specificity - 1.0;
        const double pi = detail::sigmoid(eta);
        const double pd = pi * (1.0 - pi);
        const double pdd = pd * (1.0 - 2.0 * pi);
        if (y == 1.0) {
            const double fp = a + b * pi; // P(y=1 | eta)
            out.value = std::log(fp);
            out.d1 = b * pd / fp;
            out.d2 = (b * pdd * fp - b * b * pd * pd) / (fp * fp);
        } else {
            const double fn = bs->specificity - b * pi; // P(y=0 | eta)
            out.value = std::log(fn);
            out.d1 = -b * pd / fn;
            out.d2 = (-b * pdd * fn - b * b * pd * pd) / (fn * fn);
        }
    } else if (const auto* bl = std::get_if<BinomialLogit>(&lik)) {
        const double m = bl->trials;
        if (y < 0.0 || y > m || y != std::floor(y)) {
            throw DomainError("binomial_logit: y must be an integer in [0, trials]");
        }
        const double pi = detail::sigmoid(eta);
        out.value = std::lgamma(m + 1.0) - std::lgamma(y + 1.0) - std::lgamma(m - y + 1.0) +
                    y * eta - m * detail::softplus(eta);
        out.d1 = y - m * pi;
        out.d2 = -m * pi * (1.0 - pi);
    } else if (const auto* go = std::get_if<GaussianObs>(&lik)) {
        const double tau = std::exp(detail::theta_value(go->log_precision_index,
                                                        go->fixed_log_precision, theta,
                                                        "gaussian_obs"));
        const double r = y - eta;
        out.value = 0.5 * std::log(tau) - 0.5 * math::kLog2Pi - 0.5 * tau * r * r;
        out.d1 = tau * r;
        out.d2 = -tau;
    } else {
        throw DomainError("loglik_eval: unknown likelihood family");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Latent prior
// ---------------------------------------------------------------------------

enum class BlockKind { FixedEffect, Iid, Ar1 };

// Contiguous block of the latent field. For Iid the free parameter is the
// log precision (precision = exp(theta[i])); for Ar1 it is the Fisher-z of
// the lag correlation (rho = tanh(theta[i])). The AR1 precision is the
// stationary tridiagonal form with unit innovation precision.
struct PriorBlock {
    BlockKind kind = BlockKind::FixedEffect;
    int count = 1;
    double value = 1.0;   // precision (FixedEffect/Iid) or rho (Ar1) when fixed
    int theta_index = -1; // -1 means fixed at `value`
    std::string name;
};

struct LatentModel {
    SparseRowMat A; // n x p design
    std::vector<PriorBlock> blocks;
    Likelihood lik;
    int theta_dim = 0;
    std::optional<Eigen::VectorXd> fixed_theta;
    Eigen::VectorXd hyper_mean; // Gaussian hyperprior on theta (per component)
    Eigen::VectorXd hyper_sd;

    int n() const { return static_cast<int>(A.rows()); }
    int p() const { return static_cast<int>(A.cols()); }

    double log_hyperprior(const Eigen::VectorXd& theta) const {
        double acc = 0.0;
        for (int j = 0; j < theta.size(); ++j) {
            const double m = j < hyper_mean.size() ? hyper_mean[j] : 0.0;
            const double s = j < hyper_sd.size() ? hyper_sd[j] : 10.0;
            acc += math::norm_logpdf((theta[j] - m) / s) - std::log(s);
        }
        return acc;
    }

    Eigen::VectorXd theta_or_default() const {
        if (fixed_theta) return *fixed_theta;
        return Eigen::VectorXd::Zero(theta_dim);
    }
};

struct Dataset {
    Eigen::VectorXd y;
    Eigen::MatrixXd covariates; // n x k, may be empty
    std::vector<std::string> covariate_names;
};

inline double block_precision(const PriorBlock& b, const Eigen::VectorXd& theta) {
    if (b.kind == BlockKind::Ar1) throw DomainError("block_precision: not an iid block");
    if (b.theta_index < 0) return b.value;
    return std::exp(detail::theta_value(b.theta_index, 0.0, theta, "block_precision"));
}

inline double block_rho(const PriorBlock& b, const Eigen::VectorXd& theta) {
    if (b.kind != BlockKind::Ar1) throw DomainError("block_rho: not an AR1 block");
    if (b.theta_index < 0) return b.value;
    return std::tanh(detail::theta_value(b.theta_index, 0.0, theta, "block_rho"));
}

// Assembles the block-diagonal latent prior precision Q_theta.
inline SparseMat prior_precision(const LatentModel& model, const Eigen::VectorXd& theta) {
    const int p = model.p();
    std::vector<Triplet> trip;
    trip.reserve(static_cast<std::size_t>(3 * p));
    int offset = 0;
    for (const auto& b : model.blocks) {
        if (b.kind == BlockKind::Ar1) {
            const double rho = block_rho(b, theta);
            if (!(std::abs(rho) < 1.0)) {
                throw DomainError("prior_precision: AR1 correlation must satisfy |rho| < 1");
            }
            for (int i = 0; i < b.count; ++i) {
                const bool interior = i > 0 && i < b.count - 1;
                trip.emplace_back(offset + i, offset + i, interior ? 1.0 + rho * rho : 1.0);
                if (i + 1 < b.count) {
                    trip.emplace_back(offset + i, offset + i + 1, -rho);
                    trip.emplace_back(offset + i + 1, offset + i, -rho);
                }
            }
            if (b.count == 1) {
                // degenerate single-element block: stationary variance 1/(1-rho^2)
                trip.back() = Triplet(offset, offset, 1.0 - rho * rho);
            }
        } else {
            const double prec = block_precision(b, theta);
            if (!(prec > 0.0)) throw DomainError("prior_precision: block precision must be positive");
            for (int i = 0; i < b.count; ++i) {
                trip.emplace_back(offset + i, offset + i, prec);
            }
        }
        offset += b.count;
    }
    if (offset != p) {
        throw DimensionMismatch("prior_precision: block sizes do not sum to the latent dimension");
    }
    SparseMat Q(p, p);
    Q.setFromTriplets(trip.begin(), trip.end());
    return Q;
}

inline Eigen::VectorXd linear_predictor(const LatentModel& model, const Eigen::VectorXd& f) {
    if (f.size() != model.p()) throw DimensionMismatch("linear_predictor: f has wrong length");
    return model.A * f;
}

// Default correction / skew component set: fixed effects plus the first
// index of each random-effect block.
inline std::vector<int> default_component_set(const LatentModel& model) {
    std::vector<int> idx;
    int offset = 0;
    for (const auto& b : model.blocks) {
        if (b.kind == BlockKind::FixedEffect) {
            for (int i = 0; i < b.count; ++i) idx.push_back(offset + i);
        } else if (b.count > 0) {
            idx.push_back(offset);
        }
        offset += b.count;
    }
    return idx;
}

inline std::vector<std::string> component_names(const LatentModel& model) {
    std::vector<std::string> names;
    int blockno = 0;
    for (const auto& b : model.blocks) {
        const std::string base = b.name.empty() ? "b" + std::to_string(blockno) : b.name;
        if (b.count == 1) {
            names.push_back(base);
        } else {
            for (int i = 0; i < b.count; ++i) {
                names.push_back(base + "[" + std::to_string(i) + "]");
            }
        }
        ++blockno;
    }
    return names;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct ValidationIssue {
    std::string where;
    std::string message;
};

inline std::vector<ValidationIssue> validate_model(const LatentModel& model,
                                                   const Dataset& data) {
    std::vector<ValidationIssue> issues;
    const int n = model.n();
    const int p = model.p();
    if (data.y.size() != n) {
        issues.push_back({"data.y", "response length " + std::to_string(data.y.size()) +
                                        " does not match design rows " + std::to_string(n)});
    }
    int total = 0;
    int blockno = 0;
    for (const auto& b : model.blocks) {
        const std::string where = "blocks[" + std::to_string(blockno) + "]";
        if (b.count <= 0) issues.push_back({where, "block count must be positive"});
        if (b.kind == BlockKind::Ar1) {
            if (b.theta_index < 0 && !(std::abs(b.value) < 1.0)) {
                issues.push_back({where, "AR1 correlation " + std::to_string(b.value) +
                                             " must satisfy |rho| < 1 (prior not SPD)"});
            }
        } else if (b.theta_index < 0 && !(b.value > 0.0)) {
            issues.push_back({where, "block precision must be positive"});
        }
        if (b.theta_index >= model.theta_dim) {
            issues.push_back({where, "theta index out of range"});
        }
        total += b.count;
        ++blockno;
    }
    if (total != p) {
        issues.push_back({"blocks", "block sizes sum to " + std::to_string(total) +
                                        " but the design has " + std::to_string(p) +
                                        " columns"});
    }
    if (model.fixed_theta && model.fixed_theta->size() != model.theta_dim) {
        issues.push_back({"fixed_theta", "length does not match theta_dim"});
    }
    // likelihood hyper indices + per-observation support
    const Eigen::VectorXd theta = model.theta_or_default();
    if (issues.empty()) {
        try {
            SparseMat Q = prior_precision(model, theta);
            Eigen::SimplicialLLT<SparseMat> llt(Q);
            if (llt.info() != Eigen::Success) {
                issues.push_back({"prior", "prior precision is not positive definite"});
            }
        } catch (const std::exception& e) {
            issues.push_back({"prior", e.what()});
        }
    }
    if (data.y.size() == n) {
        for (int i = 0; i < n; ++i) {
            try {
                (void)loglik_eval(model.lik, data.y[i], 0.0, theta);
            } catch (const std::exception& e) {
                issues.push_back({"data.y[" + std::to_string(i) + "]", e.what()});
            }
        }
    }
    return issues;
}

inline void validate_or_throw(const LatentModel& model, const Dataset& data) {
    const auto issues = validate_model(model, data);
    if (!issues.empty()) {
        std::string msg = "model validation failed:";
        for (const auto& is : issues) msg += "\n  [" + is.where + "] " + is.message;
        throw DomainError(msg);
    }
}

} // namespace skewlap
