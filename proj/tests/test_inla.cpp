#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "skewlap/inla.hpp"
#include "skewlap/math/normal.hpp"
#include "skewlap/model.hpp"
#include "skewlap/rng.hpp"

using namespace skewlap;
using Catch::Approx;

namespace {

LatentModel fixed_effect_model(const Eigen::MatrixXd& x, Likelihood lik,
                               const std::vector<double>& prior_prec) {
    LatentModel m;
    const int n = static_cast<int>(x.rows());
    const int p = static_cast<int>(x.cols());
    std::vector<Triplet> trip;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) trip.emplace_back(i, j, x(i, j));
    }
    m.A.resize(n, p);
    m.A.setFromTriplets(trip.begin(), trip.end());
    for (int j = 0; j < p; ++j) {
        PriorBlock b;
        b.kind = BlockKind::FixedEffect;
        b.count = 1;
        b.value = prior_prec[static_cast<std::size_t>(j)];
        b.name = "beta" + std::to_string(j);
        m.blocks.push_back(b);
    }
    m.lik = lik;
    return m;
}

struct TestCase {
    LatentModel model;
    Dataset data;
};

// Gaussian observations with a free log precision: everything about this
// model has a closed form.
TestCase conjugate_case(int n) {
    RngStream rng = RngStream(53).substream("inla-conjugate");
    Eigen::MatrixXd x(n, 2);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = 1.0;
        x(i, 1) = rng.normal();
    }
    GaussianObs lik;
    lik.log_precision_index = 0;
    TestCase tc{fixed_effect_model(x, lik, {0.7, 1.3}), {}};
    tc.model.theta_dim = 1;
    tc.data.y.resize(n);
    for (int i = 0; i < n; ++i) tc.data.y[i] = 0.4 + 0.9 * x(i, 1) + rng.normal();
    return tc;
}

TestCase student_t_case(int n, bool fix_tau) {
    RngStream rng = RngStream(53).substream("inla-student");
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(n, 1);
    StudentT lik;
    lik.dof = 4.0;
    lik.log_precision_index = fix_tau ? -1 : 0;
    TestCase tc{fixed_effect_model(x, lik, {0.1}), {}};
    if (!fix_tau) tc.model.theta_dim = 1;
    tc.data.y.resize(n);
    for (int i = 0; i < n; ++i) tc.data.y[i] = 0.3 + rng.student_t(4);
    return tc;
}

TestCase small_poisson_case() {
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(6, 1);
    TestCase tc{fixed_effect_model(x, Poisson{}, {1.0}), {}};
    tc.model.blocks[0].name = "beta";
    tc.data.y.resize(6);
    tc.data.y << 0.0, 1.0, 0.0, 2.0, 1.0, 0.0;
    return tc;
}

double dense_gaussian_logpdf(const Eigen::VectorXd& y, const Eigen::MatrixXd& cov) {
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    double log_det = 0.0;
    for (int i = 0; i < cov.rows(); ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
    return -0.5 * (y.size() * std::log(2.0 * M_PI) + log_det + y.dot(llt.solve(y)));
}

// Marginal likelihood of the conjugate case: y ~ N(0, I/tau + X Lambda^-1 X^T).
double conjugate_evidence(const TestCase& tc, double theta) {
    const Eigen::MatrixXd x = Eigen::MatrixXd(tc.model.A);
    const int n = static_cast<int>(x.rows());
    Eigen::VectorXd prior_var(x.cols());
    for (int j = 0; j < x.cols(); ++j) prior_var[j] = 1.0 / tc.model.blocks[j].value;
    const Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(n, n) / std::exp(theta) +
                                x * prior_var.asDiagonal() * x.transpose();
    return dense_gaussian_logpdf(tc.data.y, cov);
}

// Exact conditional posterior of the conjugate case at a given theta.
void conjugate_posterior(const TestCase& tc, double theta, Eigen::VectorXd& mean,
                         Eigen::MatrixXd& cov) {
    const Eigen::MatrixXd x = Eigen::MatrixXd(tc.model.A);
    const double tau = std::exp(theta);
    Eigen::MatrixXd prec = tau * x.transpose() * x;
    for (int j = 0; j < x.cols(); ++j) prec(j, j) += tc.model.blocks[j].value;
    cov = prec.inverse();
    mean = cov * (tau * x.transpose() * tc.data.y);
}

} // namespace

TEST_CASE("hyperposterior matches the conjugate evidence") {
    const TestCase tc = conjugate_case(7);
    for (const double theta : {-0.5, 0.0, 0.7}) {
        const Eigen::VectorXd th = Eigen::VectorXd::Constant(1, theta);
        const double expected = conjugate_evidence(tc, theta) + tc.model.log_hyperprior(th);
        REQUIRE(log_theta_posterior(tc.model, tc.data, th) == Approx(expected).margin(1e-10));
    }
}

TEST_CASE("hyperposterior is invariant to latent reordering") {
    RngStream rng = RngStream(53).substream("inla-reorder");
    const int n = 9;
    Eigen::VectorXd x(n);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        x[i] = rng.normal();
        y[i] = rng.poisson(std::exp(0.3 + 0.2 * x[i]));
    }

    const auto build = [&](bool iid_first) {
        LatentModel m;
        std::vector<Triplet> trip;
        const int beta_col = iid_first ? 3 : 0;
        const int iid_col = iid_first ? 0 : 1;
        for (int i = 0; i < n; ++i) {
            trip.emplace_back(i, beta_col, x[i]);
            trip.emplace_back(i, iid_col + i % 3, 1.0);
        }
        m.A.resize(n, 4);
        m.A.setFromTriplets(trip.begin(), trip.end());
        PriorBlock beta{BlockKind::FixedEffect, 1, 0.8, -1, "beta"};
        PriorBlock group{BlockKind::Iid, 3, 2.0, -1, "u"};
        if (iid_first) {
            m.blocks = {group, beta};
        } else {
            m.blocks = {beta, group};
        }
        m.lik = Poisson{};
        return m;
    };

    Dataset data;
    data.y = y;
    const Eigen::VectorXd theta;
    const double a = log_theta_posterior(build(false), data, theta);
    const double b = log_theta_posterior(build(true), data, theta);
    REQUIRE(a == Approx(b).margin(1e-9));
}

TEST_CASE("hyperposterior stays finite across the student-t precision sweep") {
    TestCase tc = student_t_case(8, false);
    tc.data.y[2] = 3.0; // make the scale genuinely uncertain
    tc.data.y[6] = 5.0;
    for (int k = 0; k <= 20; ++k) {
        const double tau = 0.1 * std::pow(100.0, k / 20.0);
        const Eigen::VectorXd th = Eigen::VectorXd::Constant(1, std::log(tau));
        REQUIRE(std::isfinite(log_theta_posterior(tc.model, tc.data, th)));
    }
}

TEST_CASE("explore_theta honors fixed hyperparameters") {
    TestCase tc = student_t_case(8, false);
    tc.model.fixed_theta = Eigen::VectorXd::Zero(1);
    const ThetaGrid grid = explore_theta(tc.model, tc.data);
    REQUIRE(grid.points.rows() == 1);
    REQUIRE(grid.points(0, 0) == 0.0);
    REQUIRE(grid.log_weights[0] == 0.0);
    REQUIRE(grid.mode.size() == 1);
    REQUIRE(grid.curvature.isZero());

    const TestCase fixed = small_poisson_case();
    const ThetaGrid empty = explore_theta(fixed.model, fixed.data);
    REQUIRE(empty.points.rows() == 1);
    REQUIRE(empty.points.cols() == 0);
    REQUIRE(empty.log_weights[0] == 0.0);
}

TEST_CASE("explore_theta grid is symmetric for a quadratic hyperposterior") {
    // Latent field pinned at zero by a huge prior precision and y = 0: the
    // evidence is linear in theta, so the hyperposterior is exactly the
    // Gaussian hyperprior shifted by n/2 * sd^2.
    const int n = 5;
    GaussianObs lik;
    lik.log_precision_index = 0;
    TestCase tc{fixed_effect_model(Eigen::MatrixXd::Ones(n, 1), lik, {1e10}), {}};
    tc.model.theta_dim = 1;
    tc.model.hyper_mean = Eigen::VectorXd::Zero(1);
    tc.model.hyper_sd = Eigen::VectorXd::Constant(1, 0.3);
    tc.data.y = Eigen::VectorXd::Zero(n);

    const ThetaGrid grid = explore_theta(tc.model, tc.data);
    const double mode_expected = 0.5 * n * 0.3 * 0.3;
    REQUIRE(grid.mode[0] == Approx(mode_expected).margin(1e-4));
    REQUIRE(grid.curvature(0, 0) == Approx(1.0 / (0.3 * 0.3)).epsilon(1e-2));

    // drop rule keeps |z| <= sqrt(2 * 2.5) = 2.236 sd, i.e. 4 half-sd steps
    const int m = static_cast<int>(grid.points.rows());
    REQUIRE(m == 9);
    const Eigen::VectorXd w = grid.log_weights.array().exp();
    REQUIRE(w.sum() == Approx(1.0).margin(1e-12));
    double top = -1.0;
    int top_at = -1;
    for (int i = 0; i < m; ++i) {
        if (w[i] > top) {
            top = w[i];
            top_at = i;
        }
    }
    REQUIRE(grid.points(top_at, 0) == Approx(grid.mode[0]).margin(1e-12));
    for (int i = 0; i < m; ++i) {
        const int j = m - 1 - i;
        REQUIRE(grid.points(i, 0) + grid.points(j, 0) == Approx(2.0 * grid.mode[0]).margin(1e-5));
        REQUIRE(w[i] == Approx(w[j]).margin(1e-4));
    }
}

TEST_CASE("gaussian marginals reproduce the conjugate posterior") {
    TestCase tc = conjugate_case(7);
    tc.model.theta_dim = 1;
    tc.model.fixed_theta = Eigen::VectorXd::Constant(1, std::log(2.0));
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    conjugate_posterior(tc, std::log(2.0), mean, cov);

    const FitReport report = fit_inla(tc.model, tc.data, Strategy::Gaussian);
    REQUIRE(report.strategy == "gaussian");
    REQUIRE(report.marginals.size() == 2);
    REQUIRE(report.warnings.empty());
    for (int l = 0; l < 2; ++l) {
        const auto& marg = report.marginals[static_cast<std::size_t>(l)];
        REQUIRE(marg.name == "beta" + std::to_string(l));
        const double sd = std::sqrt(cov(l, l));
        REQUIRE(marg.mean == Approx(mean[l]).margin(1e-8));
        REQUIRE(marg.sd == Approx(sd).margin(1e-8));
        REQUIRE(std::abs(marg.skewness) < 1e-8);
        REQUIRE(grid_mass(marg.density) == Approx(1.0).margin(1e-12));
        for (int i = 0; i < marg.density.x.size(); ++i) {
            const double exact = math::norm_pdf((marg.density.x[i] - mean[l]) / sd) / sd;
            REQUIRE(marg.density.pdf[i] == Approx(exact).margin(1e-10));
        }
    }
}

TEST_CASE("mixture marginals follow the two-point grid") {
    const TestCase tc = conjugate_case(7);
    ThetaGrid grid;
    grid.points.resize(2, 1);
    grid.points << -0.4, 0.6;
    grid.log_weights.resize(2);
    grid.log_weights << std::log(0.3), std::log(0.7);
    grid.mode = Eigen::VectorXd::Constant(1, 0.6);
    grid.curvature = Eigen::MatrixXd::Identity(1, 1);

    const FitReport report = latent_marginals(tc.model, tc.data, grid, Strategy::Gaussian);
    Eigen::VectorXd mean_a, mean_b;
    Eigen::MatrixXd cov_a, cov_b;
    conjugate_posterior(tc, -0.4, mean_a, cov_a);
    conjugate_posterior(tc, 0.6, mean_b, cov_b);
    for (int l = 0; l < 2; ++l) {
        const double mixture_mean = 0.3 * mean_a[l] + 0.7 * mean_b[l];
        const double mixture_var = 0.3 * (cov_a(l, l) + mean_a[l] * mean_a[l]) +
                                   0.7 * (cov_b(l, l) + mean_b[l] * mean_b[l]) -
                                   mixture_mean * mixture_mean;
        const auto& marg = report.marginals[static_cast<std::size_t>(l)];
        REQUIRE(marg.mean == Approx(mixture_mean).margin(1e-8));
        REQUIRE(marg.sd == Approx(std::sqrt(mixture_var)).margin(1e-8));
    }

    // moment algebra on a hand-built equal-weight N(+1,1) / N(-1,1) mixture
    DensityGrid mix = make_uniform_grid(0.0, 9.0, 2001);
    for (int i = 0; i < mix.x.size(); ++i) {
        mix.pdf[i] =
            0.5 * math::norm_pdf(mix.x[i] - 1.0) + 0.5 * math::norm_pdf(mix.x[i] + 1.0);
    }
    REQUIRE(grid_mean(mix) == Approx(0.0).margin(1e-10));
    REQUIRE(grid_variance(mix) == Approx(2.0).margin(1e-8));
}

TEST_CASE("gaussian and vb-mean coincide for a gaussian likelihood") {
    TestCase tc = conjugate_case(7);
    tc.model.fixed_theta = Eigen::VectorXd::Zero(1);
    const FitReport plain = fit_inla(tc.model, tc.data, Strategy::Gaussian);
    const FitReport corrected = fit_inla(tc.model, tc.data, Strategy::VbMean);
    REQUIRE(corrected.strategy == "vb-mean");
    for (std::size_t l = 0; l < plain.marginals.size(); ++l) {
        REQUIRE(plain.marginals[l].mean == corrected.marginals[l].mean);
        REQUIRE(plain.marginals[l].sd == corrected.marginals[l].sd);
        REQUIRE(plain.marginals[l].density.pdf == corrected.marginals[l].density.pdf);
    }
    REQUIRE(std::isnan(plain.vb_mean_objective));
    REQUIRE(std::isfinite(corrected.vb_mean_objective));
}

TEST_CASE("variance correction widens the student-t fixed-effect sd") {
    TestCase tc = student_t_case(12, true);
    tc.data.y[3] = 4.0;
    tc.data.y[9] = -3.5;
    const FitReport gauss = fit_inla(tc.model, tc.data, Strategy::Gaussian);
    const FitReport vb_mean = fit_inla(tc.model, tc.data, Strategy::VbMean);
    const FitReport vb_full = fit_inla(tc.model, tc.data, Strategy::VbMeanVar);

    // the mean correction leaves the precision untouched
    REQUIRE(vb_mean.marginals[0].sd == gauss.marginals[0].sd);
    REQUIRE(vb_mean.marginals[0].mean != gauss.marginals[0].mean);
    REQUIRE(vb_full.marginals[0].sd > gauss.marginals[0].sd);
    for (const auto& report : {&gauss, &vb_mean, &vb_full}) {
        REQUIRE(grid_mass(report->marginals[0].density) == Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("failed theta points are dropped with a warning") {
    const TestCase tc = conjugate_case(7);
    ThetaGrid grid;
    grid.points.resize(2, 1);
    grid.points << 0.0, 800.0; // exp(800) overflows the site precision
    grid.log_weights.resize(2);
    grid.log_weights << std::log(0.5), std::log(0.5);
    grid.mode = Eigen::VectorXd::Zero(1);
    grid.curvature = Eigen::MatrixXd::Identity(1, 1);

    const FitReport report = latent_marginals(tc.model, tc.data, grid, Strategy::Gaussian);
    REQUIRE(report.warnings.size() == 1);
    REQUIRE(report.warnings[0].find("theta point 1 dropped") != std::string::npos);

    ThetaGrid only;
    only.points = Eigen::MatrixXd::Zero(1, 1);
    only.log_weights = Eigen::VectorXd::Zero(1);
    only.mode = Eigen::VectorXd::Zero(1);
    only.curvature = Eigen::MatrixXd::Identity(1, 1);
    const FitReport solo = latent_marginals(tc.model, tc.data, only, Strategy::Gaussian);
    REQUIRE(report.marginals[0].mean == solo.marginals[0].mean);
    REQUIRE(report.marginals[0].sd == solo.marginals[0].sd);
}

TEST_CASE("every theta point failing raises NonConvergence") {
    TestCase tc = small_poisson_case();
    tc.data.y[2] = -1.0; // invalid Poisson response
    ThetaGrid grid;
    grid.points.resize(1, 0);
    grid.log_weights = Eigen::VectorXd::Zero(1);
    grid.mode = Eigen::VectorXd();
    grid.curvature = Eigen::MatrixXd();
    REQUIRE_THROWS_AS(latent_marginals(tc.model, tc.data, grid, Strategy::Gaussian),
                      NonConvergence);
}

TEST_CASE("pipeline input validation") {
    SECTION("more than two free hyperparameters") {
        TestCase tc = conjugate_case(7);
        tc.model.theta_dim = 3;
        REQUIRE_THROWS_AS(explore_theta(tc.model, tc.data), DomainError);
    }
    SECTION("grid shape mismatches") {
        const TestCase tc = conjugate_case(7);
        ThetaGrid grid;
        grid.points = Eigen::MatrixXd::Zero(2, 1);
        grid.log_weights = Eigen::VectorXd::Zero(3);
        REQUIRE_THROWS_AS(latent_marginals(tc.model, tc.data, grid, Strategy::Gaussian),
                          DimensionMismatch);
        grid.log_weights = Eigen::VectorXd::Zero(2);
        grid.points = Eigen::MatrixXd::Zero(2, 2);
        REQUIRE_THROWS_AS(latent_marginals(tc.model, tc.data, grid, Strategy::Gaussian),
                          DimensionMismatch);
        grid.points = Eigen::MatrixXd(0, 1);
        grid.log_weights = Eigen::VectorXd();
        REQUIRE_THROWS_AS(latent_marginals(tc.model, tc.data, grid, Strategy::Gaussian),
                          DomainError);
    }
    SECTION("invalid model is rejected") {
        TestCase tc = small_poisson_case();
        tc.model.blocks[0].count = 0;
        REQUIRE_THROWS_AS(fit_inla(tc.model, tc.data, Strategy::Gaussian), DomainError);
    }
    SECTION("strategy names round-trip") {
        for (const Strategy s : all_strategies()) {
            REQUIRE(parse_strategy(strategy_name(s)) == s);
        }
        REQUIRE_THROWS_AS(parse_strategy("bogus"), DomainError);
    }
}

TEST_CASE("sgc-vb fits are deterministic and carry the optimized skewness") {
    const TestCase tc = small_poisson_case();
    const FitReport a = fit_inla(tc.model, tc.data, Strategy::SgcVb);
    const FitReport b = fit_inla(tc.model, tc.data, Strategy::SgcVb);
    REQUIRE(a.strategy == "sgc-vb");
    REQUIRE(a.marginals[0].mean == b.marginals[0].mean);
    REQUIRE(a.marginals[0].sd == b.marginals[0].sd);
    REQUIRE(a.marginals[0].skewness == b.marginals[0].skewness);
    REQUIRE(a.marginals[0].density.pdf == b.marginals[0].density.pdf);

    // the reported marginal skewness is the optimizer's, through the mixture
    REQUIRE(a.marginals[0].skewness < -0.1);
    REQUIRE(std::isfinite(a.vb_mean_objective));
    REQUIRE(std::isfinite(a.vb_var_objective));
    REQUIRE(std::isfinite(a.skew_objective));
    REQUIRE(a.stage3_seconds > 0.0);
    REQUIRE(a.warnings.empty());
}

TEST_CASE("marginal densities export as long csv") {
    const TestCase tc = small_poisson_case();
    InlaOptions opts;
    opts.marginal_points = 11;
    const FitReport report = fit_inla(tc.model, tc.data, Strategy::Gaussian, opts);
    std::ostringstream os;
    write_marginals_csv(os, report);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    REQUIRE(line == "component,abscissa,density");
    int rows = 0;
    while (std::getline(is, line)) {
        REQUIRE(line.rfind("beta,", 0) == 0);
        ++rows;
    }
    REQUIRE(rows == 11);
}
