#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "skewlap/gaussian.hpp"
#include "skewlap/math/quadrature.hpp"
#include "skewlap/model.hpp"
#include "skewlap/rng.hpp"
#include "skewlap/vb.hpp"

using namespace skewlap;

namespace {

LatentModel fixed_effect_model(const Eigen::MatrixXd& x, Likelihood lik, double prior_prec) {
    LatentModel m;
    const int n = static_cast<int>(x.rows());
    const int p = static_cast<int>(x.cols());
    std::vector<Triplet> trip;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) trip.emplace_back(i, j, x(i, j));
    }
    m.A.resize(n, p);
    m.A.setFromTriplets(trip.begin(), trip.end());
    PriorBlock b;
    b.kind = BlockKind::FixedEffect;
    b.count = p;
    b.value = prior_prec;
    b.name = "beta";
    m.blocks.push_back(b);
    m.lik = lik;
    return m;
}

struct TestCase {
    LatentModel model;
    Dataset data;
};

TestCase poisson_intercept_case(int n) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(n, 1);
    TestCase tc{fixed_effect_model(x, Poisson{}, 1.0), {}};
    RngStream rng = RngStream(91).substream("vb-poisson-intercept");
    tc.data.y.resize(n);
    for (int i = 0; i < n; ++i) tc.data.y[i] = rng.poisson(std::exp(0.8));
    return tc;
}

TestCase poisson_slope_case(int n) {
    RngStream rng = RngStream(91).substream("vb-poisson-slope");
    Eigen::MatrixXd x(n, 2);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = 1.0;
        x(i, 1) = rng.normal();
    }
    TestCase tc{fixed_effect_model(x, Poisson{}, 0.1), {}};
    tc.data.y.resize(n);
    for (int i = 0; i < n; ++i) {
        tc.data.y[i] = rng.poisson(std::exp(0.5 * x(i, 0) + 0.3 * x(i, 1)));
    }
    return tc;
}

TestCase student_t_case(int n) {
    RngStream rng = RngStream(91).substream("vb-student");
    Eigen::MatrixXd x(n, 2);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = 1.0;
        x(i, 1) = rng.normal();
    }
    StudentT lik;
    lik.dof = 4.0;
    lik.fixed_log_precision = 0.0;
    TestCase tc{fixed_effect_model(x, lik, 0.01), {}};
    tc.data.y.resize(n);
    for (int i = 0; i < n; ++i) tc.data.y[i] = x(i, 1) + rng.student_t(4);
    return tc;
}

TestCase gpd_case(int n) {
    RngStream rng = RngStream(91).substream("vb-gpd");
    Eigen::MatrixXd x(n, 2);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = 1.0;
        x(i, 1) = rng.normal();
    }
    GeneralizedPareto lik;
    lik.tail_xi = 0.3;
    lik.quantile_level = 0.5;
    TestCase tc{fixed_effect_model(x, lik, 0.01), {}};
    tc.data.y.resize(n);
    for (int i = 0; i < n; ++i) {
        const double eta = 1.0 + 1.0 * x(i, 1);
        tc.data.y[i] = rng.gpd(gpd_scale(eta, 0.3, 0.5), 0.3);
    }
    return tc;
}

TestCase gaussian_case(int n) {
    RngStream rng = RngStream(91).substream("vb-gaussian");
    Eigen::MatrixXd x(n, 2);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = 1.0;
        x(i, 1) = rng.normal();
    }
    GaussianObs lik;
    lik.fixed_log_precision = std::log(2.0);
    TestCase tc{fixed_effect_model(x, lik, 0.5), {}};
    tc.data.y.resize(n);
    for (int i = 0; i < n; ++i) {
        tc.data.y[i] = 0.4 * x(i, 0) - 0.7 * x(i, 1) + rng.normal() / std::sqrt(2.0);
    }
    return tc;
}

Eigen::VectorXd empty_theta() { return Eigen::VectorXd(); }

} // namespace

TEST_CASE("solve_corrected_mean", "[vb]") {
    auto tc = poisson_slope_case(40);
    const auto approx = laplace_fit(tc.model, tc.data, empty_theta());
    const int p = tc.model.p();

    SECTION("zero delta leaves the mean unchanged") {
        const Eigen::VectorXd mu = solve_corrected_mean(tc.model, approx, Eigen::VectorXd::Zero(p));
        REQUIRE((mu - approx.mean).lpNorm<Eigen::Infinity>() < 1e-10);
    }

    SECTION("unit delta adds a column of the covariance") {
        for (int j = 0; j < p; ++j) {
            Eigen::VectorXd delta = Eigen::VectorXd::Zero(p);
            delta[j] = 1.0;
            const Eigen::VectorXd mu = solve_corrected_mean(tc.model, approx, delta);
            const Eigen::VectorXd diff = mu - approx.mean;
            const auto& sel = approx.selected_inverse();
            for (int i = 0; i < p; ++i) {
                REQUIRE(diff[i] == Catch::Approx(sel.entry(i, j)).margin(1e-12));
                REQUIRE(std::abs(diff[i]) > 0.0); // low-rank input, full-rank effect
            }
        }
    }

    SECTION("dimension mismatch is rejected") {
        REQUIRE_THROWS_AS(solve_corrected_mean(tc.model, approx, Eigen::VectorXd::Zero(p + 1)),
                          DimensionMismatch);
    }
}

TEST_CASE("mean objective is exactly quadratic for gaussian observations", "[vb]") {
    auto tc = gaussian_case(20);
    const auto approx = laplace_fit(tc.model, tc.data, empty_theta());
    const CorrectionIndexSet set{{0, 1}};
    const int p = tc.model.p();

    const double f0 = vb_mean_objective(tc.model, tc.data, approx, Eigen::VectorXd::Zero(p), set);
    RngStream rng = RngStream(7).substream("quad-dir");
    for (int rep = 0; rep < 4; ++rep) {
        Eigen::VectorXd dir(p);
        for (int j = 0; j < p; ++j) dir[j] = rng.normal();
        // second difference along the direction must not depend on the scale
        double ratio_prev = 0.0;
        for (const double h : {0.25, 0.5, 1.0}) {
            const double fp = vb_mean_objective(tc.model, tc.data, approx, h * dir, set);
            const double fm = vb_mean_objective(tc.model, tc.data, approx, -h * dir, set);
            REQUIRE(fp >= f0); // minimum sits at delta = 0
            REQUIRE(fm >= f0);
            const double ratio = (fp + fm - 2.0 * f0) / (h * h);
            if (ratio_prev != 0.0) {
                REQUIRE(ratio == Catch::Approx(ratio_prev).epsilon(1e-7));
            }
            ratio_prev = ratio;
        }
    }
}

TEST_CASE("poisson intercept objective matches brute-force integration", "[vb]") {
    auto tc = poisson_intercept_case(30);
    const auto approx = laplace_fit(tc.model, tc.data, empty_theta());
    const CorrectionIndexSet set{{0}};

    const double q_f = approx.Q.coeff(0, 0);
    const double q_theta = 1.0;
    const double v = 1.0 / q_f;
    const double b = (tc.model.A.transpose() * approx.site.b_vec)(0);

    for (const double delta : {0.0, 0.35, -0.2}) {
        const double mu = (b + delta) / q_f;
        // trapezoid oracle for each expected negative log likelihood
        double lik = 0.0;
        const int grid_n = 8001;
        const double half_width = 10.0 * std::sqrt(v);
        const double step = 2.0 * half_width / (grid_n - 1);
        for (int i = 0; i < tc.model.n(); ++i) {
            double acc = 0.0;
            for (int g = 0; g < grid_n; ++g) {
                const double eta = mu - half_width + g * step;
                const double w = (g == 0 || g == grid_n - 1) ? 0.5 : 1.0;
                const double dens = math::norm_pdf((eta - mu) / std::sqrt(v)) / std::sqrt(v);
                acc += w * dens * (-loglik_eval(tc.model.lik, tc.data.y[i], eta, empty_theta()).value);
            }
            lik += acc * step;
        }
        const double kld = 0.5 * (q_theta * v + q_theta * mu * mu - 1.0 +
                                  std::log(q_f) - std::log(q_theta));
        Eigen::VectorXd d(1);
        d[0] = delta;
        const double got = vb_mean_objective(tc.model, tc.data, approx, d, set);
        REQUIRE(got == Catch::Approx(lik + kld).margin(1e-6));
    }
}

TEST_CASE("mean objective descends along the negative finite-difference gradient",
          "[vb]") {
    auto tc = student_t_case(10);
    const auto approx = laplace_fit(tc.model, tc.data, empty_theta());
    const CorrectionIndexSet set{{0, 1}};
    const int p = tc.model.p();

    const double f0 = vb_mean_objective(tc.model, tc.data, approx, Eigen::VectorXd::Zero(p), set);
    Eigen::VectorXd grad(p);
    const double h = 1e-5;
    for (int j = 0; j < p; ++j) {
        Eigen::VectorXd d = Eigen::VectorXd::Zero(p);
        d[j] = h;
        const double fp = vb_mean_objective(tc.model, tc.data, approx, d, set);
        const double fm = vb_mean_objective(tc.model, tc.data, approx, -d, set);
        grad[j] = (fp - fm) / (2.0 * h);
    }
    REQUIRE(grad.norm() > 0.0);
    const Eigen::VectorXd step = -1e-3 * grad / grad.norm();
    REQUIRE(vb_mean_objective(tc.model, tc.data, approx, step, set) < f0);
}

TEST_CASE("analytic gradients match finite differences", "[vb]") {
    for (auto* make : {&student_t_case, &poisson_slope_case}) {
        auto tc = (*make)(12);
        const auto approx = laplace_fit(tc.model, tc.data, empty_theta());
        const CorrectionIndexSet set{{0, 1}};
        const auto ctx = detail::make_vb_context(tc.model, tc.data, approx, set, 15);
        RngStream rng = RngStream(5).substream("fd-delta");
        const double q_min = std::min(approx.Q.coeff(0, 0), approx.Q.coeff(1, 1));

        for (int rep = 0; rep < 5; ++rep) {
            Eigen::VectorXd red(2);
            red[0] = 0.4 * rng.normal();
            red[1] = 0.4 * rng.normal();

            SECTION("mean, rep " + std::to_string(rep) + (make == &student_t_case ? " t" : " p")) {
                Eigen::VectorXd g;
                detail::mean_objective_impl(ctx, red, &g);
                for (int j = 0; j < 2; ++j) {
                    const double h = 1e-5;
                    Eigen::VectorXd rp = red, rm = red;
                    rp[j] += h;
                    rm[j] -= h;
                    const double fd = (detail::mean_objective_impl(ctx, rp, nullptr) -
                                       detail::mean_objective_impl(ctx, rm, nullptr)) /
                                      (2.0 * h);
                    REQUIRE(g[j] == Catch::Approx(fd).epsilon(1e-4).margin(1e-8));
                }
            }

            SECTION("variance, rep " + std::to_string(rep) +
                    (make == &student_t_case ? " t" : " p")) {
                // keep the perturbed precision comfortably SPD
                Eigen::VectorXd red_v = red.cwiseMax(-0.4 * q_min);
                detail::VarEvalWorkspace ws;
                Eigen::VectorXd g;
                detail::var_objective_impl(ctx, approx.mean, red_v, &g, ws);
                for (int j = 0; j < 2; ++j) {
                    const double h = 1e-5;
                    Eigen::VectorXd rp = red_v, rm = red_v;
                    rp[j] += h;
                    rm[j] -= h;
                    const double fd =
                        (detail::var_objective_impl(ctx, approx.mean, rp, nullptr, ws) -
                         detail::var_objective_impl(ctx, approx.mean, rm, nullptr, ws)) /
                        (2.0 * h);
                    REQUIRE(g[j] == Catch::Approx(fd).epsilon(1e-4).margin(1e-8));
                }
            }
        }
    }
}

TEST_CASE("gaussian observations need no correction", "[vb]") {
    auto tc = gaussian_case(25);
    const auto approx = laplace_fit(tc.model, tc.data, empty_theta());
    const auto set = default_correction_set(tc.model);

    const auto mean_corr = vb_mean_correct(tc.model, tc.data, approx, set);
    REQUIRE(mean_corr.delta.lpNorm<Eigen::Infinity>() <= 1e-6);
    REQUIRE((mean_corr.corrected_mean - approx.mean).lpNorm<Eigen::Infinity>() <= 1e-6);

    const auto var_corr = vb_var_correct(tc.model, tc.data, approx, mean_corr, set);
    REQUIRE(var_corr.delta.lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("two-dimensional poisson mean correction lands on the quadrature mean",
          "[vb]") {
    auto tc = poisson_slope_case(40);
    const auto approx = laplace_fit(tc.model, tc.data, empty_theta());
    const auto set = default_correction_set(tc.model);
    const auto corr = vb_mean_correct(tc.model, tc.data, approx, set);

    // dense grid oracle for the exact posterior over (beta0, beta1)
    const auto& sel = approx.selected_inverse();
    const double sd0 = std::sqrt(sel.entry(0, 0));
    const double sd1 = std::sqrt(sel.entry(1, 1));
    const int g = 241;
    const double span = 7.0;
    Eigen::MatrixXd logpost(g, g);
    double logmax = -1e300;
    const SparseMat q_theta = prior_precision(tc.model, empty_theta());
    for (int a = 0; a < g; ++a) {
        for (int b = 0; b < g; ++b) {
            Eigen::VectorXd beta(2);
            beta[0] = approx.mean[0] + span * sd0 * (2.0 * a / (g - 1.0) - 1.0);
            beta[1] = approx.mean[1] + span * sd1 * (2.0 * b / (g - 1.0) - 1.0);
            logpost(a, b) = joint_latent_logdens(tc.model, tc.data, beta, empty_theta(), q_theta);
            logmax = std::max(logmax, logpost(a, b));
        }
    }
    double mass = 0.0, m0 = 0.0, m1 = 0.0;
    for (int a = 0; a < g; ++a) {
        for (int b = 0; b < g; ++b) {
            const double w = std::exp(logpost(a, b) - logmax);
            const double beta0 = approx.mean[0] + span * sd0 * (2.0 * a / (g - 1.0) - 1.0);
            const double beta1 = approx.mean[1] + span * sd1 * (2.0 * b / (g - 1.0) - 1.0);
            mass += w;
            m0 += w * beta0;
            m1 += w * beta1;
        }
    }
    m0 /= mass;
    m1 /= mass;

    REQUIRE(std::abs(corr.corrected_mean[0] - m0) <= 0.01 * sd0);
    REQUIRE(std::abs(corr.corrected_mean[1] - m1) <= 0.01 * sd1);
}

TEST_CASE("variance objective at zero matches the mean objective", "[vb]") {
    auto tc = student_t_case(10);
    const auto approx = laplace_fit(tc.model, tc.data, empty_theta());
    const auto set = default_correction_set(tc.model);
    const auto mean_corr = vb_mean_correct(tc.model, tc.data, approx, set);

    const double from_var = vb_var_objective(tc.model, tc.data, approx,
                                             mean_corr.corrected_mean,
                                             Eigen::VectorXd::Zero(tc.model.p()), set);
    const double from_mean =
        vb_mean_objective(tc.model, tc.data, approx, mean_corr.delta, set);
    REQUIRE(from_var == Catch::Approx(from_mean).epsilon(1e-10));
}

TEST_CASE("scalar model variance objective reduces to the hand formula", "[vb]") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(1, 1);
    TestCase tc{fixed_effect_model(x, Poisson{}, 0.7), {}};
    tc.data.y.resize(1);
    tc.data.y[0] = 3.0;
    const auto approx = laplace_fit(tc.model, tc.data, empty_theta());
    const CorrectionIndexSet set{{0}};

    const double q_f = approx.Q.coeff(0, 0);
    const double q_theta = 0.7;
    const double mu = approx.mean[0];
    for (const double delta : {-0.3, 0.0, 0.9}) {
        REQUIRE(q_f + delta > 0.0);
        const double e_nll = math::gauss_hermite_expect(
            [&](double eta) {
                return -loglik_eval(tc.model.lik, tc.data.y[0], eta, empty_theta()).value;
            },
            mu, 1.0 / (q_f + delta), 15);
        const double hand = e_nll + 0.5 * (q_theta / (q_f + delta) + std::log(q_f + delta) +
                                           q_theta * mu * mu - 1.0 - std::log(q_theta));
        Eigen::VectorXd d(1);
        d[0] = delta;
        const double got = vb_var_objective(tc.model, tc.data, approx, approx.mean, d, set);
        REQUIRE(got == Catch::Approx(hand).epsilon(1e-12).margin(1e-12));
    }
}

TEST_CASE("variance objective rejects indefinite perturbations", "[vb]") {
    auto tc = poisson_intercept_case(10);
    const auto approx = laplace_fit(tc.model, tc.data, empty_theta());
    const CorrectionIndexSet set{{0}};
    Eigen::VectorXd d(1);
    d[0] = -approx.Q.coeff(0, 0) - 1.0;
    REQUIRE_THROWS_AS(
        vb_var_objective(tc.model, tc.data, approx, approx.mean, d, set),
        CholeskyFailure);
}

TEST_CASE("heavy tails inflate the corrected variances", "[vb]") {
    for (auto* make : {&student_t_case, &gpd_case}) {
        auto tc = (*make)(10);
        const auto approx = laplace_fit(tc.model, tc.data, empty_theta());
        const auto set = default_correction_set(tc.model);
        const auto mean_corr = vb_mean_correct(tc.model, tc.data, approx, set);
        const auto var_corr = vb_var_correct(tc.model, tc.data, approx, mean_corr, set);

        // never returns an indefinite corrected precision
        SparseLLT check(var_corr.corrected_precision);
        REQUIRE(check.info() == Eigen::Success);

        // the optimizer never worsens the bound
        const double at_zero = vb_var_objective(tc.model, tc.data, approx,
                                                mean_corr.corrected_mean,
                                                Eigen::VectorXd::Zero(tc.model.p()), set);
        REQUIRE(var_corr.objective <= at_zero + 1e-12);

        // sd ordering for the fixed effects: mean-corrected (Gaussian spread)
        // below mean-and-variance corrected
        const auto& sel = approx.selected_inverse();
        for (const int j : set.indices) {
            REQUIRE(std::sqrt(var_corr.latent_var[j]) >= std::sqrt(sel.entry(j, j)) - 1e-9);
        }
    }
}

TEST_CASE("objective is stable in the quadrature order", "[vb]") {
    auto tc = poisson_slope_case(25);
    const auto approx = laplace_fit(tc.model, tc.data, empty_theta());
    const CorrectionIndexSet set{{0, 1}};
    Eigen::VectorXd d(2);
    d << 0.2, -0.1;
    Eigen::VectorXd full = Eigen::VectorXd::Zero(2);
    full[0] = d[0];
    full[1] = d[1];
    const double v15 = vb_mean_objective(tc.model, tc.data, approx, full, set, 15);
    const double v51 = vb_mean_objective(tc.model, tc.data, approx, full, set, 51);
    REQUIRE(v15 == Catch::Approx(v51).margin(1e-6));
}

TEST_CASE("correction trace exports as csv", "[vb]") {
    auto tc = student_t_case(10);
    const auto approx = laplace_fit(tc.model, tc.data, empty_theta());
    const auto set = default_correction_set(tc.model);
    CorrectionTrace trace;
    const auto corr = vb_mean_correct(tc.model, tc.data, approx, set, {}, &trace);
    REQUIRE(trace.size() >= 2);
    REQUIRE(static_cast<int>(trace.size()) == corr.iterations + 1);
    for (std::size_t k = 1; k < trace.size(); ++k) {
        REQUIRE(trace[k].objective <= trace[k - 1].objective + 1e-12);
    }

    std::ostringstream os;
    write_correction_trace_csv(os, trace, {"beta[0]", "beta[1]"});
    std::istringstream is(os.str());
    std::string header;
    std::getline(is, header);
    REQUIRE(header == "iteration,objective,grad_norm,delta_beta[0],delta_beta[1]");
    int rows = 0;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty()) ++rows;
    }
    REQUIRE(rows == static_cast<int>(trace.size()));
}

TEST_CASE("mean correction reports non-convergence when starved", "[vb]") {
    auto tc = student_t_case(10);
    const auto approx = laplace_fit(tc.model, tc.data, empty_theta());
    const auto set = default_correction_set(tc.model);
    VbOptions opts;
    opts.max_iter = 0;
    REQUIRE_THROWS_AS(vb_mean_correct(tc.model, tc.data, approx, set, opts), NonConvergence);
}

TEST_CASE("correction set validation", "[vb]") {
    REQUIRE_THROWS_AS(validate_correction_set(CorrectionIndexSet{{}}, 3), DomainError);
    REQUIRE_THROWS_AS(validate_correction_set(CorrectionIndexSet{{0, 0}}, 3), DomainError);
    REQUIRE_THROWS_AS(validate_correction_set(CorrectionIndexSet{{3}}, 3), OutOfRange);
    REQUIRE_NOTHROW(validate_correction_set(CorrectionIndexSet{{0, 2}}, 3));
}
