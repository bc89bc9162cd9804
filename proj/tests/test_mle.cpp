#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "sepfit/error.hpp"
#include "sepfit/mle.hpp"
#include "sepfit/rng.hpp"

using namespace sepfit;

namespace {

GlmDesign intercept_only(int n, int ones) {
    GlmDesign d;
    d.A = Eigen::MatrixXd::Ones(n, 1);
    d.y = Eigen::VectorXd::Zero(n);
    d.y.head(ones).setOnes();
    d.names = {"(Intercept)"};
    return d;
}

GlmDesign two_level(int n_a, int ones_a, int n_b, int ones_b) {
    const auto b = testutil::build_csv("y ~ f", testutil::two_level_csv(n_a, ones_a, n_b, ones_b), testutil::two_level_schema());
    return glm_design(b.design);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

/// Gradient ascent with backtracking on the Bernoulli-logit log-likelihood.
Eigen::VectorXd gradient_ascent(const Eigen::MatrixXd& A, const Eigen::VectorXd& y) {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(A.cols());
    double step = 1.0;
    for (int it = 0; it < 200000; ++it) {
        const Eigen::VectorXd mu = (A * b).unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
        const Eigen::VectorXd g = A.transpose() * (y - mu);
        if (g.lpNorm<Eigen::Infinity>() < 1e-11) break;
        const double f0 = logistic_loglik(A, y, b);
        step = std::min(step * 2.0, 1.0);
        while (logistic_loglik(A, y, b + step * g) < f0 + 1e-4 * step * g.squaredNorm()) step *= 0.5;
        b += step * g;
    }
    return b;
}

struct GroupedData {
    Eigen::MatrixXd A;
    Eigen::VectorXd y;
    std::vector<int> group;
};

GroupedData random_intercepts(int groups, int per_group, double b0, double b1, double sigma, std::uint64_t seed) {
    Rng rng(seed);
    GroupedData d;
    const int n = groups * per_group;
    d.A.resize(n, 2);
    d.y.resize(n);
    for (int g = 0; g < groups; ++g) {
        const double u = sigma * rng.normal();
        for (int i = 0; i < per_group; ++i) {
            const int r = g * per_group + i;
            d.A(r, 0) = 1.0;
            d.A(r, 1) = (i % 2) ? 0.5 : -0.5;
            const double eta = b0 + b1 * d.A(r, 1) + u;
            d.y(r) = rng.bernoulli(1.0 / (1.0 + std::exp(-eta))) ? 1.0 : 0.0;
            d.group.push_back(g);
        }
    }
    return d;
}

}  // namespace

TEST_CASE("intercept-only MLE equals the logit of the sample proportion") {
    const GlmFit even = fit_glm_irls(intercept_only(60, 30));
    CHECK(even.converged);
    CHECK(std::abs(even.coefficients(0)) < 1e-10);
    const GlmFit skew = fit_glm_irls(intercept_only(60, 45));
    CHECK(skew.converged);
    CHECK(skew.coefficients(0) == doctest::Approx(std::log(3.0)).epsilon(1e-10));
    CHECK(detect_mle_divergence(skew) == DivergenceVerdict::Converged);
}

TEST_CASE("perfectly separated factor: coefficients diverge") {
    const GlmFit fit = fit_glm_irls(two_level(20, 20, 20, 0));
    CHECK_FALSE(fit.converged);
    CHECK(detect_mle_divergence(fit) == DivergenceVerdict::Diverging);
    CHECK(fit.max_abs_trajectory.back() > kDivergenceThreshold);
    REQUIRE(fit.norm_trajectory.size() >= 10);
    for (std::size_t i = fit.norm_trajectory.size() - 9; i < fit.norm_trajectory.size(); ++i)
        CHECK(fit.norm_trajectory[i] > fit.norm_trajectory[i - 1]);
    for (std::size_t i = 1; i < fit.loglik_trajectory.size(); ++i)
        CHECK(fit.loglik_trajectory[i] >= fit.loglik_trajectory[i - 1] - 1e-12);
}

TEST_CASE("quasi-separated factor also diverges") {
    const GlmFit fit = fit_glm_irls(two_level(26, 26, 24, 18));
    CHECK(detect_mle_divergence(fit) == DivergenceVerdict::Diverging);
}

TEST_CASE("overlapping factor: converged MLE matches the closed form") {
    const GlmDesign d = two_level(25, 20, 25, 16);
    const GlmFit fit = fit_glm_irls(d);
    REQUIRE(fit.converged);
    CHECK(detect_mle_divergence(fit) == DivergenceVerdict::Converged);
    // Saturated two-cell model: b0 + x_A b1 = logit(.80), b0 + x_B b1 = logit(.64).
    const double xa = d.A(0, 1), xb = d.A(49, 1);
    const double b1 = (logit(0.80) - logit(0.64)) / (xa - xb);
    const double b0 = logit(0.80) - xa * b1;
    CHECK(fit.coefficients(0) == doctest::Approx(b0).epsilon(1e-9));
    CHECK(fit.coefficients(1) == doctest::Approx(b1).epsilon(1e-9));
    CHECK(fit.std_errors(1) > 0.0);
}

TEST_CASE("IRLS agrees with a gradient-ascent oracle on random covariates") {
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 120;
        GlmDesign d;
        d.A.resize(n, 3);
        d.y.resize(n);
        for (int i = 0; i < n; ++i) {
            d.A(i, 0) = 1.0;
            d.A(i, 1) = rng.normal();
            d.A(i, 2) = rng.uniform(-1.0, 1.0);
            const double eta = 0.3 + 0.8 * d.A(i, 1) - 0.6 * d.A(i, 2);
            d.y(i) = rng.bernoulli(1.0 / (1.0 + std::exp(-eta))) ? 1.0 : 0.0;
        }
        d.names = {"(Intercept)", "x1", "x2"};
        const GlmFit fit = fit_glm_irls(d);
        REQUIRE(fit.converged);
        const Eigen::VectorXd oracle = gradient_ascent(d.A, d.y);
        for (int k = 0; k < 3; ++k) CHECK(fit.coefficients(k) == doctest::Approx(oracle(k)).epsilon(1e-6));
        for (std::size_t i = 1; i < fit.loglik_trajectory.size(); ++i)
            CHECK(fit.loglik_trajectory[i] >= fit.loglik_trajectory[i - 1] - 1e-12);
    }
}

TEST_CASE("iteration cap without large coefficients is a stall") {
    GlmOptions o;
    o.max_iter = 1;
    const GlmFit fit = fit_glm_irls(two_level(25, 20, 25, 16), o);
    CHECK_FALSE(fit.converged);
    CHECK(detect_mle_divergence(fit) == DivergenceVerdict::Stalled);
}

TEST_CASE("rank-deficient IRLS design is a data error") {
    GlmDesign d = intercept_only(10, 4);
    d.A.conservativeResize(10, 2);
    d.A.col(1) = d.A.col(0) * 2.0;
    d.names.push_back("dup");
    CHECK_THROWS_AS(fit_glm_irls(d), DataError);
}

TEST_CASE("no-pooling design adds sum-coded group columns at full rank") {
    const SimResult sim = simulate_dataset(testutil::mixed_scenario(400, 10, 0.0, {0.5, 0.2}, {0.5, 0.3}, 0.0), 4);
    const auto b = testutil::build(testutil::mixed_scenario(400, 10, 0, {0, 0}, {0, 0}, 0).formula, sim.data);
    const GlmDesign pooled = glm_design(b.design, GroupHandling::Ignore);
    const GlmDesign nopool = glm_design(b.design, GroupHandling::Fixed);
    CHECK(pooled.A.cols() == 1 + b.design.p());
    // 9 subject contrasts and 9 subject-by-condition contrasts
    CHECK(nopool.A.cols() == pooled.A.cols() + 18);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(nopool.A);
    CHECK(lu.rank() == nopool.A.cols());
    CHECK(nopool.names.size() == static_cast<std::size_t>(nopool.A.cols()));
}

TEST_CASE("Laplace GLMM recovers a random-intercept model (40 groups x 50)") {
    const GroupedData d = random_intercepts(40, 50, -0.3, 1.0, 1.0, 2024);
    const LaplaceFit fit = fit_glmm_laplace(d.A, d.y, d.group, 40);
    REQUIRE(fit.converged);
    CHECK_FALSE(fit.boundary);
    CHECK(fit.gradient_max_norm < 1e-6);
    CHECK(fit.sigma > 0.7);
    CHECK(fit.sigma < 1.4);
    CHECK(std::abs(fit.beta(1) - 1.0) < 0.3);
    CHECK(fit.group_modes.size() == 40);
}

TEST_CASE("Laplace GLMM at identical group proportions sits on the sigma = 0 boundary") {
    GroupedData d = random_intercepts(10, 20, 0.0, 0.0, 0.0, 1);
    for (int g = 0; g < 10; ++g)
        for (int i = 0; i < 20; ++i) d.y(g * 20 + i) = (i % 4 < 2) ? 1.0 : 0.0;  // each cell 50%
    const LaplaceFit fit = fit_glmm_laplace(d.A, d.y, d.group, 10);
    CHECK(fit.boundary);
    CHECK(fit.sigma < 1e-3);
    CHECK(std::abs(fit.beta(0)) < 1e-4);
}

TEST_CASE("Laplace with sigma held at zero reproduces the pooled IRLS fit") {
    GroupedData d = random_intercepts(60, 1, 0.2, 0.9, 0.0, 77);  // one observation per group
    GroupedData extra = random_intercepts(60, 1, 0.2, 0.9, 0.0, 78);
    d.A.conservativeResize(120, 2);
    d.A.bottomRows(60) = extra.A;
    d.A.bottomRows(60).col(1).setConstant(0.5);
    d.A.topRows(60).col(1).setConstant(-0.5);
    d.y.conservativeResize(120);
    d.y.tail(60) = extra.y;
    for (int g = 0; g < 60; ++g) d.group.push_back(60 + g);
    LaplaceOptions o;
    o.fixed_sigma = 0.0;
    const LaplaceFit lap = fit_glmm_laplace(d.A, d.y, d.group, 120, o);
    GlmDesign g;
    g.A = d.A;
    g.y = d.y;
    g.names = {"(Intercept)", "x"};
    const GlmFit irls = fit_glm_irls(g);
    REQUIRE(lap.converged);
    REQUIRE(irls.converged);
    CHECK(lap.beta(0) == doctest::Approx(irls.coefficients(0)).epsilon(1e-6));
    CHECK(lap.beta(1) == doctest::Approx(irls.coefficients(1)).epsilon(1e-6));
    CHECK(lap.log_likelihood == doctest::Approx(logistic_loglik(g.A, g.y, irls.coefficients)).epsilon(1e-8));
}

TEST_CASE("Laplace stays finite when some groups are quasi-separated") {
    GroupedData d = random_intercepts(20, 40, 0.0, 0.8, 0.6, 31);
    for (int g : {2, 9, 15})
        for (int i = 0; i < 40; ++i)
            if (d.A(g * 40 + i, 1) > 0) d.y(g * 40 + i) = 1.0;
    const LaplaceFit fit = fit_glmm_laplace(d.A, d.y, d.group, 20);
    CHECK(fit.converged);
    CHECK(std::isfinite(fit.sigma));
    CHECK(fit.beta.cwiseAbs().maxCoeff() < 5.0);
    CHECK(fit.group_modes.cwiseAbs().maxCoeff() < 5.0);
}

TEST_CASE("Laplace via the design uses the first block intercept only") {
    const SimResult sim = simulate_dataset(testutil::mixed_scenario(600, 12, 0.0, {0.5, 0.2}, {0.7, 0.3}, 0.0), 9);
    const auto b = testutil::build(testutil::mixed_scenario(600, 12, 0, {0, 0}, {0, 0}, 0).formula, sim.data);
    bool reduced = false;
    const LaplaceFit fit = fit_glmm_laplace(b.design, {}, &reduced);
    CHECK(reduced);
    CHECK(fit.converged);
    CHECK(fit.beta.size() == 1 + b.design.p());
    CHECK(fit.to_json().contains("sigma"));
}
