#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "sepfit/diagnostics.hpp"
#include "sepfit/error.hpp"
#include "sepfit/posterior.hpp"
#include "sepfit/rng.hpp"
#include "sepfit/sampler.hpp"

using namespace sepfit;

namespace {

/// Independent normal target with the given standard deviations.
Target normal_target(std::vector<double> sd) {
    Target t;
    t.dim = static_cast<Eigen::Index>(sd.size());
    t.log_density = [sd](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        double lp = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double v = sd[static_cast<std::size_t>(i)] * sd[static_cast<std::size_t>(i)];
            lp -= 0.5 * x(i) * x(i) / v;
            g(i) = -x(i) / v;
        }
        return lp;
    };
    return t;
}

Target correlated_target(double rho) {
    Target t;
    t.dim = 2;
    const double det = 1.0 - rho * rho;
    t.log_density = [rho, det](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g(0) = -(x(0) - rho * x(1)) / det;
        g(1) = -(x(1) - rho * x(0)) / det;
        return -0.5 * (x(0) * x(0) - 2.0 * rho * x(0) * x(1) + x(1) * x(1)) / det;
    };
    return t;
}

/// v ~ N(0, 3), x_k | v ~ N(0, exp(v / 2)), k = 1..9.
Target funnel_target() {
    Target t;
    t.dim = 10;
    t.log_density = [](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
        const double v = q(0);
        double lp = -v * v / 18.0;
        g.setZero();
        g(0) = -v / 9.0;
        for (int k = 1; k < 10; ++k) {
            lp += -0.5 * q(k) * q(k) * std::exp(-v) - 0.5 * v;
            g(k) = -q(k) * std::exp(-v);
            g(0) += 0.5 * q(k) * q(k) * std::exp(-v) - 0.5;
        }
        return lp;
    };
    return t;
}

ChainSeries column(const PosteriorDraws& d, Eigen::Index k) {
    ChainSeries out;
    for (const auto& c : d.chains) out.push_back(c.draws.col(k));
    return out;
}

SamplerConfig small_config(std::uint64_t seed) {
    SamplerConfig c;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("10-d standard normal: moments, acceptance, no divergences") {
    const PosteriorDraws d = run_chains(normal_target(std::vector<double>(10, 1.0)), small_config(11));
    REQUIRE(d.chains.size() == 4);
    CHECK(d.draws_per_chain() == 1000);
    CHECK(d.divergences() == 0);
    CHECK(d.mean_accept_stat() >= 0.7);
    CHECK(d.mean_accept_stat() <= 0.9);
    for (Eigen::Index k = 0; k < 10; ++k) {
        const ChainSeries s = column(d, k);
        double sum = 0.0, sum_sq = 0.0, n = 0.0;
        for (const auto& c : s) {
            sum += c.sum();
            sum_sq += c.squaredNorm();
            n += static_cast<double>(c.size());
        }
        const double mean = sum / n, var = sum_sq / n - mean * mean;
        CHECK(std::abs(mean) < 0.05);
        CHECK(std::abs(var - 1.0) < 0.1);
        // 4 Monte Carlo standard errors from the ESS
        const double ess = effective_sample_size(s);
        CHECK(std::abs(mean) < 4.0 * std::sqrt(1.0 / ess));
        ChainSeries sq;
        for (const auto& c : s) sq.push_back(c.array().square().matrix());
        CHECK(std::abs(var - 1.0) < 4.0 * std::sqrt(2.0 / effective_sample_size(sq)));
    }
}

TEST_CASE("correlated normal: sample correlation near 0.9") {
    const PosteriorDraws d = run_chains(correlated_target(0.9), small_config(12));
    Eigen::MatrixXd all(4 * d.draws_per_chain(), 2);
    for (std::size_t c = 0; c < 4; ++c) all.middleRows(static_cast<Eigen::Index>(c) * d.draws_per_chain(), d.draws_per_chain()) = d.chains[c].draws;
    const Eigen::MatrixXd centered = all.rowwise() - all.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(all.rows() - 1);
    CHECK(std::abs(cov(0, 1) / std::sqrt(cov(0, 0) * cov(1, 1)) - 0.9) < 0.05);
    CHECK(d.divergences() == 0);
}

TEST_CASE("funnel with an oversized step raises divergence flags") {
    const Target t = funnel_target();
    Rng rng(5);
    int divergent = 0;
    for (int rep = 0; rep < 50; ++rep) {
        PhasePoint z;
        z.q = Eigen::VectorXd::Zero(10);
        z.q(0) = -6.0;
        for (int k = 1; k < 10; ++k) z.q(k) = 0.05 * rng.normal();
        z.grad.resize(10);
        z.logp = t.log_density(z.q, z.grad);
        const TransitionStats st = nuts_transition(z, t, 2.0, Eigen::VectorXd::Ones(10), 10, 1000.0, rng);
        divergent += st.divergent ? 1 : 0;
    }
    CHECK(divergent > 40);
}

TEST_CASE("adaptation: inverse mass tracks variances (1, 100)") {
    SamplerConfig c = small_config(13);
    c.chains = 1;
    const ChainDraws chain = run_chain(normal_target({1.0, 10.0}), c, 0);
    const double ratio = chain.inv_mass(1) / chain.inv_mass(0);
    CHECK(ratio > 50.0);
    CHECK(ratio < 200.0);
}

TEST_CASE("adaptation: higher adapt_delta gives a smaller step size") {
    SamplerConfig lo = small_config(14), hi = small_config(14);
    lo.chains = hi.chains = 1;
    hi.adapt_delta = 0.99;
    const Target t = normal_target(std::vector<double>(5, 1.0));
    const ChainDraws a = run_chain(t, lo, 0), b = run_chain(t, hi, 0);
    CHECK(b.step_size < a.step_size);
    double acc = 0.0;
    for (const auto& s : b.stats) acc += s.accept_stat;
    CHECK(acc / static_cast<double>(b.stats.size()) > 0.95);
}

TEST_CASE("determinism: same seed gives bit-identical draws, serial equals parallel") {
    const Target t = correlated_target(0.5);
    SamplerConfig par = small_config(15), ser = small_config(15);
    par.iterations = ser.iterations = 600;
    par.warmup = ser.warmup = 300;
    ser.execution = Execution::Serial;
    const PosteriorDraws a = run_chains(t, par), b = run_chains(t, par), c = run_chains(t, ser);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK((a.chains[k].draws.array() == b.chains[k].draws.array()).all());
        CHECK((a.chains[k].draws.array() == c.chains[k].draws.array()).all());
        CHECK(a.chains[k].step_size == c.chains[k].step_size);
    }
    CHECK((a.chains[0].draws.array() != a.chains[1].draws.array()).any());
    SamplerConfig other = par;
    other.seed = 16;
    CHECK((run_chains(t, other).chains[0].draws.array() != a.chains[0].draws.array()).any());
}

TEST_CASE("chains start in [-2, 2] and report their shape") {
    SamplerConfig c = small_config(17);
    c.iterations = 400;
    c.warmup = 200;
    const PosteriorDraws d = run_chains(normal_target({1.0, 1.0, 1.0}), c);
    for (const auto& ch : d.chains) {
        CHECK(ch.init.cwiseAbs().maxCoeff() <= 2.0);
        CHECK(ch.draws.rows() == 200);
        CHECK(ch.stats.size() == 200);
        for (const auto& s : ch.stats) {
            CHECK(s.treedepth >= 1);
            CHECK(s.n_leapfrog >= 1);
            CHECK(s.accept_stat >= 0.0);
            CHECK(s.accept_stat <= 1.0);
        }
    }
}

TEST_CASE("a flat coordinate initializes and is flagged by R-hat") {
    Target t;
    t.dim = 2;
    t.log_density = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g(0) = -x(0);
        g(1) = 0.0;
        return -0.5 * x(0) * x(0);
    };
    SamplerConfig c = small_config(18);
    c.iterations = 400;
    c.warmup = 200;
    c.max_treedepth = 6;
    const PosteriorDraws d = run_chains(t, c);
    CHECK(split_rhat(column(d, 0)) < 1.1);
    CHECK(split_rhat(column(d, 1)) > 1.1);
}

TEST_CASE("initialization failure names the worst coordinate") {
    Target t;
    t.dim = 3;
    t.names = {"alpha", "beta", "gamma"};
    t.log_density = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g.setZero();
        return std::abs(x(1)) < 1e-9 ? 0.0 : -std::numeric_limits<double>::infinity();
    };
    SamplerConfig c = small_config(19);
    c.chains = 1;
    try {
        run_chain(t, c, 0);
        FAIL("expected an initialization failure");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("100") != std::string::npos);
        CHECK(std::string(e.what()).find("beta") != std::string::npos);
    }
}

TEST_CASE("config validation") {
    SamplerConfig c;
    CHECK_NOTHROW(c.validate());
    c.warmup = 100;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.warmup = 0;
    CHECK_NOTHROW(c.validate());
    c = SamplerConfig{};
    c.adapt_delta = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SamplerConfig{};
    c.warmup = 2000;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SamplerConfig{};
    c.chains = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("warmup window schedule") {
    const auto w = warmup_windows(1000);
    const std::vector<std::pair<int, int>> expected = {{75, 100}, {100, 150}, {150, 250}, {250, 450}, {450, 950}};
    REQUIRE(w.size() == expected.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        CHECK(w[i].begin == expected[i].first);
        CHECK(w[i].end == expected[i].second);
    }
    for (int warm : {150, 151, 200, 333, 500, 1500}) {
        const auto ws = warmup_windows(warm);
        REQUIRE_FALSE(ws.empty());
        CHECK(ws.front().begin == 75);
        CHECK(ws.back().end == warm - 50);
        for (std::size_t i = 1; i < ws.size(); ++i) CHECK(ws[i].begin == ws[i - 1].end);
    }
}

TEST_CASE("dual averaging converges the step toward the target statistic") {
    DualAveraging da(0.8);
    da.restart(1.0);
    double eps = 1.0;
    // acceptance falls with step size: a = exp(-eps)
    for (int i = 0; i < 2000; ++i) eps = da.update(std::exp(-eps));
    CHECK(da.final_step_size() == doctest::Approx(-std::log(0.8)).epsilon(0.05));
}

TEST_CASE("hierarchical posterior on simulated overlap data: shape and convergence") {
    const SimResult sim = simulate_dataset(testutil::mixed_scenario(400, 8, -0.2, {0.6, 0.3}, {0.6, 0.4}, 0.0), 21);
    const auto b = testutil::build("y ~ cond + x + (1 + cond | subj)", sim.data);
    const LogPosterior lp(b.design, PriorConfig{});
    const PosteriorDraws d = run_chains(make_target(lp), small_config(22));
    CHECK(d.draws_per_chain() == 1000);
    const auto constrained = constrained_draws(d, lp);
    REQUIRE(constrained.size() == 4);
    CHECK(constrained[0].cols() == static_cast<Eigen::Index>(lp.constrained_names().size()));
    CHECK((constrained[0].col(3).array() > 0.0).all());  // sd_subj__Intercept
    ChainSeries beta;
    for (const auto& c : constrained) beta.push_back(c.col(1));
    CHECK(split_rhat(beta) < 1.05);
}
