// Wall-clock comparison of the serial reference kernels and their OpenMP
// counterparts on one simulated mixed-effects dataset.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include <CLI11.hpp>

#include "sepfit/design.hpp"
#include "sepfit/diagnostics.hpp"
#include "sepfit/execution.hpp"
#include "sepfit/formula.hpp"
#include "sepfit/posterior.hpp"
#include "sepfit/sampler.hpp"
#include "sepfit/scaling.hpp"
#include "sepfit/separation.hpp"
#include "sepfit/simulate.hpp"

using namespace sepfit;

namespace {

double seconds(const std::function<void()>& f, int repeats) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

void report(const char* name, const std::function<void(Execution)>& f, int repeats) {
    const double s = seconds([&] { f(Execution::Serial); }, repeats);
    const double p = seconds([&] { f(Execution::Parallel); }, repeats);
    std::printf("%-22s serial %9.4fs  parallel %9.4fs  speedup %5.2fx\n", name, s, p, s / p);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app("Serial vs parallel kernel timings");
    int n = 4000, groups = 40, chains = 4, iter = 600, repeats = 3;
    app.add_option("--n", n, "Observations");
    app.add_option("--groups", groups, "Groups");
    app.add_option("--chains", chains, "NUTS chains");
    app.add_option("--iter", iter, "Iterations per chain (half warmup)");
    app.add_option("--repeats", repeats, "Best-of repeats for the cheap kernels");
    CLI11_PARSE(app, argc, argv);

    SimScenario s;
    s.formula = "y ~ cond * x + (1 + cond | subj)";
    s.n = n;
    s.factors.push_back({"cond", {"A", "B"}, false});
    s.groups.push_back({"subj", groups, "s"});
    s.covariates.push_back({"x", "normal", 0.0, 1.0});
    s.intercept = -0.3;
    s.beta = {0.6, -0.4, 0.2};
    BlockTruth bt;
    bt.group = "subj";
    bt.sigma = Eigen::Vector2d(0.7, 0.4);
    bt.corr = Eigen::Matrix2d::Identity();
    s.blocks.push_back(bt);
    const SimResult sim = simulate_dataset(s, 1);
    const ModelSpec spec = parse_formula(s.formula);
    const DesignMatrices design = build_design(sim.data, spec, standardize(sim.data, spec));
    const LogPosterior posterior(design, PriorConfig{});

    std::printf("threads available: %d, n %d, groups %d, chains %d, iter %d\n", available_threads(), n, groups, chains, iter);

    SamplerConfig sc;
    sc.chains = chains;
    sc.iterations = iter;
    sc.warmup = iter / 2;
    PosteriorDraws draws;
    report("nuts chains", [&](Execution e) {
        sc.execution = e;
        draws = run_chains(make_target(posterior), sc);
    }, 1);
    report("separation scan", [&](Execution e) { scan_dataset(sim.data, spec, e); }, repeats);
    std::vector<Eigen::MatrixXd> con;
    report("constrained draws", [&](Execution e) { con = constrained_draws(draws, posterior, e); }, repeats);
    const auto names = posterior.constrained_names();
    report("summaries", [&](Execution e) { summarize(con, names, RunStats{}, e); }, repeats);
    report("posterior predictive", [&](Execution e) { posterior_predictive(con, design, 7, 500, e); }, repeats);
    return 0;
}
