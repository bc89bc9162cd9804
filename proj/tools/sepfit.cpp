#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "sepfit/commands.hpp"
#include "sepfit/error.hpp"

namespace {

struct Flags {
    std::optional<std::string> config, formula, data, schema, out, engine, irls_groups;
    std::optional<int> chains, iter, warmup, max_treedepth, max_depth, min_leaf, ppc_draws;
    std::optional<double> adapt_delta, prior_intercept_scale, prior_beta_scale, prior_sd_scale, lkj_eta;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Flags& f) {
    app->add_option("--config", f.config, "Run-config JSON; flags override its values");
    app->add_option("--formula", f.formula, "Model formula, e.g. \"y ~ a*b + (1 + a | subj)\"");
    app->add_option("--data", f.data, "CSV data file");
    app->add_option("--schema", f.schema, "Column schema JSON");
    app->add_option("--out", f.out, "Output directory");
    app->add_option("--seed", f.seed, "Base RNG seed");
}

sepfit::RunConfig build_config(const Flags& f) {
    sepfit::RunConfig c;
    if (f.config) c = sepfit::load_run_config(*f.config);
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    const auto put = [&](const char* key, const auto& opt) {
        if (opt) j[key] = *opt;
    };
    put("formula", f.formula);
    put("data", f.data);
    put("schema", f.schema);
    put("out", f.out);
    put("engine", f.engine);
    put("seed", f.seed);
    put("chains", f.chains);
    put("iter", f.iter);
    put("warmup", f.warmup);
    put("adapt_delta", f.adapt_delta);
    put("max_treedepth", f.max_treedepth);
    put("prior_intercept_scale", f.prior_intercept_scale);
    put("prior_beta_scale", f.prior_beta_scale);
    put("prior_sd_scale", f.prior_sd_scale);
    put("lkj_eta", f.lkj_eta);
    put("ppc_draws", f.ppc_draws);
    put("irls_groups", f.irls_groups);
    put("max_depth", f.max_depth);
    put("min_leaf", f.min_leaf);
    c.apply_json(j);
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Separation diagnostics and Bayesian hierarchical logistic regression"};
    app.require_subcommand(1);

    Flags check_flags;
    auto* check = app.add_subcommand("check", "Scan for separation and fit the classification tree");
    add_common(check, check_flags);
    check->add_option("--max-depth", check_flags.max_depth, "Tree depth limit (default 6)");
    check->add_option("--min-leaf", check_flags.min_leaf, "Minimum rows per tree leaf (default 20)");

    Flags fit_flags;
    auto* fit = app.add_subcommand("fit", "Fit a model with the chosen engine");
    add_common(fit, fit_flags);
    fit->add_option("--engine", fit_flags.engine, "check | irls | laplace | nuts (default nuts)");
    fit->add_option("--chains", fit_flags.chains, "Chains (default 4)");
    fit->add_option("--iter", fit_flags.iter, "Iterations per chain including warmup (default 2000)");
    fit->add_option("--warmup", fit_flags.warmup, "Warmup iterations (default 1000)");
    fit->add_option("--adapt-delta", fit_flags.adapt_delta, "Target acceptance statistic (default 0.8)");
    fit->add_option("--max-treedepth", fit_flags.max_treedepth, "Maximum NUTS tree depth (default 10)");
    fit->add_option("--prior-intercept-scale", fit_flags.prior_intercept_scale, "Cauchy scale of the intercept (2.5)");
    fit->add_option("--prior-beta-scale", fit_flags.prior_beta_scale, "Cauchy scale of fixed effects (4)");
    fit->add_option("--prior-sd-scale", fit_flags.prior_sd_scale, "Half-Cauchy scale of random-effect SDs (2)");
    fit->add_option("--lkj-eta", fit_flags.lkj_eta, "LKJ shape of random-effect correlations (2)");
    fit->add_option("--ppc-draws", fit_flags.ppc_draws, "Posterior predictive replicates (500)");
    fit->add_option("--irls-groups", fit_flags.irls_groups, "fixed | ignore: groupings in the IRLS model (fixed)");
    fit->add_option("--max-depth", fit_flags.max_depth, "Tree depth limit when --engine check");
    fit->add_option("--min-leaf", fit_flags.min_leaf, "Minimum tree leaf size when --engine check");

    std::string scenario, sim_out = "sim-out";
    std::uint64_t sim_seed = 1;
    auto* sim = app.add_subcommand("simulate", "Simulate a dataset from a scenario JSON");
    sim->add_option("--scenario", scenario, "Scenario JSON")->required();
    sim->add_option("--seed", sim_seed, "RNG seed");
    sim->add_option("--out", sim_out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : sepfit::exit_code::usage;
    }

    try {
        if (check->parsed()) {
            sepfit::RunConfig c = build_config(check_flags);
            c.engine = sepfit::Engine::Check;
            return sepfit::cmd_check(c, std::cout);
        }
        if (fit->parsed()) return sepfit::cmd_fit(build_config(fit_flags), std::cout);
        return sepfit::cmd_simulate(scenario, sim_seed, sim_out, std::cout);
    } catch (const sepfit::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return sepfit::exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return sepfit::exit_code::usage;
    }
}
