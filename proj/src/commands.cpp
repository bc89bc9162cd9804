#include "sepfit/commands.hpp"

#include <Eigen/Core>
#include <ostream>

#include "sepfit/design.hpp"
#include "sepfit/diagnostics.hpp"
#include "sepfit/error.hpp"
#include "sepfit/formula.hpp"
#include "sepfit/scaling.hpp"
#include "sepfit/separation.hpp"
#include "sepfit/simulate.hpp"
#include "sepfit/textio.hpp"

namespace sepfit {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr const char* kVersion = "0.1.0";

const std::set<std::string> kNutsKeys = {"chains",  "iter",
                                         "warmup",  "adapt_delta",
                                         "max_treedepth", "prior_intercept_scale",
                                         "prior_beta_scale", "prior_sd_scale",
                                         "lkj_eta", "ppc_draws"};
const std::set<std::string> kIrlsKeys = {"irls_groups"};
const std::set<std::string> kCheckKeys = {"max_depth", "min_leaf"};
const std::set<std::string> kCommonKeys = {"formula", "data", "schema", "out", "engine", "seed"};

const char* to_string(GroupHandling g) { return g == GroupHandling::Fixed ? "fixed" : "ignore"; }

json versions() {
    json v;
    v["sepfit"] = kVersion;
    v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    v["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                         "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH);
#ifdef _OPENMP
    v["openmp"] = _OPENMP;
#endif
#if defined(__clang__)
    v["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
    v["compiler"] = std::string("gcc ") + __VERSION__;
#endif
    return v;
}

json input_digest(const fs::path& p) {
    json j;
    j["path"] = p.string();
    j["sha256"] = sha256_file(p);
    return j;
}

void write_manifest(const fs::path& out, const std::string& command, const json& config, std::uint64_t seed,
                    const std::vector<fs::path>& inputs) {
    json m;
    m["command"] = command;
    m["config"] = config;
    m["seed"] = seed;
    m["versions"] = versions();
    json in = json::array();
    for (const auto& p : inputs) in.push_back(input_digest(p));
    m["inputs"] = in;
    write_file(out / "manifest.json", m.dump(2) + "\n");
}

void require_file(const fs::path& p, const std::string& what) {
    if (p.empty()) throw DataError(what + " path not given");
    if (!fs::is_regular_file(p)) throw DataError(what + " file '" + p.string() + "' does not exist");
}

struct Loaded {
    ModelSpec spec;
    ColumnSchema schema;
    Dataset data;
};

Loaded load_inputs(const RunConfig& config, std::ostream& log) {
    if (config.formula.empty()) throw ConfigError("no formula given");
    require_file(config.schema, "schema");
    require_file(config.data, "data");
    Loaded l;
    l.spec = parse_formula(config.formula);
    l.schema = ColumnSchema::load(config.schema);
    validate_spec(l.spec, l.schema);
    l.data = load_csv(config.data, l.schema);
    validate_spec(l.spec, l.data.schema());
    if (l.data.dropped_rows > 0) {
        log << "warning: dropped " << l.data.dropped_rows << " rows with missing values";
        for (const auto& [col, n] : l.data.dropped_by_column)
            if (n > 0) log << " [" << col << ": " << n << "]";
        log << '\n';
    }
    return l;
}

std::string chain_csv(const Eigen::MatrixXd& draws, const std::vector<TransitionStats>& stats,
                      const std::vector<std::string>& names) {
    std::string out;
    for (const auto& n : names) out += csv_escape(n) + ',';
    out += "divergent,treedepth,accept_stat,energy,step_size\n";
    for (Eigen::Index i = 0; i < draws.rows(); ++i) {
        for (Eigen::Index j = 0; j < draws.cols(); ++j) out += format_double(draws(i, j)) + ',';
        const auto& s = stats[static_cast<std::size_t>(i)];
        out += std::string(s.divergent ? "1" : "0") + ',' + std::to_string(s.treedepth) + ',' + format_double(s.accept_stat) +
               ',' + format_double(s.energy) + ',' + format_double(s.step_size) + '\n';
    }
    return out;
}

int fit_irls(const RunConfig& config, const DesignMatrices& design, std::ostream& log) {
    const GlmDesign gd = glm_design(design, config.irls_groups);
    const GlmFit fit = fit_glm_irls(gd);
    const DivergenceVerdict v = fit.iterations >= 5 || fit.converged ? detect_mle_divergence(fit)
                                                                     : DivergenceVerdict::Stalled;
    json j;
    j["engine"] = "irls";
    j["groups"] = to_string(config.irls_groups);
    j["verdict"] = to_string(v);
    j["dropped_columns"] = gd.dropped;
    j["fit"] = fit.to_json();
    write_file(config.out / "fit" / "summary.json", j.dump(2) + "\n");
    log << "irls: " << fit.iterations << " iterations, " << (fit.converged ? "converged" : "not converged")
        << ", verdict " << to_string(v) << '\n';
    return v == DivergenceVerdict::Converged ? exit_code::ok : exit_code::verdict_fail;
}

int fit_laplace(const RunConfig& config, const DesignMatrices& design, std::ostream& log) {
    if (design.blocks.empty()) throw ConfigError("engine laplace needs a random block");
    bool reduced = false;
    const LaplaceFit fit = fit_glmm_laplace(design, LaplaceOptions{}, &reduced);
    double max_abs = fit.beta.size() ? fit.beta.cwiseAbs().maxCoeff() : 0.0;
    std::string verdict = fit.converged ? (fit.boundary ? "boundary" : "converged") : "not converged";
    json j;
    j["engine"] = "laplace";
    j["verdict"] = verdict;
    j["reduced_to_random_intercept"] = reduced;
    j["max_abs_coefficient"] = max_abs;
    j["fit"] = fit.to_json();
    write_file(config.out / "fit" / "summary.json", j.dump(2) + "\n");
    if (reduced) log << "laplace: model reduced to the first block's random intercept\n";
    log << "laplace: " << fit.iterations << " iterations, verdict " << verdict << ", sigma " << fit.sigma << '\n';
    return fit.converged ? exit_code::ok : exit_code::verdict_fail;
}

int fit_nuts(const RunConfig& config, const DesignMatrices& design, std::ostream& log) {
    const LogPosterior posterior(design, config.prior);
    const Target target = make_target(posterior);
    const PosteriorDraws draws = run_chains(target, config.sampler);
    const auto names = posterior.constrained_names();
    const auto con = constrained_draws(draws, posterior, config.sampler.execution);

    RunStats rs;
    rs.divergences = draws.divergences();
    rs.treedepth_saturated = draws.treedepth_saturated(config.sampler.max_treedepth);
    rs.max_treedepth = config.sampler.max_treedepth;
    rs.mean_accept_stat = draws.mean_accept_stat();
    FitSummary summary = summarize(con, names, rs, config.sampler.execution);
    add_natural_scale(summary, con, names, design);

    json sj = summary.to_json();
    json chains = json::array();
    for (const auto& c : draws.chains) {
        json cj;
        cj["step_size"] = c.step_size;
        cj["warmup_divergences"] = c.warmup_divergences;
        cj["inv_mass"] = std::vector<double>(c.inv_mass.data(), c.inv_mass.data() + c.inv_mass.size());
        chains.push_back(cj);
    }
    sj["adaptation"] = chains;
    sj["scaling"] = design.scaling.to_json();
    write_file(config.out / "fit" / "summary.json", sj.dump(2) + "\n");
    write_file(config.out / "fit" / "summary.txt", summary.to_text());
    for (std::size_t c = 0; c < con.size(); ++c)
        write_file(config.out / "fit" / ("chain-" + std::to_string(c + 1) + ".csv"),
                   chain_csv(con[c], draws.chains[c].stats, names));

    Eigen::Index total = 0;
    for (const auto& c : con) total += c.rows();
    const int n_rep = static_cast<int>(std::min<Eigen::Index>(config.ppc_draws, total));
    const PpcResult ppc = posterior_predictive(con, design, splitmix64(config.sampler.seed ^ 0x5050435ULL), n_rep,
                                               config.sampler.execution);
    std::string overall = "replicate,proportion\n";
    for (std::size_t k = 0; k < ppc.replicated.size(); ++k)
        overall += std::to_string(k + 1) + ',' + format_double(ppc.replicated[k]) + '\n';
    write_file(config.out / "ppc" / "replicated.csv", overall);
    std::string groups = "block,level,count,observed,rep_q2.5,rep_median,rep_q97.5\n";
    for (const auto& g : ppc.groups)
        groups += csv_escape(g.block) + ',' + csv_escape(g.level) + ',' + std::to_string(g.count) + ',' +
                  format_double(g.observed) + ',' + format_double(g.rep_q025) + ',' + format_double(g.rep_median) + ',' +
                  format_double(g.rep_q975) + '\n';
    write_file(config.out / "ppc" / "groups.csv", groups);
    std::string fitted = "row,y,fitted\n";
    for (int i = 0; i < design.n(); ++i)
        fitted += std::to_string(i + 1) + ',' + format_double(design.y(i)) + ',' + format_double(ppc.fitted(i)) + '\n';
    write_file(config.out / "ppc" / "fitted.csv", fitted);
    std::string overview = "observed,rep_q2.5,rep_q97.5\n" + format_double(ppc.observed) + ',' +
                           format_double(ppc.rep_q025) + ',' + format_double(ppc.rep_q975) + '\n';
    write_file(config.out / "ppc" / "overall.csv", overview);
    write_file(config.out / "plots" / "trace.csv", trace_csv(con, names));
    write_file(config.out / "plots" / "density.csv", density_csv(con, names));

    log << summary.to_text();
    return summary.pass ? exit_code::ok : exit_code::verdict_fail;
}

}  // namespace

const char* to_string(Engine e) {
    switch (e) {
        case Engine::Check: return "check";
        case Engine::Irls: return "irls";
        case Engine::Laplace: return "laplace";
        case Engine::Nuts: return "nuts";
    }
    return "?";
}

Engine engine_from_string(const std::string& s) {
    if (s == "check") return Engine::Check;
    if (s == "irls") return Engine::Irls;
    if (s == "laplace") return Engine::Laplace;
    if (s == "nuts") return Engine::Nuts;
    throw ConfigError("unknown engine '" + s + "' (expected check, irls, laplace or nuts)");
}

void RunConfig::apply_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    const auto path_of = [&](const json& v) {
        fs::path p = v.get<std::string>();
        return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    };
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "formula") formula = v.get<std::string>();
            else if (key == "data") data = path_of(v);
            else if (key == "schema") schema = path_of(v);
            else if (key == "out") out = path_of(v);
            else if (key == "engine") engine = engine_from_string(v.get<std::string>());
            else if (key == "seed") sampler.seed = v.get<std::uint64_t>();
            else if (key == "chains") sampler.chains = v.get<int>();
            else if (key == "iter") sampler.iterations = v.get<int>();
            else if (key == "warmup") sampler.warmup = v.get<int>();
            else if (key == "adapt_delta") sampler.adapt_delta = v.get<double>();
            else if (key == "max_treedepth") sampler.max_treedepth = v.get<int>();
            else if (key == "prior_intercept_scale") prior.intercept_scale = v.get<double>();
            else if (key == "prior_beta_scale") prior.beta_scale = v.get<double>();
            else if (key == "prior_sd_scale") prior.sd_scale = v.get<double>();
            else if (key == "lkj_eta") prior.lkj_eta = v.get<double>();
            else if (key == "ppc_draws") ppc_draws = v.get<int>();
            else if (key == "irls_groups") {
                const auto s = v.get<std::string>();
                if (s == "fixed") irls_groups = GroupHandling::Fixed;
                else if (s == "ignore") irls_groups = GroupHandling::Ignore;
                else throw ConfigError("irls_groups must be 'fixed' or 'ignore'");
            } else if (key == "max_depth") tree.max_depth = v.get<int>();
            else if (key == "min_leaf") tree.min_leaf = v.get<int>();
            else throw ConfigError("unknown run-config key '" + key + "'");
            if (!kCommonKeys.count(key)) explicit_keys.insert(key);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
}

void RunConfig::validate() const {
    const std::set<std::string>* allowed = nullptr;
    switch (engine) {
        case Engine::Nuts: allowed = &kNutsKeys; break;
        case Engine::Irls: allowed = &kIrlsKeys; break;
        case Engine::Check: allowed = &kCheckKeys; break;
        case Engine::Laplace: break;
    }
    for (const auto& k : explicit_keys)
        if (!allowed || !allowed->count(k))
            throw ConfigError("option '" + k + "' does not apply to engine " + to_string(engine));
    if (engine == Engine::Nuts) {
        sampler.validate();
        prior.validate();
        if (ppc_draws < 1) throw ConfigError("ppc_draws must be at least 1");
    }
    if (tree.max_depth < 1 || tree.min_leaf < 1) throw ConfigError("tree max_depth and min_leaf must be at least 1");
}

json RunConfig::to_json() const {
    json j;
    j["formula"] = formula;
    j["data"] = data.string();
    j["schema"] = schema.string();
    j["out"] = out.string();
    j["engine"] = to_string(engine);
    j["seed"] = sampler.seed;
    switch (engine) {
        case Engine::Nuts:
            j["chains"] = sampler.chains;
            j["iter"] = sampler.iterations;
            j["warmup"] = sampler.warmup;
            j["adapt_delta"] = sampler.adapt_delta;
            j["max_treedepth"] = sampler.max_treedepth;
            j["prior_intercept_scale"] = prior.intercept_scale;
            j["prior_beta_scale"] = prior.beta_scale;
            j["prior_sd_scale"] = prior.sd_scale;
            j["lkj_eta"] = prior.lkj_eta;
            j["ppc_draws"] = ppc_draws;
            break;
        case Engine::Irls: j["irls_groups"] = to_string(irls_groups); break;
        case Engine::Check:
            j["max_depth"] = tree.max_depth;
            j["min_leaf"] = tree.min_leaf;
            break;
        case Engine::Laplace: break;
    }
    return j;
}

RunConfig load_run_config(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw ConfigError("run config '" + path.string() + "' does not exist");
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    c.apply_json(j, path.parent_path());
    return c;
}

int cmd_check(const RunConfig& config, std::ostream& log) {
    config.validate();
    const Loaded in = load_inputs(config, log);
    fs::create_directories(config.out);
    write_manifest(config.out, "check", config.to_json(), config.sampler.seed, {config.data, config.schema});

    const SeparationReport report = scan_dataset(in.data, in.spec);
    const ClassificationTree tree = fit_tree(in.data, in.spec, config.tree);
    json sep = report.to_json();
    sep["tree_witnesses"] = static_cast<int>(tree.witnesses().size());
    write_file(config.out / "separation.json", sep.dump(2) + "\n");
    write_file(config.out / "separation.txt", report.to_text());
    write_file(config.out / "tree.json", tree.to_json().dump(2) + "\n");
    write_file(config.out / "tree.txt", tree.to_text());
    log << report.to_text() << '\n' << tree.to_text();
    log << "verdict: " << to_string(report.verdict()) << '\n';
    return exit_code::ok;
}

int cmd_fit(const RunConfig& config, std::ostream& log) {
    if (config.engine == Engine::Check) return cmd_check(config, log);
    config.validate();
    const Loaded in = load_inputs(config, log);
    fs::create_directories(config.out);
    write_manifest(config.out, "fit", config.to_json(), config.sampler.seed, {config.data, config.schema});

    const ScalingRecord scaling = standardize(in.data, in.spec);
    const DesignMatrices design = build_design(in.data, in.spec, scaling);

    const SeparationReport report = scan_dataset(in.data, in.spec, config.sampler.execution);
    write_file(config.out / "separation.json", report.to_json().dump(2) + "\n");
    const IdentifiabilityReport ident = check_identifiability(design);
    write_file(config.out / "identifiability.json", ident.to_json().dump(2) + "\n");
    log << "separation verdict: " << to_string(report.verdict()) << '\n';
    if (!ident.pass) {
        log << "model is not identifiable: " << ident.observations << " observations for " << ident.parameters
            << " parameters";
        for (const auto& b : ident.blocks)
            if (!b.full_rank_group_found) log << "; no group of '" << b.group << "' has a full-rank design";
        log << '\n';
        return exit_code::not_identifiable;
    }

    switch (config.engine) {
        case Engine::Irls: return fit_irls(config, design, log);
        case Engine::Laplace: return fit_laplace(config, design, log);
        case Engine::Nuts: return fit_nuts(config, design, log);
        case Engine::Check: break;
    }
    return exit_code::ok;
}

int cmd_simulate(const fs::path& scenario, std::uint64_t seed, const fs::path& out, std::ostream& log) {
    require_file(scenario, "scenario");
    const SimScenario s = SimScenario::from_json_text(read_file(scenario));
    const SimResult r = simulate_dataset(s, seed);
    fs::create_directories(out);
    write_simulation(r, out);
    json cfg;
    cfg["scenario"] = scenario.string();
    cfg["out"] = out.string();
    write_manifest(out, "simulate", cfg, seed, {scenario});
    log << "simulated " << r.data.rows() << " rows into " << out.string() << '\n';
    return exit_code::ok;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const FormulaError*>(&e)) return exit_code::formula;
    if (dynamic_cast<const DataError*>(&e)) return exit_code::data;
    if (dynamic_cast<const NumericalError*>(&e)) return exit_code::verdict_fail;
    return exit_code::usage;
}

}  // namespace sepfit
