#include "sepfit/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "sepfit/error.hpp"
#include "sepfit/mathutil.hpp"
#include "sepfit/textio.hpp"

namespace sepfit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sample_variance(const double* x, Eigen::Index n) {
    if (n < 2) return 0.0;
    double mean = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ss += (x[i] - mean) * (x[i] - mean);
    return ss / static_cast<double>(n - 1);
}

bool is_constant(const ChainSeries& chains) {
    bool first = true;
    double v0 = 0.0;
    for (const auto& c : chains)
        for (Eigen::Index i = 0; i < c.size(); ++i) {
            if (first) {
                v0 = c(i);
                first = false;
            } else if (c(i) != v0) {
                return false;
            }
        }
    return true;
}

std::vector<double> pooled_sorted(const ChainSeries& chains) {
    std::vector<double> v;
    for (const auto& c : chains) v.insert(v.end(), c.data(), c.data() + c.size());
    std::sort(v.begin(), v.end());
    return v;
}

ChainSeries column(const std::vector<Eigen::MatrixXd>& chains, Eigen::Index j) {
    ChainSeries s;
    s.reserve(chains.size());
    for (const auto& c : chains) s.push_back(c.col(j));
    return s;
}

template <typename F>
void for_each_index(int n, Execution exec, F&& f) {
    if (exec == Execution::Serial) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
#pragma omp parallel for schedule(dynamic, 4)
    for (int i = 0; i < n; ++i) f(i);
}

}  // namespace

double split_rhat(const ChainSeries& chains) {
    std::vector<std::pair<const double*, Eigen::Index>> halves;
    for (const auto& c : chains) {
        const Eigen::Index h = c.size() / 2;
        if (h < 4) return kNaN;
        halves.emplace_back(c.data(), h);
        halves.emplace_back(c.data() + (c.size() - h), h);
    }
    if (halves.size() < 2) return kNaN;
    Eigen::Index n = halves.front().second;
    for (const auto& h : halves) n = std::min(n, h.second);
    const double m = static_cast<double>(halves.size());
    const double nd = static_cast<double>(n);
    std::vector<double> means;
    double W = 0.0;
    for (const auto& [ptr, len] : halves) {
        double mu = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) mu += ptr[i];
        means.push_back(mu / nd);
        W += sample_variance(ptr, n);
    }
    W /= m;
    if (!(W > 0.0)) return kNaN;
    const double B = nd * sample_variance(means.data(), static_cast<Eigen::Index>(means.size()));
    const double var_plus = (nd - 1.0) / nd * W + B / nd;
    return std::sqrt(var_plus / W);
}

double effective_sample_size(const ChainSeries& chains) {
    if (chains.empty() || is_constant(chains)) return kNaN;
    Eigen::Index n = chains.front().size();
    for (const auto& c : chains) n = std::min(n, c.size());
    if (n < 4) return kNaN;
    const std::size_t m = chains.size();
    const double nd = static_cast<double>(n);

    std::vector<double> means(m), chain_var(m);
    for (std::size_t c = 0; c < m; ++c) {
        means[c] = chains[c].head(n).mean();
        chain_var[c] = sample_variance(chains[c].data(), n);
    }
    // Autocovariance at lag t averaged over chains (biased, 1/n normalization).
    const auto mean_acov = [&](Eigen::Index t) {
        double total = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            const double* x = chains[c].data();
            double s = 0.0;
            for (Eigen::Index i = 0; i + t < n; ++i) s += (x[i] - means[c]) * (x[i + t] - means[c]);
            total += s / nd;
        }
        return total / static_cast<double>(m);
    };
    double mean_var = 0.0;
    for (double v : chain_var) mean_var += v;
    mean_var /= static_cast<double>(m);
    double var_plus = mean_var * (nd - 1.0) / nd;
    if (m > 1) var_plus += sample_variance(means.data(), static_cast<Eigen::Index>(m));
    if (!(var_plus > 0.0)) return kNaN;

    std::vector<double> rho(static_cast<std::size_t>(n) + 2, 0.0);
    double rho_even = 1.0;
    double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
    rho[0] = rho_even;
    rho[1] = rho_odd;
    Eigen::Index t = 1;
    while (t < n - 5 && rho_even + rho_odd > 0.0) {
        rho_even = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - mean_acov(t + 2)) / var_plus;
        if (rho_even + rho_odd >= 0.0) {
            rho[static_cast<std::size_t>(t + 1)] = rho_even;
            rho[static_cast<std::size_t>(t + 2)] = rho_odd;
        }
        t += 2;
    }
    const Eigen::Index max_t = t;
    if (rho_even > 0.0) rho[static_cast<std::size_t>(max_t + 1)] = rho_even;

    // Monotone sequence estimator.
    for (Eigen::Index k = 1; k <= max_t - 2; k += 2) {
        const auto i = static_cast<std::size_t>(k);
        if (rho[i + 1] + rho[i + 2] > rho[i - 1] + rho[i]) {
            rho[i + 1] = (rho[i - 1] + rho[i]) / 2.0;
            rho[i + 2] = rho[i + 1];
        }
    }
    const double total = static_cast<double>(m) * nd;
    double tau = -1.0;
    for (Eigen::Index k = 0; k <= max_t; ++k) tau += 2.0 * rho[static_cast<std::size_t>(k)];
    tau += rho[static_cast<std::size_t>(max_t + 1)];
    tau = std::max(tau, 1.0 / std::log10(total));
    return total / tau;
}

double quantile_sorted(const std::vector<double>& sorted, double prob) {
    if (sorted.empty()) return kNaN;
    const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

const ParameterSummary& FitSummary::at(const std::string& name) const {
    for (const auto& p : parameters)
        if (p.name == name) return p;
    throw ConfigError("no summarized parameter named '" + name + "'");
}

FitSummary summarize(const std::vector<Eigen::MatrixXd>& chains, const std::vector<std::string>& names,
                     const RunStats& stats, Execution exec) {
    if (chains.empty() || chains.front().rows() == 0) throw ConfigError("no draws to summarize");
    const Eigen::Index np = chains.front().cols();
    if (static_cast<std::size_t>(np) != names.size()) throw ConfigError("draw columns do not match parameter names");

    FitSummary s;
    s.chains = static_cast<int>(chains.size());
    s.draws_per_chain = static_cast<int>(chains.front().rows());
    s.divergences = stats.divergences;
    s.treedepth_saturated = stats.treedepth_saturated;
    s.max_treedepth = stats.max_treedepth;
    s.mean_accept_stat = stats.mean_accept_stat;
    s.parameters.resize(static_cast<std::size_t>(np));

    for_each_index(static_cast<int>(np), exec, [&](int j) {
        const ChainSeries series = column(chains, j);
        const std::vector<double> sorted = pooled_sorted(series);
        ParameterSummary& p = s.parameters[static_cast<std::size_t>(j)];
        p.name = names[static_cast<std::size_t>(j)];
        double mean = 0.0;
        for (double v : sorted) mean += v;
        mean /= static_cast<double>(sorted.size());
        p.mean = mean;
        p.sd = std::sqrt(sample_variance(sorted.data(), static_cast<Eigen::Index>(sorted.size())));
        p.median = quantile_sorted(sorted, 0.5);
        p.q025 = quantile_sorted(sorted, 0.025);
        p.q975 = quantile_sorted(sorted, 0.975);
        p.ess = effective_sample_size(series);
        p.rhat = split_rhat(series);
    });

    for (const auto& p : s.parameters) {
        if (std::isnan(p.rhat)) {
            s.warnings.push_back("parameter " + p.name + " has zero within-chain variance; R-hat undefined");
        } else if (!(p.rhat < kRhatThreshold)) {
            s.failing.push_back(p.name);
        }
    }
    if (s.divergences > 0)
        s.warnings.push_back(std::to_string(s.divergences) +
                             " divergent transitions after warmup; increasing adapt_delta may remove them");
    if (s.treedepth_saturated > 0)
        s.warnings.push_back(std::to_string(s.treedepth_saturated) + " transitions hit the maximum tree depth");
    s.pass = s.divergences == 0 && s.failing.empty();
    return s;
}

void add_natural_scale(FitSummary& summary, const std::vector<Eigen::MatrixXd>& chains,
                       const std::vector<std::string>& names, const DesignMatrices& design) {
    const auto index_of = [&](const std::string& n) -> Eigen::Index {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == n) return static_cast<Eigen::Index>(i);
        return -1;
    };
    Eigen::Index total = 0;
    for (const auto& c : chains) total += c.rows();
    const auto pooled = [&](Eigen::Index j) {
        Eigen::VectorXd v(total);
        Eigen::Index off = 0;
        for (const auto& c : chains) {
            v.segment(off, c.rows()) = c.col(j);
            off += c.rows();
        }
        return v;
    };
    const auto add = [&](const std::string& name, const std::string& unit, const Eigen::VectorXd& v) {
        std::vector<double> sorted(v.data(), v.data() + v.size());
        std::sort(sorted.begin(), sorted.end());
        NaturalCoefficient c;
        c.name = name;
        c.unit = unit;
        c.mean = v.mean();
        c.median = quantile_sorted(sorted, 0.5);
        c.q025 = quantile_sorted(sorted, 0.025);
        c.q975 = quantile_sorted(sorted, 0.975);
        summary.natural.push_back(c);
    };

    struct ColumnInfo {
        double divisor = 1.0;
        double center = 0.0;
        int covariates = 0;
        int pieces = 0;
    };
    std::vector<ColumnInfo> info(design.x_names.size());
    bool covariate_interaction = false;
    for (std::size_t j = 0; j < design.x_names.size(); ++j) {
        std::stringstream ss(design.x_names[j]);
        std::string piece;
        while (std::getline(ss, piece, ':')) {
            ++info[j].pieces;
            const VariableScaling* v = design.scaling.find(piece);
            if (v && v->kind == ColumnKind::Covariate) {
                ++info[j].covariates;
                info[j].divisor *= v->divisor;
                info[j].center = v->center;
            }
        }
        if (info[j].pieces > 1 && info[j].covariates > 0) covariate_interaction = true;
    }

    const Eigen::Index i0 = index_of("b_Intercept");
    if (i0 >= 0) {
        Eigen::VectorXd b0 = pooled(i0);
        std::string unit = "log-odds at covariate means";
        if (!covariate_interaction) {
            unit = "log-odds at covariate zero";
            for (std::size_t j = 0; j < info.size(); ++j) {
                if (info[j].pieces != 1 || info[j].covariates != 1) continue;
                const Eigen::Index k = index_of("b_" + design.x_names[j]);
                if (k >= 0) b0 -= pooled(k) * (info[j].center / info[j].divisor);
            }
        }
        add("b_Intercept", unit, b0);
    }
    for (std::size_t j = 0; j < info.size(); ++j) {
        const Eigen::Index k = index_of("b_" + design.x_names[j]);
        if (k < 0) continue;
        std::string unit = "contrast";
        if (info[j].covariates > 0) unit = info[j].pieces == 1 ? "per unit" : "per unit product";
        add("b_" + design.x_names[j], unit, pooled(k) / info[j].divisor);
    }
}

nlohmann::ordered_json FitSummary::to_json() const {
    nlohmann::ordered_json j;
    j["verdict"] = pass ? "pass" : "fail";
    j["chains"] = chains;
    j["draws_per_chain"] = draws_per_chain;
    j["divergences"] = divergences;
    j["treedepth_saturated"] = treedepth_saturated;
    j["max_treedepth"] = max_treedepth;
    j["mean_accept_stat"] = mean_accept_stat;
    j["rhat_threshold"] = kRhatThreshold;
    j["failing"] = failing;
    j["warnings"] = warnings;
    auto& ps = j["parameters"] = nlohmann::ordered_json::array();
    for (const auto& p : parameters) {
        nlohmann::ordered_json r;
        r["name"] = p.name;
        r["mean"] = p.mean;
        r["sd"] = p.sd;
        r["median"] = p.median;
        r["q2.5"] = p.q025;
        r["q97.5"] = p.q975;
        r["ess"] = p.ess;
        r["rhat"] = p.rhat;
        ps.push_back(std::move(r));
    }
    auto& ns = j["natural_scale"] = nlohmann::ordered_json::array();
    for (const auto& c : natural) {
        nlohmann::ordered_json r;
        r["name"] = c.name;
        r["unit"] = c.unit;
        r["mean"] = c.mean;
        r["median"] = c.median;
        r["q2.5"] = c.q025;
        r["q97.5"] = c.q975;
        ns.push_back(std::move(r));
    }
    return j;
}

std::string FitSummary::to_text() const {
    std::size_t width = 9;
    for (const auto& p : parameters) width = std::max(width, p.name.size());
    std::ostringstream os;
    os << std::fixed;
    os << std::left << std::setw(static_cast<int>(width)) << "parameter" << std::right;
    for (const char* h : {"mean", "sd", "median", "2.5%", "97.5%", "ess", "rhat"}) os << std::setw(10) << h;
    os << '\n';
    for (const auto& p : parameters) {
        os << std::left << std::setw(static_cast<int>(width)) << p.name << std::right << std::setprecision(3);
        for (double v : {p.mean, p.sd, p.median, p.q025, p.q975}) os << std::setw(10) << v;
        os << std::setw(10) << std::setprecision(0) << p.ess << std::setw(10) << std::setprecision(3) << p.rhat << '\n';
    }
    os << "\nchains " << chains << ", draws per chain " << draws_per_chain << ", divergences " << divergences
       << ", max tree depth hits " << treedepth_saturated << ", mean accept " << std::setprecision(3)
       << mean_accept_stat << '\n';
    for (const auto& w : warnings) os << "warning: " << w << '\n';
    os << "verdict: " << (pass ? "pass" : "fail");
    if (!failing.empty()) {
        os << " (R-hat >= 1.1:";
        for (const auto& f : failing) os << ' ' << f;
        os << ')';
    }
    os << '\n';
    return os.str();
}

namespace {

/// Linear predictor for one constrained draw laid out as
/// [b_Intercept, b..., per block: sd (q), cor (q(q-1)/2), r (groups x q)].
Eigen::VectorXd eta_from_constrained(const Eigen::Ref<const Eigen::VectorXd>& v, const DesignMatrices& design) {
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(design.n(), v(0));
    const int p = design.p();
    if (p > 0) eta.noalias() += design.X * v.segment(1, p);
    Eigen::Index off = 1 + p;
    for (const auto& rd : design.blocks) {
        const int q = rd.q();
        off += q + q * (q - 1) / 2;
        for (int i = 0; i < design.n(); ++i) {
            const Eigen::Index base = off + static_cast<Eigen::Index>(rd.group_index[i]) * q;
            double acc = 0.0;
            for (int k = 0; k < q; ++k) acc += rd.Z(i, k) * v(base + k);
            eta(i) += acc;
        }
        off += static_cast<Eigen::Index>(rd.groups()) * q;
    }
    return eta;
}

}  // namespace

PpcResult posterior_predictive(const std::vector<Eigen::MatrixXd>& chains, const DesignMatrices& design,
                               std::uint64_t seed, int n_rep, Execution exec) {
    Eigen::Index total = 0;
    for (const auto& c : chains) total += c.rows();
    if (total == 0) throw ConfigError("posterior predictive check needs draws");
    if (n_rep < 1 || n_rep > total) throw ConfigError("replicate count must be in [1, available draws]");
    const int n = design.n();

    std::vector<std::pair<std::size_t, Eigen::Index>> picks;
    for (int k = 0; k < n_rep; ++k) {
        Eigen::Index flat = static_cast<Eigen::Index>((static_cast<double>(k) * static_cast<double>(total)) / n_rep);
        std::size_t c = 0;
        while (flat >= chains[c].rows()) {
            flat -= chains[c].rows();
            ++c;
        }
        picks.emplace_back(c, flat);
    }

    std::size_t total_groups = 0;
    for (const auto& rd : design.blocks) total_groups += static_cast<std::size_t>(rd.groups());

    PpcResult out;
    out.observed = design.y.mean();
    out.replicated.assign(static_cast<std::size_t>(n_rep), 0.0);
    Eigen::MatrixXd rep_groups(n_rep, static_cast<Eigen::Index>(total_groups));

    for_each_index(n_rep, exec, [&](int k) {
        const auto [c, row] = picks[static_cast<std::size_t>(k)];
        const Eigen::VectorXd eta = eta_from_constrained(chains[c].row(row).transpose(), design);
        Rng rng(seed, static_cast<std::uint64_t>(k));
        std::vector<int> yrep(static_cast<std::size_t>(n));
        int ones = 0;
        for (int i = 0; i < n; ++i) {
            yrep[static_cast<std::size_t>(i)] = rng.bernoulli(inv_logit(eta(i))) ? 1 : 0;
            ones += yrep[static_cast<std::size_t>(i)];
        }
        out.replicated[static_cast<std::size_t>(k)] = static_cast<double>(ones) / n;
        Eigen::Index g0 = 0;
        for (const auto& rd : design.blocks) {
            std::vector<int> cnt(static_cast<std::size_t>(rd.groups()), 0), succ(static_cast<std::size_t>(rd.groups()), 0);
            for (int i = 0; i < n; ++i) {
                ++cnt[static_cast<std::size_t>(rd.group_index[i])];
                succ[static_cast<std::size_t>(rd.group_index[i])] += yrep[static_cast<std::size_t>(i)];
            }
            for (int g = 0; g < rd.groups(); ++g)
                rep_groups(k, g0 + g) = cnt[static_cast<std::size_t>(g)]
                                            ? static_cast<double>(succ[static_cast<std::size_t>(g)]) / cnt[static_cast<std::size_t>(g)]
                                            : 0.0;
            g0 += rd.groups();
        }
    });

    std::vector<double> sorted = out.replicated;
    std::sort(sorted.begin(), sorted.end());
    out.rep_q025 = quantile_sorted(sorted, 0.025);
    out.rep_q975 = quantile_sorted(sorted, 0.975);

    Eigen::Index g0 = 0;
    for (const auto& rd : design.blocks) {
        std::vector<int> cnt(static_cast<std::size_t>(rd.groups()), 0);
        std::vector<double> succ(static_cast<std::size_t>(rd.groups()), 0.0);
        for (int i = 0; i < n; ++i) {
            ++cnt[static_cast<std::size_t>(rd.group_index[i])];
            succ[static_cast<std::size_t>(rd.group_index[i])] += design.y(i);
        }
        for (int g = 0; g < rd.groups(); ++g) {
            GroupPpc gp;
            gp.block = rd.group;
            gp.level = rd.group_levels[static_cast<std::size_t>(g)];
            gp.count = cnt[static_cast<std::size_t>(g)];
            gp.observed = gp.count ? succ[static_cast<std::size_t>(g)] / gp.count : 0.0;
            std::vector<double> col(rep_groups.col(g0 + g).data(), rep_groups.col(g0 + g).data() + n_rep);
            std::sort(col.begin(), col.end());
            gp.rep_q025 = quantile_sorted(col, 0.025);
            gp.rep_median = quantile_sorted(col, 0.5);
            gp.rep_q975 = quantile_sorted(col, 0.975);
            out.groups.push_back(gp);
        }
        g0 += rd.groups();
    }

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(chains.front().cols());
    for (const auto& c : chains) mean += c.colwise().sum().transpose();
    mean /= static_cast<double>(total);
    const Eigen::VectorXd eta = eta_from_constrained(mean, design);
    out.fitted = eta.unaryExpr([](double e) { return inv_logit(e); });
    return out;
}

std::string trace_csv(const std::vector<Eigen::MatrixXd>& chains, const std::vector<std::string>& names,
                      int max_per_chain) {
    std::ostringstream os;
    os << "chain,iteration";
    for (const auto& n : names) os << ',' << csv_escape(n);
    os << '\n';
    for (std::size_t c = 0; c < chains.size(); ++c) {
        const Eigen::Index rows = chains[c].rows();
        const Eigen::Index stride = std::max<Eigen::Index>(1, (rows + max_per_chain - 1) / max_per_chain);
        for (Eigen::Index i = 0; i < rows; i += stride) {
            os << (c + 1) << ',' << (i + 1);
            for (Eigen::Index j = 0; j < chains[c].cols(); ++j) os << ',' << format_double(chains[c](i, j));
            os << '\n';
        }
    }
    return os.str();
}

std::string density_csv(const std::vector<Eigen::MatrixXd>& chains, const std::vector<std::string>& names,
                        int points) {
    const int np = static_cast<int>(names.size());
    std::vector<std::string> blocks(static_cast<std::size_t>(np));
    for_each_index(np, Execution::Parallel, [&](int j) {
        const std::vector<double> x = pooled_sorted(column(chains, j));
        const double nd = static_cast<double>(x.size());
        const double sd = std::sqrt(sample_variance(x.data(), static_cast<Eigen::Index>(x.size())));
        const double iqr = quantile_sorted(x, 0.75) - quantile_sorted(x, 0.25);
        double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
        double bw = 0.9 * spread * std::pow(nd, -0.2);
        if (!(bw > 0.0)) bw = 1e-3 * std::max(1.0, std::abs(x.front()));
        const double lo = x.front() - 3.0 * bw, hi = x.back() + 3.0 * bw;
        std::ostringstream os;
        const double norm = 1.0 / (nd * bw * std::sqrt(2.0 * kPi));
        for (int k = 0; k < points; ++k) {
            const double g = points > 1 ? lo + (hi - lo) * k / (points - 1) : lo;
            double d = 0.0;
            for (double v : x) {
                const double u = (g - v) / bw;
                d += std::exp(-0.5 * u * u);
            }
            os << csv_escape(names[static_cast<std::size_t>(j)]) << ',' << format_double(g) << ','
               << format_double(d * norm) << '\n';
        }
        blocks[static_cast<std::size_t>(j)] = os.str();
    });
    std::string out = "parameter,x,density\n";
    for (const auto& b : blocks) out += b;
    return out;
}

}  // namespace sepfit
