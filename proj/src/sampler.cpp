#include "sepfit/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include "sepfit/error.hpp"
#include "sepfit/mathutil.hpp"
#include "sepfit/posterior.hpp"

namespace sepfit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double safe_log_density(const Target& target, const Eigen::VectorXd& q, Eigen::VectorXd& grad) {
    double lp;
    try {
        lp = target.log_density(q, grad);
    } catch (const NumericalError&) {
        return -kInf;
    }
    if (!std::isfinite(lp) || !grad.allFinite()) return -kInf;
    return lp;
}

double hamiltonian(const PhasePoint& z, const Eigen::VectorXd& inv_mass) {
    if (!std::isfinite(z.logp)) return kInf;
    return -z.logp + 0.5 * z.p.dot(inv_mass.cwiseProduct(z.p));
}

void leapfrog(PhasePoint& z, const Target& target, double eps, const Eigen::VectorXd& inv_mass) {
    z.p += 0.5 * eps * z.grad;
    z.q += eps * inv_mass.cwiseProduct(z.p);
    z.logp = safe_log_density(target, z.q, z.grad);
    if (!std::isfinite(z.logp)) return;
    z.p += 0.5 * eps * z.grad;
}

void sample_momentum(PhasePoint& z, const Eigen::VectorXd& inv_mass, Rng& rng) {
    z.p.resize(inv_mass.size());
    for (Eigen::Index i = 0; i < z.p.size(); ++i) z.p(i) = rng.normal() / std::sqrt(inv_mass(i));
}

bool no_u_turn(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus, const Eigen::VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0.0 && p_sharp_minus.dot(rho) > 0.0;
}

/// Recursive trajectory builder. The subtree grows from `z` in direction
/// `sign`; "begin" is the end adjacent to the existing trajectory.
struct TreeBuilder {
    const Target& target;
    const Eigen::VectorXd& inv_mass;
    double eps;
    double H0;
    double max_energy_error;
    Rng& rng;
    int n_leapfrog = 0;
    double sum_metro_prob = 0.0;
    bool divergent = false;

    struct Subtree {
        PhasePoint proposal;
        Eigen::VectorXd rho, p_begin, p_sharp_begin, p_end, p_sharp_end;
        double log_sum_weight = -kInf;
    };

    bool build(int depth, PhasePoint& z, int sign, Subtree& out) {
        if (depth == 0) {
            leapfrog(z, target, sign * eps, inv_mass);
            ++n_leapfrog;
            double h = hamiltonian(z, inv_mass);
            if (std::isnan(h)) h = kInf;
            if (h - H0 > max_energy_error) divergent = true;
            const double dH = H0 - h;
            out.log_sum_weight = dH;
            sum_metro_prob += dH > 0.0 ? 1.0 : std::exp(dH);
            out.proposal = z;
            out.rho = z.p;
            out.p_begin = z.p;
            out.p_end = z.p;
            out.p_sharp_begin = inv_mass.cwiseProduct(z.p);
            out.p_sharp_end = out.p_sharp_begin;
            return !divergent;
        }

        Subtree left;
        if (!build(depth - 1, z, sign, left)) return false;
        Subtree right;
        if (!build(depth - 1, z, sign, right)) return false;

        out.log_sum_weight = log_sum_exp(left.log_sum_weight, right.log_sum_weight);
        if (right.log_sum_weight > out.log_sum_weight) {
            out.proposal = std::move(right.proposal);
        } else if (rng.uniform() < std::exp(right.log_sum_weight - out.log_sum_weight)) {
            out.proposal = std::move(right.proposal);
        } else {
            out.proposal = std::move(left.proposal);
        }

        out.rho = left.rho + right.rho;
        bool persist = no_u_turn(left.p_sharp_begin, right.p_sharp_end, out.rho);
        persist = persist && no_u_turn(left.p_sharp_begin, right.p_sharp_begin, left.rho + right.p_begin);
        persist = persist && no_u_turn(left.p_sharp_end, right.p_sharp_end, right.rho + left.p_end);

        out.p_begin = std::move(left.p_begin);
        out.p_sharp_begin = std::move(left.p_sharp_begin);
        out.p_end = std::move(right.p_end);
        out.p_sharp_end = std::move(right.p_sharp_end);
        return persist;
    }
};

}  // namespace

void SamplerConfig::validate() const {
    if (chains < 1) throw ConfigError("chains must be at least 1");
    if (iterations < 1) throw ConfigError("iterations must be at least 1");
    if (warmup < 0 || warmup >= iterations) throw ConfigError("warmup must be in [0, iterations)");
    if (!(adapt_delta > 0.0 && adapt_delta < 1.0)) throw ConfigError("adapt_delta must lie in (0, 1)");
    if (max_treedepth < 1) throw ConfigError("max_treedepth must be at least 1");
    if (!(max_energy_error > 0.0)) throw ConfigError("divergence threshold must be positive");
    if (warmup > 0 && warmup < 150)
        throw ConfigError("warmup of " + std::to_string(warmup) +
                          " is too short for the adaptation schedule (need at least 150)");
}

Target make_target(const LogPosterior& posterior) {
    Target t;
    t.dim = posterior.dim();
    t.log_density = [&posterior](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return posterior(x, g); };
    t.names = posterior.unconstrained_names();
    return t;
}

TransitionStats nuts_transition(PhasePoint& point, const Target& target, double step_size,
                                const Eigen::VectorXd& inv_mass, int max_treedepth, double max_energy_error,
                                Rng& rng) {
    sample_momentum(point, inv_mass, rng);
    const double H0 = hamiltonian(point, inv_mass);

    PhasePoint z_fwd = point, z_bck = point;
    PhasePoint z_sample = point;
    Eigen::VectorXd p_fwd = point.p, p_bck = point.p;
    Eigen::VectorXd p_sharp_fwd = inv_mass.cwiseProduct(point.p), p_sharp_bck = p_sharp_fwd;
    Eigen::VectorXd rho = point.p;
    double log_sum_weight = 0.0;

    TreeBuilder builder{target, inv_mass, step_size, H0, max_energy_error, rng};
    int depth = 0;
    while (depth < max_treedepth) {
        TreeBuilder::Subtree sub;
        bool valid;
        const bool forward = rng.uniform() > 0.5;
        if (forward) {
            valid = builder.build(depth, z_fwd, +1, sub);
        } else {
            valid = builder.build(depth, z_bck, -1, sub);
        }
        if (!valid) break;
        ++depth;

        if (sub.log_sum_weight > log_sum_weight) {
            z_sample = sub.proposal;
        } else if (rng.uniform() < std::exp(sub.log_sum_weight - log_sum_weight)) {
            z_sample = sub.proposal;
        }
        log_sum_weight = log_sum_exp(log_sum_weight, sub.log_sum_weight);

        const Eigen::VectorXd rho_old = rho;
        rho = rho_old + sub.rho;
        bool persist;
        if (forward) {
            persist = no_u_turn(p_sharp_bck, sub.p_sharp_end, rho);
            persist = persist && no_u_turn(p_sharp_bck, sub.p_sharp_begin, rho_old + sub.p_begin);
            persist = persist && no_u_turn(p_sharp_fwd, sub.p_sharp_end, sub.rho + p_fwd);
            p_fwd = sub.p_end;
            p_sharp_fwd = sub.p_sharp_end;
        } else {
            persist = no_u_turn(sub.p_sharp_end, p_sharp_fwd, rho);
            persist = persist && no_u_turn(sub.p_sharp_begin, p_sharp_fwd, rho_old + sub.p_begin);
            persist = persist && no_u_turn(sub.p_sharp_end, p_sharp_bck, sub.rho + p_bck);
            p_bck = sub.p_end;
            p_sharp_bck = sub.p_sharp_end;
        }
        if (!persist) break;
    }

    TransitionStats stats;
    stats.treedepth = depth;
    stats.n_leapfrog = builder.n_leapfrog;
    stats.divergent = builder.divergent;
    stats.accept_stat = builder.n_leapfrog > 0 ? builder.sum_metro_prob / builder.n_leapfrog : 0.0;
    stats.step_size = step_size;
    point.q = z_sample.q;
    point.grad = z_sample.grad;
    point.logp = z_sample.logp;
    point.p = z_sample.p;
    stats.energy = hamiltonian(point, inv_mass);
    return stats;
}

double initial_step_size(const PhasePoint& start, const Target& target, double step_size,
                         const Eigen::VectorXd& inv_mass, Rng& rng) {
    const double log_target = std::log(0.5);
    int direction = 0;
    double eps = step_size;
    for (int attempt = 0; attempt < 200; ++attempt) {
        PhasePoint z = start;
        sample_momentum(z, inv_mass, rng);
        const double H0 = hamiltonian(z, inv_mass);
        leapfrog(z, target, eps, inv_mass);
        double h = hamiltonian(z, inv_mass);
        if (std::isnan(h)) h = kInf;
        const double delta_H = H0 - h;
        if (direction == 0) direction = delta_H > log_target ? 1 : -1;
        if (direction == 1 && !(delta_H > log_target)) break;
        if (direction == -1 && !(delta_H < log_target)) break;
        eps = direction == 1 ? 2.0 * eps : 0.5 * eps;
        if (eps > 1e7) throw NumericalError("sampler", "step size diverged to infinity; posterior may be improper");
        if (eps < 1e-300) throw NumericalError("sampler", "step size collapsed to zero; posterior is ill-conditioned");
    }
    return eps;
}

void DualAveraging::restart(double step_size) {
    mu_ = std::log(10.0 * step_size);
    s_bar_ = 0.0;
    x_bar_ = 0.0;
    counter_ = 0;
}

double DualAveraging::update(double accept_stat) {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    const double t = static_cast<double>(counter_);
    const double eta = 1.0 / (t + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(t) / gamma_;
    const double x_eta = std::pow(t, -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
}

std::vector<MetricWindow> warmup_windows(int warmup) {
    constexpr int kInitBuffer = 75, kTermBuffer = 50, kBaseWindow = 25;
    std::vector<MetricWindow> out;
    const int last = warmup - kTermBuffer;
    int begin = kInitBuffer;
    int size = kBaseWindow;
    while (begin < last) {
        int end = begin + size;
        if (end + 2 * size > last) end = last;
        out.push_back({begin, end});
        begin = end;
        size *= 2;
    }
    return out;
}

ChainDraws run_chain(const Target& target, const SamplerConfig& config, int chain_index) {
    Rng rng(config.seed, static_cast<std::uint64_t>(chain_index));
    const Eigen::Index dim = target.dim;
    ChainDraws out;

    PhasePoint z;
    z.q.resize(dim);
    z.p = Eigen::VectorXd::Zero(dim);
    z.grad.resize(dim);
    bool ok = false;
    constexpr int kInitAttempts = 100;
    for (int attempt = 0; attempt < kInitAttempts && !ok; ++attempt) {
        for (Eigen::Index i = 0; i < dim; ++i) z.q(i) = rng.uniform(-2.0, 2.0);
        z.logp = safe_log_density(target, z.q, z.grad);
        ok = std::isfinite(z.logp);
    }
    if (!ok) {
        // Worst coordinate: the one whose reset to 0 gives the highest log density
        // at the last attempted point; ties fall back to the largest |q|.
        Eigen::Index worst = 0;
        double best_lp = -kInf, worst_mag = -1.0;
        Eigen::VectorXd g(dim);
        for (Eigen::Index i = 0; i < dim; ++i) {
            Eigen::VectorXd trial = z.q;
            trial(i) = 0.0;
            const double lp = safe_log_density(target, trial, g);
            const double mag = std::abs(z.q(i));
            if (lp > best_lp || (lp == best_lp && mag > worst_mag)) {
                best_lp = lp;
                worst_mag = mag;
                worst = i;
            }
        }
        const std::string name = static_cast<std::size_t>(worst) < target.names.size()
                                     ? target.names[static_cast<std::size_t>(worst)]
                                     : "coordinate " + std::to_string(worst);
        throw NumericalError("sampler", "chain " + std::to_string(chain_index + 1) + ": log density not finite after " +
                                            std::to_string(kInitAttempts) + " initializations; worst coordinate " + name);
    }
    out.init = z.q;

    Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(dim);
    double eps = 1.0;
    if (config.warmup > 0) eps = initial_step_size(z, target, eps, inv_mass, rng);
    DualAveraging da(config.adapt_delta);
    da.restart(eps);

    const auto windows = warmup_windows(config.warmup);
    std::size_t window = 0;
    Eigen::VectorXd w_mean = Eigen::VectorXd::Zero(dim), w_m2 = Eigen::VectorXd::Zero(dim);
    int w_n = 0;

    const int n_sample = config.iterations - config.warmup;
    out.draws.resize(n_sample, dim);
    out.stats.reserve(static_cast<std::size_t>(n_sample));

    for (int it = 0; it < config.iterations; ++it) {
        const bool warm = it < config.warmup;
        TransitionStats st = nuts_transition(z, target, eps, inv_mass, config.max_treedepth, config.max_energy_error, rng);
        if (warm) {
            if (st.divergent) ++out.warmup_divergences;
            eps = da.update(st.accept_stat);
            if (window < windows.size() && it >= windows[window].begin && it < windows[window].end) {
                ++w_n;
                const Eigen::VectorXd delta = z.q - w_mean;
                w_mean += delta / w_n;
                w_m2 += delta.cwiseProduct(z.q - w_mean);
                if (it == windows[window].end - 1) {
                    const double n = w_n;
                    const Eigen::VectorXd var = w_m2 / (n - 1.0);
                    inv_mass = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
                    w_mean.setZero();
                    w_m2.setZero();
                    w_n = 0;
                    ++window;
                    eps = initial_step_size(z, target, eps, inv_mass, rng);
                    da.restart(eps);
                }
            }
            if (it == config.warmup - 1) eps = da.final_step_size();
        } else {
            const int k = it - config.warmup;
            out.draws.row(k) = z.q.transpose();
            out.stats.push_back(st);
        }
    }
    out.step_size = eps;
    out.inv_mass = inv_mass;
    return out;
}

PosteriorDraws run_chains(const Target& target, const SamplerConfig& config) {
    config.validate();
    if (target.dim < 1) throw ConfigError("posterior dimension must be positive");
    PosteriorDraws out;
    out.names = target.names;
    out.chains.resize(static_cast<std::size_t>(config.chains));
    if (config.execution == Execution::Serial) {
        for (int c = 0; c < config.chains; ++c) out.chains[static_cast<std::size_t>(c)] = run_chain(target, config, c);
        return out;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(config.chains));
#pragma omp parallel for schedule(dynamic, 1)
    for (int c = 0; c < config.chains; ++c) {
        try {
            out.chains[static_cast<std::size_t>(c)] = run_chain(target, config, c);
        } catch (...) {
            errors[static_cast<std::size_t>(c)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

int PosteriorDraws::divergences() const {
    int n = 0;
    for (const auto& c : chains)
        for (const auto& s : c.stats) n += s.divergent ? 1 : 0;
    return n;
}

int PosteriorDraws::treedepth_saturated(int max_treedepth) const {
    int n = 0;
    for (const auto& c : chains)
        for (const auto& s : c.stats) n += s.treedepth >= max_treedepth ? 1 : 0;
    return n;
}

double PosteriorDraws::mean_accept_stat() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : chains)
        for (const auto& s : c.stats) {
            sum += s.accept_stat;
            ++n;
        }
    return n ? sum / static_cast<double>(n) : 0.0;
}

std::vector<Eigen::MatrixXd> constrained_draws(const PosteriorDraws& draws, const LogPosterior& posterior, Execution exec) {
    std::vector<Eigen::MatrixXd> out(draws.chains.size());
    const Eigen::Index ncon = static_cast<Eigen::Index>(posterior.constrained_names().size());
    for (std::size_t c = 0; c < draws.chains.size(); ++c) out[c].resize(draws.chains[c].draws.rows(), ncon);
    const auto convert = [&](std::size_t c) {
        const auto& d = draws.chains[c].draws;
        for (Eigen::Index i = 0; i < d.rows(); ++i) out[c].row(i) = posterior.constrained_values(d.row(i).transpose()).transpose();
    };
    if (exec == Execution::Serial) {
        for (std::size_t c = 0; c < out.size(); ++c) convert(c);
    } else {
        const int nc = static_cast<int>(out.size());
#pragma omp parallel for schedule(dynamic, 1)
        for (int c = 0; c < nc; ++c) convert(static_cast<std::size_t>(c));
    }
    return out;
}

}  // namespace sepfit
