#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sepfit/execution.hpp"
#include "sepfit/rng.hpp"

namespace sepfit {

class LogPosterior;

struct SamplerConfig {
    int chains = 4;
    int iterations = 2000;  // per chain, warmup included
    int warmup = 1000;
    double adapt_delta = 0.8;
    int max_treedepth = 10;
    double max_energy_error = 1000.0;
    std::uint64_t seed = 20240101;
    Execution execution = Execution::Parallel;

    void validate() const;
};

/// Log density with gradient over R^dim. Must be safe to call concurrently.
struct Target {
    Eigen::Index dim = 0;
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)> log_density;
    std::vector<std::string> names;  // optional, used in error messages
};

Target make_target(const LogPosterior& posterior);

struct TransitionStats {
    double accept_stat = 0.0;
    int treedepth = 0;
    int n_leapfrog = 0;
    bool divergent = false;
    double energy = 0.0;
    double step_size = 0.0;
};

/// Position, momentum, gradient and log density at one point of phase space.
struct PhasePoint {
    Eigen::VectorXd q, p, grad;
    double logp = 0.0;
};

/// One multinomial NUTS transition with a diagonal metric. `point` is
/// updated in place to the selected state.
TransitionStats nuts_transition(PhasePoint& point, const Target& target, double step_size,
                                const Eigen::VectorXd& inv_mass, int max_treedepth, double max_energy_error,
                                Rng& rng);

/// Doubles or halves `step_size` until one leapfrog step crosses an
/// acceptance probability of 0.5.
double initial_step_size(const PhasePoint& point, const Target& target, double step_size,
                         const Eigen::VectorXd& inv_mass, Rng& rng);

/// Step-size dual averaging.
class DualAveraging {
public:
    DualAveraging(double delta, double gamma = 0.05, double t0 = 10.0, double kappa = 0.75)
        : delta_(delta), gamma_(gamma), t0_(t0), kappa_(kappa) {}

    void restart(double step_size);
    double update(double accept_stat);
    double final_step_size() const { return std::exp(x_bar_); }

private:
    double delta_, gamma_, t0_, kappa_;
    double mu_ = 0.0, s_bar_ = 0.0, x_bar_ = 0.0;
    int counter_ = 0;
};

/// Half-open warmup iteration ranges over which the metric is estimated.
struct MetricWindow {
    int begin = 0;
    int end = 0;
};

/// 75 initial step-size iterations, windows of 25 doubling, 50 terminal
/// iterations; the last window absorbs any remainder.
std::vector<MetricWindow> warmup_windows(int warmup);

struct ChainDraws {
    Eigen::MatrixXd draws;  // post-warmup draws x dim, unconstrained
    std::vector<TransitionStats> stats;
    Eigen::VectorXd init;
    double step_size = 0.0;
    Eigen::VectorXd inv_mass;
    int warmup_divergences = 0;
};

struct PosteriorDraws {
    std::vector<ChainDraws> chains;
    std::vector<std::string> names;

    Eigen::Index draws_per_chain() const { return chains.empty() ? 0 : chains.front().draws.rows(); }
    int divergences() const;
    int treedepth_saturated(int max_treedepth) const;
    double mean_accept_stat() const;
};

/// Runs one chain: initialization, warmup adaptation, sampling.
ChainDraws run_chain(const Target& target, const SamplerConfig& config, int chain_index);

/// Runs all chains, in parallel or serially. Results are identical either way.
PosteriorDraws run_chains(const Target& target, const SamplerConfig& config);

/// Per chain, draws mapped to the constrained quantities of `posterior`.
std::vector<Eigen::MatrixXd> constrained_draws(const PosteriorDraws& draws, const LogPosterior& posterior,
                                               Execution exec = Execution::Parallel);

}  // namespace sepfit
