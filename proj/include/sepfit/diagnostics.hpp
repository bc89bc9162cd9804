#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sepfit/design.hpp"
#include "sepfit/execution.hpp"
#include "sepfit/rng.hpp"

namespace sepfit {

/// One parameter's draws, one vector per chain.
using ChainSeries = std::vector<Eigen::VectorXd>;

/// Split-chain potential scale reduction (classic, not rank-normalized).
/// NaN when the within-chain variance is zero.
double split_rhat(const ChainSeries& chains);

/// Autocorrelation ESS with Geyer's initial positive and monotone sequence,
/// autocovariances pooled across chains. NaN for a constant parameter.
double effective_sample_size(const ChainSeries& chains);

/// Type-7 quantile (linear interpolation of order statistics) of sorted data.
double quantile_sorted(const std::vector<double>& sorted, double prob);

struct ParameterSummary {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    double median = 0.0;
    double q025 = 0.0;
    double q975 = 0.0;
    double ess = 0.0;
    double rhat = 0.0;
};

/// Fixed-effect summary back-transformed to natural predictor units.
struct NaturalCoefficient {
    std::string name;
    std::string unit;  // "per unit", "contrast", "per unit product", "log-odds"
    double mean = 0.0;
    double median = 0.0;
    double q025 = 0.0;
    double q975 = 0.0;
};

struct FitSummary {
    std::vector<ParameterSummary> parameters;
    std::vector<NaturalCoefficient> natural;
    int chains = 0;
    int draws_per_chain = 0;
    int divergences = 0;
    int treedepth_saturated = 0;
    int max_treedepth = 0;
    double mean_accept_stat = 0.0;
    std::vector<std::string> warnings;
    std::vector<std::string> failing;  // parameters with R-hat >= 1.1
    bool pass = false;

    const ParameterSummary& at(const std::string& name) const;
    nlohmann::ordered_json to_json() const;
    std::string to_text() const;
};

inline constexpr double kRhatThreshold = 1.1;

struct RunStats {
    int divergences = 0;
    int treedepth_saturated = 0;
    int max_treedepth = 0;
    double mean_accept_stat = 0.0;
};

/// Summaries of every column of the per-chain draw matrices (draws x params).
/// Verdict: pass iff divergences == 0 and every defined R-hat < 1.1;
/// constant parameters get a warning and are left out of the verdict.
FitSummary summarize(const std::vector<Eigen::MatrixXd>& chains, const std::vector<std::string>& names,
                     const RunStats& stats, Execution exec = Execution::Parallel);

/// Adds the natural-scale table for the b_ parameters: covariate columns are
/// divided by their divisors (products of divisors for interactions), factor
/// contrast columns are unchanged, and the intercept is shifted back to raw
/// covariate origins when no interaction involves a covariate.
void add_natural_scale(FitSummary& summary, const std::vector<Eigen::MatrixXd>& chains,
                       const std::vector<std::string>& names, const DesignMatrices& design);

struct GroupPpc {
    std::string block;
    std::string level;
    int count = 0;
    double observed = 0.0;
    double rep_q025 = 0.0;
    double rep_median = 0.0;
    double rep_q975 = 0.0;
};

struct PpcResult {
    double observed = 0.0;
    std::vector<double> replicated;  // overall proportion per replicate
    std::vector<GroupPpc> groups;
    Eigen::VectorXd fitted;          // p per observation at the posterior mean
    double rep_q025 = 0.0;
    double rep_q975 = 0.0;
};

/// Replicates y from `n_rep` posterior draws spaced evenly over the pooled
/// chains. Each replicate uses its own RNG stream keyed by (seed, index).
/// `chains` are constrained draws in LogPosterior::constrained_names order.
PpcResult posterior_predictive(const std::vector<Eigen::MatrixXd>& chains, const DesignMatrices& design,
                               std::uint64_t seed, int n_rep, Execution exec = Execution::Parallel);

/// Every `stride`-th draw so that at most `max_per_chain` rows remain per chain.
/// Columns: chain, iteration, then one column per name.
std::string trace_csv(const std::vector<Eigen::MatrixXd>& chains, const std::vector<std::string>& names,
                      int max_per_chain = 250);

/// Gaussian kernel density on a `points`-point grid per parameter, Silverman
/// bandwidth, pooled chains. Columns: parameter, x, density.
std::string density_csv(const std::vector<Eigen::MatrixXd>& chains, const std::vector<std::string>& names,
                        int points = 128);

}  // namespace sepfit
