#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sepfit/design.hpp"

namespace sepfit {

/// Weakly informative prior stack, all location 0:
///   intercept ~ Cauchy(0, intercept_scale)
///   beta_k    ~ Cauchy(0, beta_scale), independent
///   sigma_k   ~ HalfCauchy(0, sd_scale)
///   Omega     ~ LKJ(lkj_eta)
///   z         ~ Normal(0, 1), u_g = diag(sigma) L z_g
struct PriorConfig {
    double intercept_scale = 2.5;
    double beta_scale = 4.0;
    double sd_scale = 2.0;
    double lkj_eta = 2.0;

    void validate() const;
};

/// Offsets of one random block inside the unconstrained vector.
struct BlockLayout {
    int q = 0;
    int groups = 0;
    Eigen::Index log_sigma = 0;  // q entries
    Eigen::Index cpc = 0;        // q(q-1)/2 entries, row-wise below the diagonal
    Eigen::Index z = 0;          // groups * q entries, group-major
};

/// Unconstrained coordinates: [intercept, beta (p), per block: log sigma,
/// correlation angles, raw effects z].
class ParameterLayout {
public:
    ParameterLayout() = default;
    explicit ParameterLayout(const DesignMatrices& design);
    ParameterLayout(int p, std::vector<std::pair<int, int>> blocks_q_groups);

    Eigen::Index dim() const { return dim_; }
    int p() const { return p_; }
    const std::vector<BlockLayout>& blocks() const { return blocks_; }

private:
    int p_ = 0;
    std::vector<BlockLayout> blocks_;
    Eigen::Index dim_ = 1;
};

struct BlockParams {
    Eigen::VectorXd sigma;
    Eigen::MatrixXd L;      // Cholesky factor of Omega
    Eigen::MatrixXd Omega;
    Eigen::MatrixXd Sigma;  // diag(sigma) Omega diag(sigma)
    Eigen::MatrixXd z;      // groups x q
    Eigen::MatrixXd u;      // groups x q, row g = (diag(sigma) L z_g)^T
};

struct ConstrainedParams {
    double intercept = 0.0;
    Eigen::VectorXd beta;
    std::vector<BlockParams> blocks;
};

struct Transformed {
    ConstrainedParams params;
    double log_jacobian = 0.0;
};

/// Canonical-partial-correlation construction: tanh maps each angle to a
/// partial correlation, rows of L are filled left to right. `log_jacobian`
/// (optional) receives log |d L / d angles|.
Eigen::MatrixXd cholesky_corr_from_unconstrained(const Eigen::Ref<const Eigen::VectorXd>& angles, int q,
                                                 double* log_jacobian = nullptr);

Transformed transform(const ParameterLayout& layout, const Eigen::Ref<const Eigen::VectorXd>& x);

double log_prior(const ConstrainedParams& params, const PriorConfig& config);

/// Sum of Bernoulli-logit log probabilities, stable for large |eta|.
double log_likelihood(const ConstrainedParams& params, const DesignMatrices& design);

/// Linear predictor intercept + X beta + sum_b Z_b u_b[group].
Eigen::VectorXd linear_predictor(const ConstrainedParams& params, const DesignMatrices& design);

/// Log posterior (prior + likelihood + log Jacobian) over the unconstrained
/// coordinates with its exact gradient. Holds a reference to the design,
/// which must outlive it. Reentrant: concurrent calls are safe.
class LogPosterior {
public:
    LogPosterior(const DesignMatrices& design, PriorConfig config);

    Eigen::Index dim() const { return layout_.dim(); }
    const ParameterLayout& layout() const { return layout_; }
    const DesignMatrices& design() const { return design_; }
    const PriorConfig& config() const { return config_; }

    double operator()(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> grad) const;
    double value(const Eigen::Ref<const Eigen::VectorXd>& x) const;

    /// Names of the constrained quantities reported per draw, in order:
    /// b_Intercept, b_<column>..., then per block sd_<g>__<coef>...,
    /// cor_<g>__<coef_i>__<coef_j>... (i < j), r_<g>[<level>,<coef>]...
    std::vector<std::string> constrained_names() const;
    Eigen::VectorXd constrained_values(const Eigen::Ref<const Eigen::VectorXd>& x) const;

    /// Unconstrained coordinate names, for initialization diagnostics.
    std::vector<std::string> unconstrained_names() const;

private:
    const DesignMatrices& design_;
    PriorConfig config_;
    ParameterLayout layout_;
};

}  // namespace sepfit
