#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sepfit/design.hpp"

namespace sepfit {

/// How random-effects groupings enter the frequentist logistic GLM.
///  Ignore: fixed effects only (complete pooling).
///  Fixed:  each grouping factor and its products with the block's slope
///          columns become sum-coded fixed effects (no pooling); columns
///          aliased with earlier ones are dropped.
enum class GroupHandling { Ignore, Fixed };

/// Model matrix for IRLS with the intercept in column 0.
struct GlmDesign {
    Eigen::MatrixXd A;
    Eigen::VectorXd y;
    std::vector<std::string> names;
    std::vector<std::string> dropped;  // aliased columns removed (Fixed only)
};

GlmDesign glm_design(const DesignMatrices& design, GroupHandling groups = GroupHandling::Ignore);

struct GlmOptions {
    double tol = 1e-8;  // max |coefficient update|
    int max_iter = 100;
};

struct GlmFit {
    std::vector<std::string> names;
    Eigen::VectorXd coefficients;  // intercept first; standardized scale, log-odds
    Eigen::VectorXd std_errors;
    int iterations = 0;
    bool converged = false;
    std::vector<double> norm_trajectory;     // L2 norm of coefficients after each iteration
    std::vector<double> max_abs_trajectory;  // max |coefficient| after each iteration
    std::vector<double> loglik_trajectory;
    double deviance = 0.0;
    std::string note;

    nlohmann::ordered_json to_json() const;
};

/// Fisher scoring from zero. Throws DataError if `design.A` is not of full
/// column rank; weight underflow or a singular information matrix ends the
/// fit as non-converged.
GlmFit fit_glm_irls(const GlmDesign& design, const GlmOptions& options = {});

/// Bernoulli-logit log-likelihood of coefficients `beta` (intercept in A).
double logistic_loglik(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, const Eigen::VectorXd& beta);

enum class DivergenceVerdict { Converged, Diverging, Stalled };
const char* to_string(DivergenceVerdict v);

/// Coefficient magnitude beyond which a non-converged fit counts as
/// diverging (standardized scale: a 16 log-odds swing across a +/-0.5 contrast).
inline constexpr double kDivergenceThreshold = 8.0;

/// Diverging iff not converged, max |coefficient| > threshold, and the
/// coefficient norm rose strictly over each of the last 5 iterations.
DivergenceVerdict detect_mle_divergence(const GlmFit& fit, double threshold = kDivergenceThreshold);

struct LaplaceOptions {
    double tol = 1e-6;  // max |gradient| of the approximate marginal log-likelihood
    int max_iter = 500;
    std::optional<double> fixed_sigma;  // hold sigma at this value (may be 0)
    double boundary_sigma = 1e-3;       // sigma below this is reported as a boundary fit
};

struct LaplaceFit {
    std::vector<std::string> names;
    Eigen::VectorXd beta;         // intercept first
    double sigma = 0.0;
    Eigen::VectorXd group_modes;  // modal random intercepts u_g
    std::vector<std::string> group_levels;
    bool converged = false;
    bool boundary = false;
    double log_likelihood = 0.0;  // Laplace approximation
    double gradient_max_norm = 0.0;
    int iterations = 0;
    std::string note;

    nlohmann::ordered_json to_json() const;
};

/// Random-intercept logistic GLMM by the Laplace approximation.
/// Inner: Newton on each group's standardized mode given (beta, sigma).
/// Outer: BFGS on (beta, log sigma) with analytic gradients.
LaplaceFit fit_glmm_laplace(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, const std::vector<int>& group_index,
                            int groups, const LaplaceOptions& options = {});

/// Uses the design's first random block's grouping (its intercept only) and
/// the fixed columns. `reduced` reports whether slopes or further blocks were dropped.
LaplaceFit fit_glmm_laplace(const DesignMatrices& design, const LaplaceOptions& options, bool* reduced = nullptr);

}  // namespace sepfit
