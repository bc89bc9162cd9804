#pragma once

#include <Eigen/Dense>

namespace sepfit {

// All densities are normalized (additive constants retained).

double cauchy_lpdf(double x, double location, double scale);
double cauchy_cdf(double x, double location, double scale);

/// Cauchy(0, scale) folded onto [0, inf).
double half_cauchy_lpdf(double x, double scale);
double half_cauchy_cdf(double x, double scale);
double half_cauchy_quantile(double p, double scale);

double std_normal_lpdf(double x);

double beta_lpdf(double x, double a, double b);

/// log of the LKJ normalizing constant for K x K correlation matrices.
double lkj_log_normalizer(int K, double eta);

/// LKJ(eta) log density of a correlation matrix: (eta - 1) log det(Omega) - log c_K(eta).
double lkj_corr_lpdf(const Eigen::MatrixXd& omega, double eta);

/// Log density of the Cholesky factor L of an LKJ(eta) correlation matrix,
/// including the Omega -> L Jacobian: sum_d (K - d - 1 + 2 eta - 2) log L_dd
/// over 0-based d, minus log c_K(eta).
double lkj_corr_cholesky_lpdf(const Eigen::MatrixXd& L, double eta);

}  // namespace sepfit
