#include "sepfit/distributions.hpp"

#include <cmath>
#include <limits>

#include "sepfit/error.hpp"
#include "sepfit/mathutil.hpp"

namespace sepfit {

double cauchy_lpdf(double x, double location, double scale) {
    const double z = (x - location) / scale;
    return -kLogPi - std::log(scale) - std::log1p(z * z);
}

double cauchy_cdf(double x, double location, double scale) { return 0.5 + std::atan((x - location) / scale) / kPi; }

double half_cauchy_lpdf(double x, double scale) {
    if (x < 0.0) return -std::numeric_limits<double>::infinity();
    return kLog2 + cauchy_lpdf(x, 0.0, scale);
}

double half_cauchy_cdf(double x, double scale) {
    if (x <= 0.0) return 0.0;
    return 2.0 / kPi * std::atan(x / scale);
}

double half_cauchy_quantile(double p, double scale) { return scale * std::tan(0.5 * kPi * p); }

double std_normal_lpdf(double x) { return -kLogSqrt2Pi - 0.5 * x * x; }

double beta_lpdf(double x, double a, double b) {
    if (x <= 0.0 || x >= 1.0) return -std::numeric_limits<double>::infinity();
    return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x);
}

double lkj_log_normalizer(int K, double eta) {
    double c = 0.0;
    for (int k = 1; k < K; ++k) {
        const double m = K - k;
        const double a = eta + (m - 1.0) / 2.0;
        const double log_beta = 2.0 * std::lgamma(a) - std::lgamma(2.0 * a);
        c += (2.0 * eta - 2.0 + m) * m * kLog2 + m * log_beta;
    }
    return c;
}

double lkj_corr_lpdf(const Eigen::MatrixXd& omega, double eta) {
    Eigen::LLT<Eigen::MatrixXd> llt(omega);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const Eigen::MatrixXd L = llt.matrixL();
    double log_det = 0.0;
    for (Eigen::Index d = 0; d < L.rows(); ++d) log_det += 2.0 * std::log(L(d, d));
    return (eta - 1.0) * log_det - lkj_log_normalizer(static_cast<int>(omega.rows()), eta);
}

double lkj_corr_cholesky_lpdf(const Eigen::MatrixXd& L, double eta) {
    const Eigen::Index K = L.rows();
    double lp = 0.0;
    for (Eigen::Index d = 1; d < K; ++d) lp += (static_cast<double>(K - d - 1) + 2.0 * eta - 2.0) * std::log(L(d, d));
    return lp - lkj_log_normalizer(static_cast<int>(K), eta);
}

}  // namespace sepfit
