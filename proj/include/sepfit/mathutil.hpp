#pragma once

#include <cmath>
#include <limits>

namespace sepfit {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLogPi = 1.14472988584940017414;
inline constexpr double kLog2 = 0.69314718055994530942;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

/// log(1 + exp(x)) without overflow.
inline double log1p_exp(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double inv_logit(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// y * eta - log(1 + exp(eta)); exact for |eta| large.
inline double bernoulli_logit_lpmf(double y, double eta) { return y * eta - log1p_exp(eta); }

/// log(1 - tanh(x)^2), finite for every finite x.
inline double log1m_tanh_sq(double x) {
    const double a = std::abs(x);
    return 2.0 * (kLog2 - a - std::log1p(std::exp(-2.0 * a)));
}

inline double log_sum_exp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace sepfit
