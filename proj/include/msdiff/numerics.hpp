#pragma once

// Small numeric kernels shared across the library: stable logistic-scale
// helpers, log pmfs/densities, log-sum-exp.

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>

namespace msdiff {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLogTwoPi = 1.8378770664093454836;

// log(1 + exp(x)) without overflow for large |x|
inline double log1pexp(double x) {
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double logistic(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log logistic(x) and log (1 - logistic(x))
inline double log_logistic(double x) { return -log1pexp(-x); }
inline double log_logistic_c(double x) { return -log1pexp(x); }

inline double log_poisson_pmf(double k, double lambda) {
    if (lambda <= 0.0) return k == 0.0 ? 0.0 : kNegInf;
    return k * std::log(lambda) - lambda - std::lgamma(k + 1.0);
}

// Binomial log pmf parameterized by the logit of the success probability.
// Zero-trial observations carry no information and contribute 0.
inline double log_binomial_pmf_logit(double k, double n, double logit_p) {
    if (n <= 0.0) return 0.0;
    const double log_p = log_logistic(logit_p);
    const double log_q = log_logistic_c(logit_p);
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0)
         + k * log_p + (n - k) * log_q;
}

inline double log_normal_pdf(double x, double mean, double variance) {
    if (!(variance > 0.0)) {
        if (std::isinf(variance)) return kNegInf;
        throw std::invalid_argument("log_normal_pdf: variance must be positive");
    }
    const double d = x - mean;
    return -0.5 * (kLogTwoPi + std::log(variance)) - 0.5 * d * d / variance;
}

inline double log_sum_exp(std::span<const double> v) {
    double m = kNegInf;
    for (double x : v) m = std::max(m, x);
    if (std::isinf(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace msdiff
